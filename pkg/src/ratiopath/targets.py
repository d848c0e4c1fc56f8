"""The 2D checker benchmark: density, conditioned variants, and exact samplers.

The joint prior is the checkerboard on [-4, 4]^2 (cell size 2, density 1/32 on
odd-parity cells).  Two constraint events drive the benchmark: A = {x >= 0}
(local, acts on x only) and B = {x + y >= 0} (global, couples x and y).  The
target factors as p(x|A) * p(x,y|B) / p(x), which maps onto three experts:
a 2D path for the B-restricted checker and two 1D paths for the conditional
and marginal of x.
"""

from __future__ import annotations

import numpy as np

from ratiopath.composition import Composition, CoordinateLift, ExponentSchedule
from ratiopath.errors import DomainError
from ratiopath.experts import ExpertPath, RectMixture, build_grid_target
from ratiopath.sampler import stream
from ratiopath.schedules import NoiseSchedule

__all__ = [
    "CHECKER_DOMAIN",
    "checker_density",
    "sample_ground_truth",
    "halfplane_box_area",
    "checker_b_box_mass",
    "checker_experts",
    "checker_composition",
    "BENCHMARK_SCHEDULES",
]

CHECKER_DOMAIN = ((-4.0, 4.0), (-4.0, 4.0))
_CELL = 2.0
_DENSITY = 1.0 / 32.0

# benchmark order: 2D p(x,y|B), 1D p(x|A), 1D p(x); schedules per the quantitative
# benchmark configuration (the marginal runs on the non-monotone cubic)
BENCHMARK_SCHEDULES = ("linear", "linear", "custom")

GROUND_TRUTH_KINDS = (
    "checker", "checker_given_a", "checker_given_b", "checker_given_ab",
    "marginal_x", "marginal_x_given_a",
)


def checker_density(x, y):
    """Checkerboard density: 1/32 where floor(x/2) + floor(y/2) is odd, inside the box."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    parity = (np.floor(x / _CELL) + np.floor(y / _CELL)) % 2 != 0
    inside = (x >= -4.0) & (x <= 4.0) & (y >= -4.0) & (y <= 4.0)
    return np.where(parity & inside, _DENSITY, 0.0)


def sample_ground_truth(which, n, seed):
    """Exact samples of the checker and its conditioned variants.

    2D kinds use rejection sampling with a uniform proposal on the domain box;
    the x-marginals are uniform directly (every checker column is half filled).
    Returns an (n, 2) array for 2D kinds and (n, 1) for the marginals.
    """
    if which not in GROUND_TRUTH_KINDS:
        raise DomainError(f"unknown ground-truth kind {which!r}")
    if n < 1:
        raise DomainError("need n >= 1 samples")
    rng = stream(seed, tag=11)
    if which == "marginal_x":
        return rng.uniform(-4.0, 4.0, size=(n, 1))
    if which == "marginal_x_given_a":
        return rng.uniform(0.0, 4.0, size=(n, 1))

    out = np.empty((n, 2))
    got = 0
    while got < n:
        m = max(4 * (n - got), 1024)
        pts = rng.uniform(-4.0, 4.0, size=(m, 2))
        ok = checker_density(pts[:, 0], pts[:, 1]) > 0
        if which in ("checker_given_a", "checker_given_ab"):
            ok &= pts[:, 0] >= 0.0
        if which in ("checker_given_b", "checker_given_ab"):
            ok &= pts[:, 0] + pts[:, 1] >= 0.0
        pts = pts[ok]
        take = min(len(pts), n - got)
        out[got:got + take] = pts[:take]
        got += take
    return out


def halfplane_box_area(x0, x1, y0, y1):
    """Exact area of [x0,x1] x [y0,y1] intersected with {x + y >= 0}."""
    x0, x1 = np.asarray(x0, dtype=float), np.asarray(x1, dtype=float)
    y0, y1 = np.asarray(y0, dtype=float), np.asarray(y1, dtype=float)
    full = (x1 - x0) * (y1 - y0)

    def ramp_sq(s):
        r = np.maximum(0.0, -s)
        return r * r

    below = 0.5 * (ramp_sq(x0 + y0) - ramp_sq(x0 + y1) - ramp_sq(x1 + y0) + ramp_sq(x1 + y1))
    return full - below


def checker_b_box_mass(x0, x1, y0, y1):
    """Exact mass of the B-restricted, renormalized checker over axis boxes.

    The B event removes exactly half the checker mass by point symmetry, so the
    restricted density is 2 * (1/32) = 1/16 on filled cells with x + y >= 0.
    Broadcasts over array inputs.
    """
    x0, x1 = np.asarray(x0, dtype=float), np.asarray(x1, dtype=float)
    y0, y1 = np.asarray(y0, dtype=float), np.asarray(y1, dtype=float)
    total = np.zeros(np.broadcast(x0, x1, y0, y1).shape)
    for i in range(-2, 2):
        for j in range(-2, 2):
            if (i + j) % 2 == 0:
                continue
            cx0 = np.maximum(x0, _CELL * i)
            cx1 = np.minimum(x1, _CELL * (i + 1))
            cy0 = np.maximum(y0, _CELL * j)
            cy1 = np.minimum(y1, _CELL * (j + 1))
            ok = (cx1 > cx0) & (cy1 > cy0)
            if not np.any(ok):
                continue
            area = halfplane_box_area(np.where(ok, cx0, 0.0), np.where(ok, cx1, 1.0),
                                      np.where(ok, cy0, 0.0), np.where(ok, cy1, 1.0))
            total += np.where(ok, area, 0.0)
    return total * (2.0 * _DENSITY)


def _checker_b_density(x, y):
    """Pointwise B-restricted renormalized checker, ties on x+y=0 split evenly."""
    s = np.asarray(x) + np.asarray(y)
    w = np.where(s > 0, 1.0, np.where(s == 0, 0.5, 0.0))
    return 2.0 * checker_density(x, y) * w


def checker_experts(timesteps, schedules=BENCHMARK_SCHEDULES, resolution=384,
                    grid_domain=((-6.0, 6.0), (-6.0, 6.0)), table_dtype=np.float32,
                    t0_eps=5e-4, edge_sigma=0.03):
    """The three benchmark experts in order: 2D p(x,y|B), 1D p(x|A), 1D p(x).

    The 2D expert is a grid oracle built for exactly ``timesteps``; the grid
    resolution keeps cell edges aligned with the checker breakpoints so the
    tabulated target is exact.  The 1D experts carry a small edge smoothing
    comparable to the 2D grid's cell size; like the grid tables it stands in
    for the finite sharpness of a trained score network (exact infinitely
    sharp edges make the late-time importance weights blow up).  Pass
    ``edge_sigma=0`` for the exact closed-form uniforms.
    """
    s2d, s1a, s1m = (NoiseSchedule.from_name(s) for s in schedules)
    grid = build_grid_target(
        _checker_b_density, grid_domain, resolution, timesteps, s2d,
        box_mass=checker_b_box_mass, target_key="checker_given_b",
        table_dtype=table_dtype,
    )
    e_b = ExpertPath(2, s2d, grid, t0_eps=t0_eps)
    e_a = ExpertPath(1, s1a, RectMixture.uniform([0.0], [4.0], edge_sigma), t0_eps=t0_eps)
    e_m = ExpertPath(1, s1m, RectMixture.uniform([-4.0], [4.0], edge_sigma), t0_eps=t0_eps)
    return [e_b, e_a, e_m]


def checker_composition(timesteps, bump=0.0, bump_index=1, schedules=BENCHMARK_SCHEDULES,
                        resolution=384, grid_domain=((-6.0, 6.0), (-6.0, 6.0)),
                        table_dtype=np.float32, experts=None):
    """Benchmark composition with exponents (+1, +1, -1); optional bump on one expert."""
    if experts is None:
        experts = checker_experts(timesteps, schedules, resolution, grid_domain, table_dtype)
    exponents = [ExponentSchedule(1.0), ExponentSchedule(1.0), ExponentSchedule(-1.0)]
    if bump:
        exponents[bump_index] = exponents[bump_index].with_bump(bump)
    lift = CoordinateLift(2, [(0, 1), (0,), (0,)])
    return Composition(experts, exponents, lift)
