"""Exact oracles for expert probability paths generated by X_t = alpha_t X_0 + beta_t X_1.

Four target families are supported at t = 1: isotropic Gaussians, Gaussian
mixtures, axis-aligned uniform-rectangle mixtures, and arbitrary bounded 2D
densities tabulated on a grid.  Every oracle exposes log-density, score,
velocity and their divergences at any t in [0, 1).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.special import log_ndtr, ndtr

from ratiopath.errors import DomainError, ExtrapolationError, PreconditionError
from ratiopath.schedules import NoiseSchedule

__all__ = [
    "IsotropicGaussian",
    "GmmTarget",
    "RectMixture",
    "GridTarget",
    "ExpertPath",
    "build_grid_target",
]

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# target families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IsotropicGaussian:
    """Centered isotropic Gaussian target N(0, variance * I).

    ``initial_variance`` is the variance of the t=0 endpoint; it is 1 for
    standard compositions and only differs in the analytic ratio-of-Gaussians
    counterexamples.
    """

    variance: float
    initial_variance: float = 1.0

    def __post_init__(self):
        if self.variance <= 0 or self.initial_variance <= 0:
            raise DomainError("Gaussian variances must be positive")

    @property
    def mean(self):
        return 0.0

    def key(self):
        return {"family": "isotropic_gaussian", "variance": self.variance,
                "initial_variance": self.initial_variance}


class GmmTarget:
    """Gaussian mixture target: weights w_j, means mu_j, covariances Sigma_j."""

    def __init__(self, weights, means, covs):
        w = np.asarray(weights, dtype=float)
        mu = np.atleast_2d(np.asarray(means, dtype=float))
        C = np.asarray(covs, dtype=float)
        if C.ndim == 2:
            C = C[None, :, :]
        if np.any(w <= 0):
            raise DomainError("GMM weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"GMM weights must sum to 1, got {w.sum()!r}")
        d = mu.shape[1]
        if C.shape != (mu.shape[0], d, d):
            raise DomainError("GMM covariance shapes do not match means")
        for j, cov in enumerate(C):
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise DomainError(f"GMM covariance {j} is not symmetric")
            if np.any(np.linalg.eigvalsh(cov) <= 0):
                raise DomainError(f"GMM covariance {j} is not positive definite")
        self.weights = w
        self.means = mu
        self.covs = C
        self.dim = d

    @property
    def initial_variance(self):
        return 1.0

    def mixture_mean(self):
        return self.weights @ self.means

    def eig_extremes(self, alpha, beta):
        """(lambda_min, lambda_max) over components of beta^2 Sigma_j + alpha^2 I."""
        lams = np.linalg.eigvalsh(beta ** 2 * self.covs + alpha ** 2 * np.eye(self.dim))
        return float(lams.min()), float(lams.max())

    def key(self):
        return {"family": "gmm", "weights": self.weights.tolist(),
                "means": self.means.tolist(), "covs": self.covs.tolist()}


class RectMixture:
    """Mixture of axis-aligned uniform boxes: weights w_c, per-axis intervals.

    ``edge_sigma`` optionally convolves the target with N(0, edge_sigma^2 I),
    keeping every path quantity closed-form (the path noise scale becomes
    sqrt(alpha^2 + beta^2 edge_sigma^2)).  A small positive value emulates the
    effective edge smoothing of a trained score network; zero is the exact
    uniform mixture.
    """

    def __init__(self, weights, lows, highs, edge_sigma=0.0):
        w = np.asarray(weights, dtype=float)
        lo = np.atleast_2d(np.asarray(lows, dtype=float))
        hi = np.atleast_2d(np.asarray(highs, dtype=float))
        if np.any(w <= 0):
            raise DomainError("rect mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"rect mixture weights must sum to 1, got {w.sum()!r}")
        if lo.shape != hi.shape or lo.shape[0] != w.shape[0]:
            raise DomainError("rect mixture interval shapes do not match weights")
        if np.any(lo >= hi):
            raise DomainError("rect mixture requires l < u on every axis")
        if edge_sigma < 0:
            raise DomainError("edge smoothing must be nonnegative")
        self.weights = w
        self.lows = lo
        self.highs = hi
        self.edge_sigma = float(edge_sigma)
        self.dim = lo.shape[1]

    @classmethod
    def uniform(cls, lows, highs, edge_sigma=0.0):
        return cls([1.0], [np.atleast_1d(lows)], [np.atleast_1d(highs)], edge_sigma)

    @property
    def initial_variance(self):
        return 1.0

    def mixture_mean(self):
        return self.weights @ ((self.lows + self.highs) / 2.0)

    def support_bounds(self):
        return self.lows.min(axis=0), self.highs.max(axis=0)

    def contains(self, x):
        x = np.atleast_2d(x)
        inside = np.zeros(x.shape[0], dtype=bool)
        for lo, hi in zip(self.lows, self.highs):
            inside |= np.all((x >= lo) & (x <= hi), axis=1)
        return inside

    def key(self):
        return {"family": "rect_mixture", "weights": self.weights.tolist(),
                "lows": self.lows.tolist(), "highs": self.highs.tolist()}


# ---------------------------------------------------------------------------
# numerics shared by the Phi-based families
# ---------------------------------------------------------------------------


def _log_phi_diff(a, b):
    """log(Phi(b) - Phi(a)) for a < b, stable in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast(a, b).shape, dtype=float)

    both_neg = b <= 0
    both_pos = a >= 0
    mid = ~(both_neg | both_pos)

    if np.any(both_neg):
        hi = log_ndtr(b[both_neg])
        lo = log_ndtr(a[both_neg])
        out[both_neg] = hi + np.log(-np.expm1(lo - hi))
    if np.any(both_pos):
        hi = log_ndtr(-a[both_pos])
        lo = log_ndtr(-b[both_pos])
        out[both_pos] = hi + np.log(-np.expm1(lo - hi))
    if np.any(mid):
        out[mid] = np.log(ndtr(b[mid]) - ndtr(a[mid]))
    return out


def _log_norm_pdf(z):
    return -0.5 * z * z - 0.5 * _LOG_2PI


# ---------------------------------------------------------------------------
# grid target
# ---------------------------------------------------------------------------


class GridTarget:
    """Bounded 2D density with per-timestep tables of log q, grad log q, lap log q.

    Tables exist only at the construction timesteps; queries at other times
    raise.  Built by :func:`build_grid_target`.
    """

    def __init__(self, xs, ys, times, log_q, score_x, score_y, lap_log,
                 base_mass, schedule_name, initial_variance, target_key, masses,
                 alphas=None, far_field=True):
        self.xs = xs
        self.ys = ys
        self.hx = float(xs[1] - xs[0])
        self.hy = float(ys[1] - ys[0])
        self.times = np.asarray(times, dtype=float)
        self.log_q = log_q          # (T, nx, ny)
        self.score_x = score_x
        self.score_y = score_y
        self.lap_log = lap_log
        self.base_mass = base_mass  # target cell masses at beta = 1
        self.schedule_name = schedule_name
        self.initial_variance = float(initial_variance)
        self.target_key = target_key
        self.masses = np.asarray(masses, dtype=float)
        self.alphas = (np.asarray(alphas, dtype=float) if alphas is not None
                       else np.full(len(self.times), np.nan))
        # Gaussian-envelope continuation outside the padded grid: lets baseline
        # runs on collapsed paths keep evolving escaped particles instead of
        # erroring (set False for the strict contract).
        self.far_field = bool(far_field)
        self.dim = 2

    # -- lookup ------------------------------------------------------------

    def time_index(self, t):
        idx = np.searchsorted(self.times, t)
        for k in (idx - 1, idx):
            if 0 <= k < len(self.times) and abs(self.times[k] - t) <= 1e-9:
                return k
        raise ExtrapolationError(
            f"grid target has no table at t={t!r}; tabulated times are shared "
            "with the sampler grid by construction"
        )

    def _clamp(self, x):
        """Clamp query points to the grid box; returns (clamped, residual, outside)."""
        lo = np.array([self.xs[0], self.ys[0]])
        hi = np.array([self.xs[-1], self.ys[-1]])
        clamped = np.clip(x, lo, hi)
        resid = x - clamped
        outside = np.any(resid != 0.0, axis=1)
        if outside.any() and not self.far_field:
            raise ExtrapolationError("grid target queried outside the padded grid")
        return clamped, resid, outside

    def _kernel_var(self, k):
        a = self.alphas[k]
        if not np.isfinite(a):
            raise ExtrapolationError(
                "far-field continuation unavailable: kernel scale not stored")
        return a * a * self.initial_variance

    def _bilinear(self, table, x):
        xs, ys = self.xs, self.ys
        fx = (x[:, 0] - xs[0]) / self.hx
        fy = (x[:, 1] - ys[0]) / self.hy
        ix = np.clip(fx.astype(int), 0, len(xs) - 2)
        iy = np.clip(fy.astype(int), 0, len(ys) - 2)
        wx = fx - ix
        wy = fy - iy
        t00 = table[ix, iy].astype(float)
        t10 = table[ix + 1, iy].astype(float)
        t01 = table[ix, iy + 1].astype(float)
        t11 = table[ix + 1, iy + 1].astype(float)
        return ((1 - wx) * (1 - wy) * t00 + wx * (1 - wy) * t10
                + (1 - wx) * wy * t01 + wx * wy * t11)

    def log_density(self, x, t):
        k = self.time_index(t)
        xc, resid, outside = self._clamp(x)
        out = self._bilinear(self.log_q[k], xc)
        if outside.any():
            var = self._kernel_var(k)
            edge_score = np.stack([self._bilinear(self.score_x[k], xc),
                                   self._bilinear(self.score_y[k], xc)], axis=-1)
            out = out + np.sum(edge_score * resid, axis=1) - np.sum(resid ** 2, axis=1) / (2 * var)
        return out

    def score(self, x, t):
        k = self.time_index(t)
        xc, resid, outside = self._clamp(x)
        s = np.stack([self._bilinear(self.score_x[k], xc),
                      self._bilinear(self.score_y[k], xc)], axis=-1)
        if outside.any():
            s = s - resid / self._kernel_var(k)
        return s

    def lap_log_density(self, x, t):
        k = self.time_index(t)
        xc, resid, outside = self._clamp(x)
        out = self._bilinear(self.lap_log[k], xc)
        if outside.any():
            out = out - np.sum(resid != 0.0, axis=1) / self._kernel_var(k)
        return out

    def support_contains(self, x):
        """Membership in the t=1 target support (cells with positive mass)."""
        x = np.atleast_2d(x)
        fx = np.round((x[:, 0] - self.xs[0]) / self.hx).astype(int)
        fy = np.round((x[:, 1] - self.ys[0]) / self.hy).astype(int)
        ok = (fx >= 0) & (fx < len(self.xs)) & (fy >= 0) & (fy < len(self.ys))
        out = np.zeros(x.shape[0], dtype=bool)
        out[ok] = self.base_mass[fx[ok], fy[ok]] > 0
        return out

    def key(self):
        return {"family": "grid", "target_key": self.target_key,
                "resolution": [len(self.xs), len(self.ys)],
                "domain": [[float(self.xs[0] - self.hx / 2), float(self.xs[-1] + self.hx / 2)],
                           [float(self.ys[0] - self.hy / 2), float(self.ys[-1] + self.hy / 2)]]}

    # -- binary cache ------------------------------------------------------

    def content_hash(self):
        header = {
            "target_key": self.target_key,
            "schedule": self.schedule_name,
            "resolution": [len(self.xs), len(self.ys)],
            "domain": self.key()["domain"],
            "times": [round(float(t), 12) for t in self.times],
            "initial_variance": self.initial_variance,
        }
        hsh = hashlib.sha256(json.dumps(header, sort_keys=True).encode())
        hsh.update(np.ascontiguousarray(self.base_mass, dtype="<f8").tobytes())
        return hsh.hexdigest()

    def save(self, path):
        """Binary cache: JSON header line, then row-major little-endian f64 tables."""
        header = {
            "magic": "ratiopath-grid-v1",
            "nx": len(self.xs), "ny": len(self.ys),
            "x0": float(self.xs[0]), "y0": float(self.ys[0]),
            "hx": self.hx, "hy": self.hy,
            "times": [float(t) for t in self.times],
            "schedule": self.schedule_name,
            "initial_variance": self.initial_variance,
            "target_key": self.target_key,
            "masses": [float(m) for m in self.masses],
            "alphas": [float(a) for a in self.alphas],
            "far_field": self.far_field,
            "hash": self.content_hash(),
        }
        with open(path, "wb") as f:
            f.write(json.dumps(header).encode() + b"\n")
            for table in (self.log_q, self.score_x, self.score_y, self.lap_log, self.base_mass):
                f.write(np.ascontiguousarray(table, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode())
            if header.get("magic") != "ratiopath-grid-v1":
                raise DomainError(f"{path} is not a grid cache file")
            nx, ny, nt = header["nx"], header["ny"], len(header["times"])
            def read(shape):
                n = int(np.prod(shape))
                arr = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
                return arr.copy()
            log_q = read((nt, nx, ny))
            sx = read((nt, nx, ny))
            sy = read((nt, nx, ny))
            lap = read((nt, nx, ny))
            base = read((nx, ny))
        xs = header["x0"] + np.arange(nx) * header["hx"]
        ys = header["y0"] + np.arange(ny) * header["hy"]
        return cls(xs, ys, header["times"], log_q, sx, sy, lap, base,
                   header["schedule"], header["initial_variance"],
                   header["target_key"], header["masses"],
                   alphas=header.get("alphas"), far_field=header.get("far_field", True))


def _cell_kernels(sigma, h, reach):
    """Cell-averaged 1D kernels for a N(0, sigma^2) kernel on spacing h.

    Returns (k0, k1, k2): cell averages of g, g', g'' over cells at offsets
    -reach..reach; k0 sums to ~1 for any sigma, including sigma << h.
    """
    offs = np.arange(-reach, reach + 1) * h
    left = (offs - h / 2) / sigma
    right = (offs + h / 2) / sigma
    k0 = ndtr(right) - ndtr(left)
    g_l = np.exp(_log_norm_pdf(left)) / sigma
    g_r = np.exp(_log_norm_pdf(right)) / sigma
    k1 = (g_r - g_l) / h
    gp_l = -left / sigma * g_l
    gp_r = -right / sigma * g_r
    k2 = (gp_r - gp_l) / h
    return k0, k1, k2


def _conv_sep(mass, kx, ky):
    tmp = signal.fftconvolve(mass, kx[:, None], mode="same")
    return signal.fftconvolve(tmp, ky[None, :], mode="same")


def build_grid_target(density, domain, resolution, timesteps, schedule,
                      *, box_mass=None, target_key=None, supersample=8,
                      initial_variance=1.0, mass_tol=1e-4, table_dtype=np.float64):
    """Tabulate the path of a bounded 2D density under ``schedule``.

    ``density(x, y)`` evaluates the t=1 target pointwise (vectorized);
    ``box_mass(x0, x1, y0, y1)`` optionally returns exact target mass over
    axis-aligned boxes (vectorized) and is preferred when available, e.g. for
    piecewise-constant targets whose point samples misestimate cell masses.

    The padded domain must leave at least ~4 kernel standard deviations
    between the scaled support and the grid edge; the post-convolution mass
    audit refuses the build otherwise.
    """
    (x0, x1), (y0, y1) = domain
    if np.isscalar(resolution):
        nx = ny = int(resolution)
    else:
        nx, ny = (int(r) for r in resolution)
    if min(nx, ny) < 256:
        raise PreconditionError("grid target resolution must be >= 256 per axis")
    times = np.asarray(sorted(float(t) for t in timesteps))
    if times.size and (np.any(times <= 0.0) or np.any(times >= 1.0)):
        raise DomainError("grid target timesteps must lie in (0, 1)")

    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    xs = x0 + (np.arange(nx) + 0.5) * hx
    ys = y0 + (np.arange(ny) + 0.5) * hy

    def scaled_masses(beta):
        # cell masses of beta * X1 on the grid
        if box_mass is not None:
            ex = (x0 + np.arange(nx + 1) * hx) / beta
            ey = (y0 + np.arange(ny + 1) * hy) / beta
            m = box_mass(ex[:-1][:, None], ex[1:][:, None], ey[None, :-1], ey[None, 1:])
        else:
            s = int(supersample)
            m = np.zeros((nx, ny))
            sub = (np.arange(s) + 0.5) / s
            for ox in sub:
                px = (x0 + (np.arange(nx) + ox) * hx) / beta
                for oy in sub:
                    py = (y0 + (np.arange(ny) + oy) * hy) / beta
                    m += density(px[:, None], py[None, :])
            m *= hx * hy / (beta * beta * s * s)
        total = m.sum()
        if not total > 0:
            raise PreconditionError("target has no mass on the grid")
        return m / total

    base = scaled_masses(1.0)

    T = len(times)
    log_q = np.empty((T, nx, ny), dtype=table_dtype)
    score_x = np.empty_like(log_q)
    score_y = np.empty_like(log_q)
    lap_log = np.empty_like(log_q)
    masses = np.empty(T)

    h = min(hx, hy)
    tiny = np.finfo(float).tiny
    for k, t in enumerate(times):
        alpha, beta = schedule.alpha_beta(float(t))
        sigma = alpha * math.sqrt(initial_variance)
        if sigma <= 0:
            raise DomainError(f"kernel degenerates at t={t} (alpha = 0)")
        M = scaled_masses(beta) if beta > 0 else _point_mass(nx, ny)
        reach = int(math.ceil((8.0 * sigma + 4.0 * h) / h))
        reach = min(reach, max(nx, ny) - 1)
        k0x, k1x, k2x = _cell_kernels(sigma, hx, reach)
        k0y, k1y, k2y = _cell_kernels(sigma, hy, reach)

        Q = _conv_sep(M, k0x, k0y)
        Gx = _conv_sep(M, k1x, k0y) * hx
        Gy = _conv_sep(M, k0x, k1y) * hy
        L = _conv_sep(M, k2x, k0y) * hx + _conv_sep(M, k0x, k2y) * hy

        mass = Q.sum()
        masses[k] = mass
        if abs(mass - 1.0) > mass_tol:
            raise PreconditionError(
                f"mass leak at t={t}: grid mass {mass:.6f} deviates from 1 by more "
                f"than {mass_tol}; increase padding"
            )
        q = Q / (hx * hy)
        qc = np.maximum(q, tiny)
        gx = Gx / (hx * hy)
        gy = Gy / (hx * hy)
        lap = L / (hx * hy)
        with np.errstate(divide="ignore"):
            log_q[k] = np.log(qc)
        ok = q > 0
        sx = np.where(ok, gx / qc, 0.0)
        sy = np.where(ok, gy / qc, 0.0)
        score_x[k] = sx
        score_y[k] = sy
        lap_log[k] = np.where(ok, lap / qc - (sx * sx + sy * sy), 0.0)

    key = target_key or getattr(density, "__qualname__", None) or "anonymous"
    alphas = np.array([schedule.alpha_beta(float(t))[0] for t in times])
    return GridTarget(xs, ys, times, log_q, score_x, score_y, lap_log,
                      base, schedule.name, initial_variance, key, masses,
                      alphas=alphas)


def _point_mass(nx, ny):
    m = np.zeros((nx, ny))
    m[nx // 2, ny // 2] = 1.0
    return m


# ---------------------------------------------------------------------------
# the path oracle
# ---------------------------------------------------------------------------


class ExpertPath:
    """Oracle for one expert path: log-density, score, velocity, divergences.

    t=0 is the exact Gaussian endpoint for every family; the velocity at t=0
    uses the marginal-velocity limit for Gaussian-family targets and a
    one-sided continuation at ``t0_eps`` otherwise (the sampler's first field
    evaluation happens at half a step, never at 0).
    """

    def __init__(self, dim, schedule: NoiseSchedule, target, t0_eps=5e-4):
        self.dim = int(dim)
        self.schedule = schedule
        self.target = target
        self.t0_eps = float(t0_eps)
        tdim = getattr(target, "dim", None)
        if tdim is not None and tdim != self.dim:
            raise DomainError(f"target dim {tdim} != expert dim {dim}")
        if isinstance(target, GridTarget) and target.schedule_name != schedule.name:
            raise DomainError(
                f"grid target was built for schedule {target.schedule_name!r}, "
                f"not {schedule.name!r}"
            )

    # -- helpers -----------------------------------------------------------

    def _check_t(self, t):
        if not (0.0 <= t < 1.0):
            raise DomainError(f"path oracle defined for t in [0, 1), got {t!r}")

    def _coeffs(self, t):
        return self.schedule.eval(t)

    @property
    def initial_variance(self):
        return float(getattr(self.target, "initial_variance", 1.0))

    def _as_points(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise DomainError(f"points have dim {pts.shape[1]}, expert has dim {self.dim}")
        return pts, squeeze

    def _gauss_endpoint(self, pts, alpha, what):
        # beta == 0: the path is exactly N(0, alpha^2 * v0 * I) for every family
        var = alpha ** 2 * self.initial_variance
        d = self.dim
        if what == "log_density":
            return -0.5 * d * math.log(2 * math.pi * var) - 0.5 * np.sum(pts ** 2, axis=1) / var
        if what == "score":
            return -pts / var
        if what == "lap":
            return np.full(pts.shape[0], -d / var)
        raise AssertionError(what)

    # -- core oracles ------------------------------------------------------

    def log_density(self, x, t):
        pts, squeeze = self._as_points(x)
        self._check_t(t)
        alpha, beta, _, _ = self._coeffs(t)
        if beta == 0.0:
            out = self._gauss_endpoint(pts, alpha, "log_density")
        else:
            out = self._dispatch(pts, alpha, beta, t, "log_density")
        return out[0] if squeeze else out

    def score(self, x, t):
        pts, squeeze = self._as_points(x)
        self._check_t(t)
        alpha, beta, _, _ = self._coeffs(t)
        if beta == 0.0:
            out = self._gauss_endpoint(pts, alpha, "score")
        else:
            out = self._dispatch(pts, alpha, beta, t, "score")
        return out[0] if squeeze else out

    def div_score(self, x, t):
        pts, squeeze = self._as_points(x)
        self._check_t(t)
        alpha, beta, _, _ = self._coeffs(t)
        if beta == 0.0:
            out = self._gauss_endpoint(pts, alpha, "lap")
        else:
            out = self._dispatch(pts, alpha, beta, t, "lap")
        return out[0] if squeeze else out

    def velocity(self, x, t):
        pts, squeeze = self._as_points(x)
        self._check_t(t)
        tgt = self.target
        if isinstance(tgt, IsotropicGaussian):
            out = self._gaussian_velocity(pts, t)
        elif t == 0.0:
            if isinstance(tgt, GmmTarget):
                _, _, da, db = self._coeffs(0.0)
                out = da * pts + db * tgt.mixture_mean()
            else:
                out = self.velocity(pts, self.t0_eps)
        else:
            alpha, beta, da, db = self._coeffs(t)
            ratio = db / beta
            bracket = alpha * self.initial_variance * (ratio * alpha - da)
            out = ratio * pts + bracket * self.score(pts, t)
        return out[0] if squeeze else out

    def div_velocity(self, x, t):
        pts, squeeze = self._as_points(x)
        self._check_t(t)
        tgt = self.target
        if isinstance(tgt, IsotropicGaussian):
            var, vdot = self._gaussian_var_rate(t)
            out = np.full(pts.shape[0], self.dim * vdot / (2.0 * var))
        elif t == 0.0:
            if isinstance(tgt, GmmTarget):
                _, _, da, _ = self._coeffs(0.0)
                out = np.full(pts.shape[0], self.dim * da)
            else:
                out = self.div_velocity(pts, self.t0_eps)
        else:
            alpha, beta, da, db = self._coeffs(t)
            ratio = db / beta
            bracket = alpha * self.initial_variance * (ratio * alpha - da)
            out = self.dim * ratio + bracket * self.div_score(pts, t)
        return out[0] if squeeze else out

    # -- family dispatch ---------------------------------------------------

    def _dispatch(self, pts, alpha, beta, t, what):
        tgt = self.target
        if isinstance(tgt, IsotropicGaussian):
            return self._gaussian(pts, alpha, beta, what)
        if isinstance(tgt, GmmTarget):
            return self._gmm(pts, alpha, beta, what)
        if isinstance(tgt, RectMixture):
            return self._rect(pts, alpha, beta, what)
        if isinstance(tgt, GridTarget):
            if what == "log_density":
                return tgt.log_density(pts, t)
            if what == "score":
                return tgt.score(pts, t)
            if what == "lap":
                return tgt.lap_log_density(pts, t)
        raise DomainError(f"unsupported target type {type(tgt).__name__}")

    # Gaussian: variance path var(t) = alpha^2 v0 + beta^2 v1

    def _gaussian_var_rate(self, t):
        alpha, beta, da, db = self._coeffs(t)
        v0 = self.initial_variance
        v1 = self.target.variance
        var = alpha ** 2 * v0 + beta ** 2 * v1
        if beta == 0.0 and not math.isfinite(db):
            # d(beta^2)/dt stays finite even when dbeta alone diverges
            bdb = -alpha * da if abs(beta ** 2 + alpha ** 2 - 1.0) < 1e-9 else 0.0
        else:
            bdb = beta * db
        vdot = 2.0 * (alpha * da * v0 + bdb * v1)
        return var, vdot

    def _gaussian(self, pts, alpha, beta, what):
        v = alpha ** 2 * self.initial_variance + beta ** 2 * self.target.variance
        d = self.dim
        if what == "log_density":
            return -0.5 * d * math.log(2 * math.pi * v) - 0.5 * np.sum(pts ** 2, axis=1) / v
        if what == "score":
            return -pts / v
        if what == "lap":
            return np.full(pts.shape[0], -d / v)
        raise AssertionError(what)

    def _gaussian_velocity(self, pts, t):
        var, vdot = self._gaussian_var_rate(t)
        return (vdot / (2.0 * var)) * pts

    # GMM: q_t = sum_j w_j N(beta mu_j, beta^2 Sigma_j + alpha^2 I)

    def _gmm(self, pts, alpha, beta, what):
        tgt = self.target
        d = self.dim
        J = tgt.weights.size
        log_r = np.empty((J, pts.shape[0]))
        gs = np.empty((J, pts.shape[0], d))
        tr_inv = np.empty(J)
        for j in range(J):
            cov = beta ** 2 * tgt.covs[j] + alpha ** 2 * np.eye(d)
            chol = np.linalg.cholesky(cov)
            diff = pts - beta * tgt.means[j]
            sol = np.linalg.solve(cov, diff.T).T
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            log_r[j] = (math.log(tgt.weights[j]) - 0.5 * (d * _LOG_2PI + logdet)
                        - 0.5 * np.sum(diff * sol, axis=1))
            gs[j] = -sol
            tr_inv[j] = np.trace(np.linalg.inv(cov))
        log_norm = logsumexp_axis0(log_r)
        if what == "log_density":
            return log_norm
        r = np.exp(log_r - log_norm)
        s = np.einsum("jn,jnd->nd", r, gs)
        if what == "score":
            return s
        quad = np.sum(gs * gs, axis=2)
        return np.einsum("jn,jn->n", r, quad - tr_inv[:, None]) - np.sum(s * s, axis=1)

    # Rect mixture: per-axis Phi differences

    def _rect(self, pts, alpha, beta, what):
        tgt = self.target
        N, d = pts.shape
        C = tgt.weights.size
        # effective per-axis noise scale; edge smoothing adds beta^2 sigma^2
        s_eff = math.sqrt(alpha ** 2 + (beta * tgt.edge_sigma) ** 2)
        # (C, N, d) standardized edges
        b = (pts[None, :, :] - beta * tgt.lows[:, None, :]) / s_eff
        a = (pts[None, :, :] - beta * tgt.highs[:, None, :]) / s_eff
        log_diff = _log_phi_diff(a, b)
        widths = beta * (tgt.highs - tgt.lows)
        log_pc = np.sum(log_diff, axis=2) - np.sum(np.log(widths), axis=1)[:, None]
        log_w = np.log(tgt.weights)[:, None]
        log_norm = logsumexp_axis0(log_w + log_pc)
        if what == "log_density":
            return log_norm
        rb = np.exp(_log_norm_pdf(b) - log_diff)
        ra = np.exp(_log_norm_pdf(a) - log_diff)
        s_c = (rb - ra) / s_eff                       # (C, N, d) per-component score
        r = np.exp(log_w + log_pc - log_norm)          # (C, N)
        s = np.einsum("cn,cnd->nd", r, s_c)
        if what == "score":
            return s
        lap_c = (-b * rb + a * ra) / s_eff ** 2 - s_c ** 2
        # lap log q = sum_c r_c (lap log p_c + |grad log p_c|^2) - |s|^2
        lap_term = np.sum(lap_c, axis=2) + np.sum(s_c ** 2, axis=2)
        return np.einsum("cn,cn->n", r, lap_term) - np.sum(s * s, axis=1)


def logsumexp_axis0(arr):
    m = np.max(arr, axis=0)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.sum(np.exp(arr - m), axis=0))
