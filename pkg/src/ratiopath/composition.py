"""Lifted products of expert paths with exponent schedules.

Houses the coordinate lifting, the path-existence criterion and its
Gaussian-mixture refinement, bump-function repair of invalid exponent
schedules, and the mixed score/velocity fields used by the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ratiopath.errors import DomainError, PreconditionError, SingularityError
from ratiopath.experts import ExpertPath, GmmTarget, GridTarget, IsotropicGaussian, RectMixture

__all__ = [
    "CoordinateLift",
    "ExponentSchedule",
    "Composition",
    "CriterionReport",
    "default_grid",
    "DEFAULT_BUMP_CANDIDATES",
]


def default_grid(step=1e-3, t_end=0.999):
    """Criterion grid t in {step, 2*step, ..., t_end}, matching discretized sampling."""
    n = int(round(t_end / step))
    return np.arange(1, n + 1) * step


DEFAULT_BUMP_CANDIDATES = tuple(range(0, 101)) + tuple(range(150, 10001, 50))


@dataclass(frozen=True)
class CoordinateLift:
    """Embedding of experts into the ambient space via coordinate index sets."""

    ambient_dim: int
    index_sets: tuple

    def __post_init__(self):
        object.__setattr__(self, "index_sets",
                           tuple(tuple(int(i) for i in s) for s in self.index_sets))
        for s in self.index_sets:
            if len(set(s)) != len(s):
                raise DomainError(f"duplicate coordinates in index set {s}")
            if any(i < 0 or i >= self.ambient_dim for i in s):
                raise DomainError(f"index set {s} outside ambient dim {self.ambient_dim}")

    def project(self, x, i):
        return x[..., self.index_sets[i]]

    def lift(self, v, i, out=None):
        """Embed a block vector field back into ambient coordinates (zeros elsewhere)."""
        if out is None:
            out = np.zeros(v.shape[:-1] + (self.ambient_dim,))
        out[..., self.index_sets[i]] += v
        return out

    def covered(self):
        hit = np.zeros(self.ambient_dim, dtype=bool)
        for s in self.index_sets:
            hit[list(s)] = True
        return hit


@dataclass(frozen=True)
class ExponentSchedule:
    """gamma(t) = base(t) + bump * t(1-t), with base constant or linear in t.

    The bump term vanishes at both endpoints exactly, so gamma(0) and gamma(1)
    are preserved bit-for-bit for every bump amplitude.
    """

    gamma0: float
    gamma1: float = None
    form: str = "constant"
    bump: float = 0.0

    def __post_init__(self):
        if self.gamma1 is None:
            object.__setattr__(self, "gamma1", self.gamma0)
        if self.form not in ("constant", "linear"):
            raise DomainError(f"unknown exponent form {self.form!r}")
        if self.form == "constant" and self.gamma0 != self.gamma1:
            raise DomainError("constant exponent requires gamma0 == gamma1")
        if self.bump < 0:
            raise DomainError("bump amplitude must be nonnegative")

    def base_value(self, t):
        t = np.asarray(t, dtype=float)
        if self.form == "constant":
            base = np.broadcast_to(np.float64(self.gamma0), t.shape).copy() if t.ndim else self.gamma0
        else:
            base = (1.0 - t) * self.gamma0 + t * self.gamma1
        return base

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self.base_value(t) + self.bump * t * (1.0 - t)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        base = 0.0 if self.form == "constant" else (self.gamma1 - self.gamma0)
        out = base + self.bump * (1.0 - 2.0 * t)
        return out if t.ndim else float(out)

    def with_bump(self, bump):
        return replace(self, bump=float(bump))


@dataclass(frozen=True)
class CriterionReport:
    """Grid evaluation of the coordinate-wise path-existence criterion."""

    grid: np.ndarray          # (T,)
    values: np.ndarray        # (T, d) per-coordinate criterion
    c_min: np.ndarray         # (T,) min over coordinates
    collapse_intervals: tuple  # ((t_lo, t_hi), ...) maximal sub-intervals with C < 0
    collapse_fraction: float
    verdict: str              # "valid" | "collapsed"
    first_violation: tuple    # (t_star, coordinate) or None
    kind: str = "compact"     # which criterion produced the report

    @property
    def is_valid(self):
        return self.verdict == "valid"

    def to_csv(self, path):
        d = self.values.shape[1]
        header = "t," + ",".join(f"C_{k + 1}" for k in range(d)) + ",C_min"
        data = np.column_stack([self.grid, self.values, self.c_min])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def _report_from_values(grid, values, kind):
    c_min = values.min(axis=1)
    neg = c_min < 0.0
    intervals = []
    i = 0
    while i < len(grid):
        if neg[i]:
            j = i
            while j + 1 < len(grid) and neg[j + 1]:
                j += 1
            intervals.append((float(grid[i]), float(grid[j])))
            i = j + 1
        else:
            i += 1
    fraction = float(neg.mean())
    if neg.any():
        idx = int(np.argmax(neg))
        coord = int(np.argmin(values[idx]))
        first = (float(grid[idx]), coord)
        verdict = "collapsed"
    else:
        first = None
        verdict = "valid"
    return CriterionReport(grid=np.asarray(grid, dtype=float), values=values,
                           c_min=c_min, collapse_intervals=tuple(intervals),
                           collapse_fraction=fraction, verdict=verdict,
                           first_violation=first, kind=kind)


class Composition:
    """Experts + exponent schedules + coordinate lift defining the target product."""

    def __init__(self, experts, exponents, lift: CoordinateLift):
        if len(experts) != len(exponents):
            raise DomainError("experts and exponent schedules must align")
        for e, idx in zip(experts, lift.index_sets):
            if e.dim != len(idx):
                raise DomainError(
                    f"expert dim {e.dim} does not match its index set size {len(idx)}"
                )
        self.experts = tuple(experts)
        self.exponents = tuple(exponents)
        self.lift = lift

    @property
    def n_experts(self):
        return len(self.experts)

    @property
    def ambient_dim(self):
        return self.lift.ambient_dim

    def with_bump(self, j, bump):
        exps = list(self.exponents)
        exps[j] = exps[j].with_bump(bump)
        return Composition(self.experts, exps, self.lift)

    def gammas(self, t):
        return np.array([g.value(t) for g in self.exponents])

    def base_gammas(self, t):
        return np.array([g.base_value(t) for g in self.exponents])

    def gamma_rates(self, t):
        return np.array([g.rate(t) for g in self.exponents])

    # -- path-existence criterion (compact-support form) --------------------

    def criterion_at(self, t, k=None):
        """Sum over experts covering coordinate k of gamma_i(t) / alpha_i(t)^2.

        With k=None, returns the vector over all ambient coordinates.
        """
        if not (0.0 <= t < 1.0):
            raise DomainError(f"criterion defined for t in [0, 1), got {t!r}")
        vals = np.zeros(self.ambient_dim)
        for i, (e, g) in enumerate(zip(self.experts, self.exponents)):
            alpha, _ = e.schedule.alpha_beta(t)
            if alpha == 0.0:
                raise SingularityError(f"alpha = 0 for expert {i} at t={t}")
            contrib = g.value(t) / alpha ** 2
            for c in self.lift.index_sets[i]:
                vals[c] += contrib
        if k is None:
            return vals
        return float(vals[k])

    def criterion_values(self, grid):
        grid = np.asarray(grid, dtype=float)
        vals = np.zeros((len(grid), self.ambient_dim))
        for i, (e, g) in enumerate(zip(self.experts, self.exponents)):
            alpha, _, _, _ = e.schedule.eval(grid)
            if np.any(alpha == 0.0):
                raise SingularityError(f"alpha = 0 inside criterion grid for expert {i}")
            contrib = g.value(grid) / alpha ** 2
            for c in self.lift.index_sets[i]:
                vals[:, c] += contrib
        return vals

    def check_path(self, grid=None):
        """Criterion report on the grid; collapsed iff any coordinate dips below 0."""
        if grid is None:
            grid = default_grid()
        grid = np.asarray(grid, dtype=float)
        if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] >= 1.0:
            raise DomainError("criterion grid must be strictly increasing within [0, 1)")
        return _report_from_values(grid, self.criterion_values(grid), "compact")

    # -- Gaussian-family criteria -------------------------------------------

    def _gaussian_lambda_extremes(self, t):
        """Per-expert (lambda_min, lambda_max) of the path covariance spectrum."""
        out = []
        for e in self.experts:
            alpha, beta = e.schedule.alpha_beta(t)
            tgt = e.target
            if isinstance(tgt, IsotropicGaussian):
                lam = alpha ** 2 * tgt.initial_variance + beta ** 2 * tgt.variance
                out.append((lam, lam))
            elif isinstance(tgt, GmmTarget):
                out.append(tgt.eig_extremes(alpha, beta))
            else:
                raise DomainError("Gaussian criteria require Gaussian or GMM experts")
        return out

    def effective_precision_gaussian(self, t):
        """Signed inverse variance of an isotropic-Gaussian composition.

        The composed path is non-normalizable at t iff the value is <= 0.
        """
        first = self.lift.index_sets[0]
        for e, s in zip(self.experts, self.lift.index_sets):
            if not isinstance(e.target, IsotropicGaussian):
                raise DomainError("effective precision requires isotropic Gaussian experts")
            if s != first:
                raise DomainError("effective precision requires identical coordinate sets")
        if not (0.0 <= t <= 1.0):
            raise DomainError(f"t must be in [0, 1], got {t!r}")
        total = 0.0
        for e, g in zip(self.experts, self.exponents):
            alpha, beta = e.schedule.alpha_beta(t)
            var = alpha ** 2 * e.target.initial_variance + beta ** 2 * e.target.variance
            total += g.value(t) / var
        return total

    def gmm_criteria(self, t):
        """(C_suff, C_nec) per ambient coordinate for Gaussian/GMM experts."""
        if not (0.0 <= t < 1.0):
            raise DomainError(f"t must be in [0, 1), got {t!r}")
        extremes = self._gaussian_lambda_extremes(t)
        c_suff = np.zeros(self.ambient_dim)
        c_nec = np.zeros(self.ambient_dim)
        for i, (g, (lam_min, lam_max)) in enumerate(zip(self.exponents, extremes)):
            gam = g.value(t)
            suff = gam / lam_max if gam > 0 else gam / lam_min
            nec = gam / lam_min if gam > 0 else gam / lam_max
            for c in self.lift.index_sets[i]:
                c_suff[c] += suff
                c_nec[c] += nec
        return c_suff, c_nec

    def check_path_gaussian(self, grid=None):
        """Necessity-criterion report for all-Gaussian compositions."""
        if grid is None:
            grid = default_grid()
        grid = np.asarray(grid, dtype=float)
        vals = np.zeros((len(grid), self.ambient_dim))
        for k, t in enumerate(grid):
            _, vals[k] = self.gmm_criteria(float(t))
        return _report_from_values(grid, vals, "gaussian")

    def all_gaussian(self):
        return all(isinstance(e.target, (IsotropicGaussian, GmmTarget)) for e in self.experts)

    # -- bump repair ---------------------------------------------------------

    def default_bump_index(self, grid=None):
        """Positive-exponent expert with the largest criterion contribution at
        the criterion minimizer (the constructive proof's choice)."""
        if grid is None:
            grid = default_grid()
        report = self.check_path(grid)
        t_min = float(report.grid[int(np.argmin(report.c_min))])
        best, best_val = None, -np.inf
        for j, (e, g) in enumerate(zip(self.experts, self.exponents)):
            gam = g.value(t_min)
            if gam <= 0:
                continue
            alpha, _ = e.schedule.alpha_beta(t_min)
            val = gam / alpha ** 2
            if val > best_val:
                best, best_val = j, val
        if best is None:
            raise PreconditionError("no expert with positive exponent to bump")
        return best

    def find_bump(self, grid=None, j=None, candidates=DEFAULT_BUMP_CANDIDATES):
        """Smallest candidate bump amplitude restoring criterion positivity.

        Returns (B, report) on success and (None, residual_report) when no
        candidate works.  Requires the criterion to be positive at both grid
        endpoints: a bump vanishes there, so endpoint violations are unfixable.
        """
        if grid is None:
            grid = default_grid()
        grid = np.asarray(grid, dtype=float)
        ends = self.criterion_values(np.array([0.0, grid[-1]]))
        if np.any(ends[0] <= 0.0) or np.any(ends[1] <= 0.0):
            raise PreconditionError(
                "criterion must be positive at t=0 and t_end for bump repair "
                f"(got min {ends[0].min():.4g} at 0, {ends[1].min():.4g} at t_end)"
            )
        if j is None:
            j = self.default_bump_index(grid)
        best_report = None
        for b in sorted(candidates):
            report = self.with_bump(j, float(b)).check_path(grid)
            if report.is_valid:
                return float(b), report
            best_report = report
        return None, best_report

    # -- mixed fields ----------------------------------------------------------

    def _lifted(self, x, t, op):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((x.shape[0], self.ambient_dim))
        for i, (e, g) in enumerate(zip(self.experts, self.exponents)):
            block = getattr(e, op)(self.lift.project(x, i), t)
            self.lift.lift(g.value(t) * block, i, out)
        return out

    def mixed_score(self, x, t):
        """Exponent-weighted sum of lifted expert scores."""
        squeeze = np.asarray(x).ndim == 1
        out = self._lifted(x, t, "score")
        return out[0] if squeeze else out

    def mixed_velocity(self, x, t):
        """Exponent-weighted sum of lifted expert velocities."""
        squeeze = np.asarray(x).ndim == 1
        out = self._lifted(x, t, "velocity")
        return out[0] if squeeze else out

    def expert_fields(self, x, t):
        """Per-expert lifted score/velocity and divergences at one time.

        Returns dict with arrays: scores, velocities (n, N, d); div_velocity,
        div_score (n, N).  This is the sampler's single oracle entry point.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, (N, d) = self.n_experts, x.shape
        scores = np.zeros((n, N, d))
        vels = np.zeros((n, N, d))
        div_v = np.zeros((n, N))
        div_s = np.zeros((n, N))
        for i, e in enumerate(self.experts):
            xi = self.lift.project(x, i)
            self.lift.lift(e.score(xi, t), i, scores[i])
            self.lift.lift(e.velocity(xi, t), i, vels[i])
            div_v[i] = e.div_velocity(xi, t)
            div_s[i] = e.div_score(xi, t)
        return {"scores": scores, "velocities": vels, "div_velocity": div_v,
                "div_score": div_s}

    # -- validation --------------------------------------------------------

    def validate(self, grid=None, support_points=64):
        """Existence-condition audit; returns a list of violation strings."""
        violations = []
        if not self.experts:
            return ["coverage: composition has no experts"]
        covered = self.lift.covered()
        if not covered.all():
            missing = np.nonzero(~covered)[0].tolist()
            violations.append(f"coverage: ambient coordinates {missing} not covered")
        if grid is None:
            grid = default_grid()
        try:
            ends = self.criterion_values(np.array([0.0, grid[-1]]))
            if np.any(ends[0] <= 0.0):
                violations.append(
                    f"criterion: nonpositive at t=0 (min {ends[0].min():.4g})")
            if np.any(ends[1] <= 0.0):
                violations.append(
                    f"criterion: nonpositive at t_end (min {ends[1].min():.4g})")
        except SingularityError as exc:
            violations.append(f"criterion: {exc}")
        violations.extend(self._check_support_inclusion(support_points))
        return violations

    def _target_support(self, expert):
        tgt = expert.target
        if isinstance(tgt, RectMixture):
            lo, hi = tgt.support_bounds()
            return lo, hi, tgt.contains
        if isinstance(tgt, GridTarget):
            lo = np.array([tgt.xs[0] - tgt.hx / 2, tgt.ys[0] - tgt.hy / 2])
            hi = np.array([tgt.xs[-1] + tgt.hx / 2, tgt.ys[-1] + tgt.hy / 2])
            return lo, hi, tgt.support_contains
        return None  # full support

    def _check_support_inclusion(self, n_points):
        """Numerator support must sit inside the denominator support at t=1."""
        pos, neg = [], []
        for i, (e, g) in enumerate(zip(self.experts, self.exponents)):
            sup = self._target_support(e)
            if sup is None:
                continue
            gam1 = g.value(1.0)
            if gam1 > 0:
                pos.append((i, sup))
            elif gam1 < 0:
                neg.append((i, sup))
        if not neg:
            return []
        d = self.ambient_dim
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        for i, (slo, shi, _) in pos:
            idx = list(self.lift.index_sets[i])
            lo[idx] = np.maximum(lo[idx], slo)
            hi[idx] = np.minimum(hi[idx], shi)
        if np.any(lo > hi):
            return ["support: positive-exponent supports have empty intersection"]
        # a coordinate compact in the denominator must be bounded in the numerator
        for i, _ in neg:
            for k in self.lift.index_sets[i]:
                if not np.isfinite(lo[k]) or not np.isfinite(hi[k]):
                    return [
                        f"support: coordinate {k} is unbounded in the numerator but "
                        f"compactly supported in denominator expert {i}"
                    ]
        bounded = [k for k in range(d) if np.isfinite(lo[k])]
        m = max(8, int(round(n_points ** (1.0 / max(1, len(bounded))))))
        axes = [np.linspace(lo[k], hi[k], m) if k in bounded else np.zeros(1)
                for k in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([g.ravel() for g in mesh], axis=-1)
        in_num = np.ones(points.shape[0], dtype=bool)
        for i, (_, _, contains) in pos:
            in_num &= contains(self.lift.project(points, i))
        bad = np.zeros(points.shape[0], dtype=bool)
        for i, (_, _, contains) in neg:
            bad |= in_num & ~contains(self.lift.project(points, i))
        if bad.any():
            worst = points[np.nonzero(bad)[0][0]]
            return ["support: numerator support escapes the denominator support "
                    f"(e.g. at {np.round(worst, 3).tolist()})"]
        return []
