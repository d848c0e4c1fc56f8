"""Weighted particle simulation of composed probability paths.

Three methods share one Euler--Maruyama loop:

* NR   -- mixed score/velocity transport only, no weights;
* FKC  -- importance weights for constant exponents;
* ACE  -- time-varying exponents, adding per-expert log-density propagation
          and a gamma-rate term to the weight dynamics.

Resampling triggers when the effective sample size falls below a threshold.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ratiopath.composition import Composition, default_grid
from ratiopath.errors import CollapsedRunError, DomainError, PreconditionError

__all__ = [
    "Method",
    "SamplerConfig",
    "ParticleEnsemble",
    "Diagnostics",
    "ess",
    "init",
    "step",
    "maybe_resample",
    "run",
    "hutchinson_divergence",
    "systematic_offspring",
]


class Method(enum.Enum):
    NR = "nr"
    FKC = "fkc"
    ACE = "ace"


@dataclass(frozen=True)
class SamplerConfig:
    """Run parameters.

    The base drift mixes expert velocities; ``"mixture"`` weights them by the
    exponents' boundary-preserving base values (bump excluded), which keeps the
    transport speed sane under large bump amplitudes -- the correction then
    lives where it belongs, in the score and the importance weights (any
    differentiable base drift yields the same weighted law).  ``"mixture_tv"``
    weights velocities by the full time-varying exponents; ``"score_only"``
    drops the velocity mixture entirely (annealed Langevin).
    """

    method: Method
    n_particles: int
    n_steps: int
    sigma: float = 0.5
    ess_threshold: float = 0.7
    seed: int = 0
    drift_mode: str = "mixture"        # "mixture" | "mixture_tv" | "score_only"
    divergence_mode: str = "analytic"  # "analytic" | "hutchinson"
    hutchinson_probes: int = 64
    resampling: str = "systematic"     # "systematic" | "multinomial"
    cache_mode: str = "propagate"      # "propagate" (SDE) | "oracle" (exact re-eval)
    audit_log_caches: bool = False     # record |propagated - oracle| gap per step

    def __post_init__(self):
        if self.n_particles < 2:
            raise DomainError("need at least 2 particles")
        if self.n_steps < 2:
            raise DomainError("need at least 2 steps")
        if not (0.0 <= self.ess_threshold <= 1.0):
            raise DomainError("ess threshold must lie in [0, 1]")
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")
        if self.drift_mode not in ("mixture", "mixture_tv", "score_only"):
            raise DomainError(f"unknown drift mode {self.drift_mode!r}")
        if self.divergence_mode not in ("analytic", "hutchinson"):
            raise DomainError(f"unknown divergence mode {self.divergence_mode!r}")
        if self.resampling not in ("systematic", "multinomial"):
            raise DomainError(f"unknown resampling scheme {self.resampling!r}")
        if self.cache_mode not in ("propagate", "oracle"):
            raise DomainError(f"unknown cache mode {self.cache_mode!r}")


@dataclass
class ParticleEnsemble:
    positions: np.ndarray      # (N, d)
    log_weights: np.ndarray    # (N,)
    log_q_caches: np.ndarray   # (N, n_experts)
    t: float
    nonfinite_total: int = 0

    @property
    def n(self):
        return self.positions.shape[0]

    def copy(self):
        return ParticleEnsemble(self.positions.copy(), self.log_weights.copy(),
                                self.log_q_caches.copy(), self.t, self.nonfinite_total)


@dataclass
class Diagnostics:
    criterion_verdict: str
    criterion_kind: str
    criterion_first_violation: tuple
    collapse_fraction: float
    ess_trace: list = field(default_factory=list)
    weight_var_trace: list = field(default_factory=list)
    criterion_trace: list = field(default_factory=list)
    resample_steps: list = field(default_factory=list)   # (step index, time)
    nonfinite_total: int = 0
    final_action_was_resample: bool = False
    cache_audit_gap: list = field(default_factory=list)  # max |propagated - oracle| per step

    def to_dict(self):
        return {
            "criterion_verdict": self.criterion_verdict,
            "criterion_kind": self.criterion_kind,
            "criterion_first_violation": self.criterion_first_violation,
            "collapse_fraction": self.collapse_fraction,
            "ess_trace": [float(v) for v in self.ess_trace],
            "weight_var_trace": [float(v) for v in self.weight_var_trace],
            "criterion_trace": [float(v) for v in self.criterion_trace],
            "resample_steps": [[int(s), float(t)] for s, t in self.resample_steps],
            "nonfinite_total": int(self.nonfinite_total),
            "final_action_was_resample": bool(self.final_action_was_resample),
            "cache_audit_gap": [float(v) for v in self.cache_audit_gap],
        }


# ---------------------------------------------------------------------------
# deterministic counter-based streams
# ---------------------------------------------------------------------------

_TAG_INIT = 1
_TAG_STEP = 2
_TAG_RESAMPLE = 3
_TAG_FINAL = 4
_TAG_PROBE = 5


def stream(seed, tag, step=0):
    """Philox generator keyed by (seed, tag, step): independent of call order."""
    key = ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) | (int(tag) << 48) | int(step)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------


def ess(log_weights):
    """Effective sample size (sum w)^2 / sum w^2 via a log-sum-exp shift."""
    lw = np.asarray(log_weights, dtype=float)
    m = lw.max()
    if not np.isfinite(m):
        raise DomainError("all particle weights vanished; ESS undefined")
    w = np.exp(lw - m)
    s1 = w.sum()
    s2 = (w * w).sum()
    return float(s1 * s1 / s2)


def init(composition: Composition, cfg: SamplerConfig) -> ParticleEnsemble:
    """Draw the initial ensemble from the composed t=0 product of Gaussians."""
    d = composition.ambient_dim
    precision = np.zeros(d)
    for i, (e, g) in enumerate(zip(composition.experts, composition.exponents)):
        alpha0, beta0 = e.schedule.alpha_beta(0.0)
        if beta0 != 0.0:
            raise PreconditionError("t=0 endpoint is not noise-only for some expert")
        var0 = alpha0 ** 2 * e.initial_variance
        for c in composition.lift.index_sets[i]:
            precision[c] += g.value(0.0) / var0
    if np.any(precision <= 0.0):
        raise PreconditionError(
            f"composed t=0 precision nonpositive: {precision.tolist()}"
        )
    rng = stream(cfg.seed, _TAG_INIT)
    X = rng.standard_normal((cfg.n_particles, d)) / np.sqrt(precision)
    log_w = np.full(cfg.n_particles, -math.log(cfg.n_particles))
    caches = np.stack(
        [e.log_density(composition.lift.project(X, i), 0.0)
         for i, e in enumerate(composition.experts)], axis=1)
    return ParticleEnsemble(X, log_w, caches, 0.0)


def hutchinson_divergence(f, x, n_probes, rng, delta=1e-4):
    """Probe-averaged divergence estimate of a vector field.

    Central-difference Jacobian-vector products against Rademacher probes:
    div f(x) ~ mean_k  eps_k . (f(x + delta eps_k) - f(x - delta eps_k)) / (2 delta).
    """
    x = np.atleast_2d(x)
    est = np.zeros(x.shape[0])
    for _ in range(n_probes):
        eps = rng.integers(0, 2, size=x.shape) * 2.0 - 1.0
        jvp = (f(x + delta * eps) - f(x - delta * eps)) / (2.0 * delta)
        est += np.sum(jvp * eps, axis=1)
    return est / n_probes


def _fields(composition, cfg, x, t, step_index):
    fields = composition.expert_fields(x, t)
    if cfg.divergence_mode == "hutchinson":
        rng = stream(cfg.seed, _TAG_PROBE, step_index)
        for i, e in enumerate(composition.experts):
            xi = composition.lift.project(x, i)
            fields["div_score"][i] = hutchinson_divergence(
                lambda p: e.score(p, t), xi, cfg.hutchinson_probes, rng)
            fields["div_velocity"][i] = hutchinson_divergence(
                lambda p: e.velocity(p, t), xi, cfg.hutchinson_probes, rng)
    return fields


def step(composition, cfg, ens: ParticleEnsemble, t, dt, noise, step_index=0):
    """One explicit Euler--Maruyama step; all fields evaluated at the pre-move
    positions.  The t=0 step evaluates time-dependent quantities at dt/2 (the
    oracles degenerate at exactly 0 for compact targets)."""
    t_eval = t if t > 0.0 else dt / 2.0
    X = ens.positions
    f = _fields(composition, cfg, X, t_eval, step_index)
    gam = composition.gammas(t_eval)
    if cfg.drift_mode == "mixture":
        gv = composition.base_gammas(t_eval)
    elif cfg.drift_mode == "mixture_tv":
        gv = gam
    else:
        gv = np.zeros_like(gam)
    s_star = np.einsum("i,ind->nd", gam, f["scores"])
    v_star = np.einsum("i,ind->nd", gv, f["velocities"])
    div_vstar = gv @ f["div_velocity"]

    sig = cfg.sigma
    drift = v_star + 0.5 * sig * sig * s_star
    # D_i = -div v_i + (v* - v_i) . s_i
    D = -f["div_velocity"] + np.einsum("ind,ind->in", v_star[None] - f["velocities"],
                                       f["scores"])

    new_pos = X + drift * dt + sig * math.sqrt(dt) * noise

    method = cfg.method
    if method is Method.ACE:
        gdot = composition.gamma_rates(t_eval)
        if cfg.cache_mode == "oracle":
            # exact log-density caches at the pre-move state, matching the D_i
            # evaluation point; sidesteps propagation stiffness near t -> 1
            ens.log_q_caches = np.stack(
                [e.log_density(composition.lift.project(X, i), t_eval)
                 for i, e in enumerate(composition.experts)], axis=1)
            dlogq = None
        else:
            dlogq = (D + 0.5 * sig * sig *
                     (np.einsum("ind,nd->in", f["scores"], s_star) + f["div_score"])) * dt
            dlogq += sig * math.sqrt(dt) * np.einsum("ind,nd->in", f["scores"], noise)
        dlogw = (div_vstar + gam @ D) * dt
        if np.any(gdot != 0.0):
            dlogw = dlogw + (ens.log_q_caches @ gdot) * dt
        if dlogq is not None:
            ens.log_q_caches += dlogq.T
    elif method is Method.FKC:
        dlogw = (div_vstar + gam @ D) * dt
    else:
        dlogw = None

    ens.positions = new_pos
    if dlogw is not None:
        ens.log_weights = ens.log_weights + dlogw
    ens.t = t + dt

    bad = ~np.all(np.isfinite(ens.positions), axis=1)
    bad |= np.isnan(ens.log_weights) | (ens.log_weights == np.inf)
    if bad.any():
        ens.positions[bad] = X[bad]
        ens.log_weights[bad] = -np.inf
        ens.log_q_caches[bad] = 0.0
        ens.nonfinite_total += int(bad.sum())
        if ens.nonfinite_total > 0.01 * ens.n:
            raise CollapsedRunError(
                f"{ens.nonfinite_total} particles went non-finite by t={ens.t:.4f}; "
                "the composed path is likely collapsed",
                nonfinite_count=ens.nonfinite_total, step=step_index)
    return ens


def systematic_offspring(weights, u):
    """Offspring indices for systematic resampling given one uniform draw."""
    n = len(weights)
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    points = (np.arange(n) + u) / n
    return np.searchsorted(cum, points)


def maybe_resample(ens: ParticleEnsemble, cfg: SamplerConfig, rng):
    """Resample (positions and log-density caches travel together) when
    ESS < threshold * N; weights reset to uniform.  Returns (ensemble, did)."""
    if cfg.ess_threshold <= 0.0:
        return ens, False
    e = ess(ens.log_weights)
    if e >= cfg.ess_threshold * ens.n:
        return ens, False
    lw = ens.log_weights - ens.log_weights.max()
    w = np.exp(lw)
    w /= w.sum()
    if cfg.resampling == "systematic":
        idx = systematic_offspring(w, rng.random())
    else:
        idx = np.searchsorted(np.cumsum(w), rng.random(ens.n))
        idx = np.clip(idx, 0, ens.n - 1)
    ens.positions = ens.positions[idx].copy()
    ens.log_q_caches = ens.log_q_caches[idx].copy()
    ens.log_weights = np.full(ens.n, -math.log(ens.n))
    return ens, True


def grid_times(cfg):
    """Field-evaluation times of a run: dt/2 for the first step, then k*dt."""
    dt = 1.0 / cfg.n_steps
    times = [dt / 2.0] + [k * dt for k in range(1, cfg.n_steps - 1)]
    return np.array(times)


def run(composition: Composition, cfg: SamplerConfig, criterion_grid=None,
        observer=None):
    """Integrate the weighted SDE from t=0 to t_end = 1 - 1/T.

    The composition is validated first and the path-existence criterion is
    evaluated and recorded; a collapsed verdict does not stop the run (the
    baselines are expected to fail loudly, not silently).  ``observer``, if
    given, is called as observer(step_index, ensemble) after each step and
    must treat the ensemble as read-only.
    """
    violations = composition.validate()
    if violations:
        raise PreconditionError("invalid composition: " + "; ".join(violations))

    if criterion_grid is None:
        criterion_grid = default_grid()
    if composition.all_gaussian():
        report = composition.check_path_gaussian(criterion_grid)
    else:
        report = composition.check_path(criterion_grid)

    diag = Diagnostics(
        criterion_verdict=report.verdict,
        criterion_kind=report.kind,
        criterion_first_violation=report.first_violation,
        collapse_fraction=report.collapse_fraction,
    )

    dt = 1.0 / cfg.n_steps
    ens = init(composition, cfg)
    n_prop_steps = cfg.n_steps - 1          # lands at t_end = 1 - dt
    weighted = cfg.method in (Method.FKC, Method.ACE)
    for k in range(n_prop_steps):
        t = k * dt
        t_eval = t if t > 0 else dt / 2.0
        noise = stream(cfg.seed, _TAG_STEP, k).standard_normal(ens.positions.shape)
        ens = step(composition, cfg, ens, t, dt, noise, step_index=k)
        if observer is not None:
            observer(k, ens)
        if cfg.audit_log_caches and cfg.method is Method.ACE:
            oracle = np.stack(
                [e.log_density(composition.lift.project(ens.positions, i), min(t + dt, 1 - dt))
                 for i, e in enumerate(composition.experts)], axis=1)
            diag.cache_audit_gap.append(float(np.max(np.abs(oracle - ens.log_q_caches))))
        if composition.all_gaussian():
            _, nec = composition.gmm_criteria(t_eval)
            diag.criterion_trace.append(float(nec.min()))
        else:
            diag.criterion_trace.append(float(composition.criterion_at(t_eval).min()))
        did = False
        if weighted:
            diag.ess_trace.append(ess(ens.log_weights))
            lw = ens.log_weights - ens.log_weights.max()
            w = np.exp(lw)
            w /= w.sum()
            diag.weight_var_trace.append(float(np.var(w * ens.n)))
            ens, did = maybe_resample(ens, cfg, stream(cfg.seed, _TAG_RESAMPLE, k))
            if did:
                diag.resample_steps.append((k, ens.t))
        diag.final_action_was_resample = did
    diag.nonfinite_total = ens.nonfinite_total
    return ens, diag


def force_final_resample(ens: ParticleEnsemble, cfg: SamplerConfig):
    """Equal-weight sample set for metric computation (weighted methods only)."""
    if cfg.method is Method.NR:
        return ens.positions.copy()
    out = ens.copy()
    lw = out.log_weights - out.log_weights.max()
    w = np.exp(lw)
    w /= w.sum()
    rng = stream(cfg.seed, _TAG_FINAL)
    idx = systematic_offspring(w, rng.random())
    return out.positions[idx].copy()
