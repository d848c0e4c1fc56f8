import numpy as np
import pytest

from ratiopath.composition import (
    Composition,
    CoordinateLift,
    ExponentSchedule,
    default_grid,
)
from ratiopath.errors import DomainError, PreconditionError
from ratiopath.experts import ExpertPath, GmmTarget, IsotropicGaussian, RectMixture
from ratiopath.schedules import NoiseSchedule, ScheduleKind

LIN = NoiseSchedule(ScheduleKind.LINEAR)
CUS = NoiseSchedule(ScheduleKind.CUSTOM)


def checker_like(gammas=(1.0, 1.0, -1.0), bump=0.0, bump_index=1):
    """Criterion-equivalent stand-in for the checker config (rect targets)."""
    experts = [
        ExpertPath(2, LIN, RectMixture.uniform([-4, -4], [4, 4])),
        ExpertPath(1, LIN, RectMixture.uniform([0], [4])),
        ExpertPath(1, CUS, RectMixture.uniform([-4], [4])),
    ]
    exps = [ExponentSchedule(g) for g in gammas]
    if bump:
        exps[bump_index] = exps[bump_index].with_bump(bump)
    return Composition(experts, exps, CoordinateLift(2, [(0, 1), (0,), (0,)]))


def gaussian_counterexample():
    experts = [
        ExpertPath(1, LIN, IsotropicGaussian(0.5)),
        ExpertPath(1, LIN, IsotropicGaussian(7.0)),
        ExpertPath(1, LIN, IsotropicGaussian(1.0, initial_variance=1.5)),
        ExpertPath(1, LIN, IsotropicGaussian(1.0, initial_variance=1.5)),
    ]
    exps = [ExponentSchedule(1.0)] * 2 + [ExponentSchedule(-1.0)] * 2
    return Composition(experts, exps, CoordinateLift(1, [(0,)] * 4))


# -- exponent schedules -------------------------------------------------------


def test_bump_preserves_endpoints_exactly():
    for b in (0.0, 1.0, 30.0, 1e4):
        g = ExponentSchedule(1.0, -2.0, "linear").with_bump(b)
        assert g.value(0.0) == 1.0
        assert g.value(1.0) == -2.0


def test_exponent_rate_matches_finite_difference():
    g = ExponentSchedule(0.5, 2.0, "linear").with_bump(7.0)
    ts = np.linspace(0.05, 0.95, 19)
    h = 1e-7
    fd = (g.value(ts + h) - g.value(ts - h)) / (2 * h)
    assert np.max(np.abs(g.rate(ts) - fd)) < 1e-6


def test_constant_form_rejects_mismatched_endpoints():
    with pytest.raises(DomainError):
        ExponentSchedule(1.0, 2.0, "constant")


# -- criterion ----------------------------------------------------------------


def test_checker_criterion_values():
    comp = checker_like()
    assert comp.criterion_at(0.5, 0) == pytest.approx(-8.0, abs=1e-12)
    assert comp.criterion_at(0.5, 1) == pytest.approx(4.0, abs=1e-12)


def test_homogeneous_cfg_pair_always_positive():
    for omega in (0.5, 1.0, 4.0, 15.0):
        experts = [ExpertPath(1, LIN, IsotropicGaussian(1.0)) for _ in range(2)]
        comp = Composition(experts,
                           [ExponentSchedule(omega), ExponentSchedule(1.0 - omega)],
                           CoordinateLift(1, [(0,), (0,)]))
        grid = default_grid()
        vals = comp.criterion_values(grid)[:, 0]
        alpha, _, _, _ = LIN.eval(grid)
        assert np.allclose(vals, 1.0 / alpha ** 2, rtol=1e-12)


def test_check_path_checker_verdicts():
    assert not checker_like().check_path().is_valid
    assert 0.116 <= checker_like().check_path().first_violation[0] <= 0.634
    assert checker_like(bump=30.0).check_path().is_valid
    assert not checker_like(bump=10.0).check_path().is_valid


def test_check_path_reports_intervals_and_fraction():
    rep = checker_like().check_path()
    assert len(rep.collapse_intervals) == 1
    lo, hi = rep.collapse_intervals[0]
    assert lo == pytest.approx(0.116, abs=2e-3)
    assert hi == pytest.approx(0.634, abs=2e-3)
    assert rep.collapse_fraction == pytest.approx((hi - lo), abs=0.01)


def test_criterion_grid_validation():
    comp = checker_like()
    with pytest.raises(DomainError):
        comp.check_path(np.array([0.2, 0.1]))
    with pytest.raises(DomainError):
        comp.check_path(np.array([0.5, 1.0]))


def test_criterion_linear_in_exponent_scale():
    comp = checker_like()
    scaled = checker_like(gammas=(2.5, 2.5, -2.5))
    grid = default_grid()
    assert np.allclose(scaled.criterion_values(grid),
                       2.5 * comp.criterion_values(grid), rtol=1e-12)
    assert scaled.check_path().verdict == comp.check_path().verdict


# -- Gaussian criteria ---------------------------------------------------------


def test_effective_precision_counterexample():
    comp = gaussian_counterexample()
    assert comp.effective_precision_gaussian(0.5) == pytest.approx(-1.0 / 30.0, abs=1e-9)
    assert comp.effective_precision_gaussian(0.0) == pytest.approx(2.0 / 3.0, abs=1e-9)
    assert comp.effective_precision_gaussian(1.0) == pytest.approx(1.0 / 7.0, abs=1e-9)


def test_effective_precision_type_errors():
    comp = checker_like()
    with pytest.raises(DomainError):
        comp.effective_precision_gaussian(0.5)


def test_gmm_criteria_collapse_to_effective_precision():
    comp = gaussian_counterexample()
    suff, nec = comp.gmm_criteria(0.5)
    ep = comp.effective_precision_gaussian(0.5)
    assert suff[0] == pytest.approx(ep, abs=1e-12)
    assert nec[0] == pytest.approx(ep, abs=1e-12)


def test_gmm_criteria_two_component_eigenvalues():
    # with beta = alpha = 1/sqrt(2): lambda_max over {0.5 I, 2 I} is (2+1)/2
    gmm = GmmTarget([0.5, 0.5], [[0.0], [0.0]], [0.5 * np.eye(1), 2.0 * np.eye(1)])
    e = ExpertPath(1, NoiseSchedule(ScheduleKind.COSINE), gmm)
    comp = Composition([e], [ExponentSchedule(1.0)], CoordinateLift(1, [(0,)]))
    suff, nec = comp.gmm_criteria(0.5)
    assert suff[0] == pytest.approx(1.0 / 1.5, abs=1e-12)
    assert nec[0] == pytest.approx(1.0 / 0.75, abs=1e-12)


def test_gaussian_path_report_flags_counterexample():
    rep = gaussian_counterexample().check_path_gaussian()
    assert not rep.is_valid
    assert rep.kind == "gaussian"
    lo, hi = rep.collapse_intervals[0]
    assert lo < 0.5 < hi


# -- bump search ---------------------------------------------------------------


def test_find_bump_checker():
    b, rep = checker_like().find_bump(j=1)
    assert 10 < b <= 20
    assert rep.is_valid


def test_find_bump_already_valid_returns_zero():
    comp = checker_like(gammas=(1.0, 1.0, -0.1))
    b, rep = comp.find_bump(j=1)
    assert b == 0.0


def test_find_bump_default_index_matches_proof_rule():
    comp = checker_like()
    j = comp.default_bump_index()
    # both positive-exponent experts share the linear schedule; the first wins the tie
    assert j == 0
    b, rep = comp.find_bump()
    assert rep.is_valid


def test_find_bump_requires_boundary_positivity():
    comp = checker_like(gammas=(1.0, -1.0, -1.0))  # criterion at 0 is -1
    with pytest.raises(PreconditionError):
        comp.find_bump(j=0)


def test_repair_monotone_in_bump():
    comp = checker_like()
    grid = default_grid()
    prev = comp.with_bump(1, 0.0).criterion_values(grid)
    for b in (5.0, 14.0, 30.0, 100.0):
        cur = comp.with_bump(1, b).criterion_values(grid)
        assert np.all(cur >= prev - 1e-12)
        prev = cur
    assert comp.with_bump(1, 14.0).check_path().is_valid
    assert comp.with_bump(1, 100.0).check_path().is_valid


def test_randomized_triplets_always_repairable():
    # positive-endpoint triplets are always fixed by a finite bump
    rng = np.random.default_rng(123)
    kinds = list(ScheduleKind)
    n_success = 0
    for trial in range(100):
        ks = rng.choice(len(kinds), size=3)
        w = 10.0 ** rng.uniform(-0.3, 1.2)
        experts = [ExpertPath(1, NoiseSchedule(kinds[k]), IsotropicGaussian(1.0))
                   for k in ks]
        comp = Composition(
            experts,
            [ExponentSchedule(1.0), ExponentSchedule(w), ExponentSchedule(-w)],
            CoordinateLift(1, [(0,)] * 3))
        ends = comp.criterion_values(np.array([0.0, 0.999]))
        if np.any(ends <= 0):
            continue
        b, rep = comp.find_bump()
        assert b is not None, (trial, ks, w)
        assert rep.is_valid
        assert np.all(rep.c_min > 0)
        n_success += 1
    assert n_success > 60  # most triplets satisfy the endpoint hypothesis


# -- mixed fields --------------------------------------------------------------


def test_mixed_score_single_expert_identity():
    e = ExpertPath(2, LIN, IsotropicGaussian(1.0))
    comp = Composition([e], [ExponentSchedule(1.0)], CoordinateLift(2, [(0, 1)]))
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert np.array_equal(comp.mixed_score(x, 0.5), e.score(x, 0.5))
    assert np.array_equal(comp.mixed_velocity(x, 0.5), e.velocity(x, 0.5))


def test_mixed_score_cancellation():
    e1 = ExpertPath(1, LIN, IsotropicGaussian(2.0))
    e2 = ExpertPath(1, LIN, IsotropicGaussian(2.0))
    comp = Composition([e1, e2], [ExponentSchedule(1.0), ExponentSchedule(-1.0)],
                       CoordinateLift(1, [(0,), (0,)]))
    x = np.random.default_rng(1).normal(size=(10, 1))
    assert np.allclose(comp.mixed_score(x, 0.4), 0.0, atol=1e-15)


def test_mixed_fields_match_finite_difference(small_checker_composition):
    comp = small_checker_composition
    t = comp.experts[0].target.times[40]
    rng = np.random.default_rng(5)
    x = rng.uniform(-1.0, 1.0, size=(30, 2))
    ms = comp.mixed_score(x, t)
    h = 1e-5

    def log_h(p):
        out = np.zeros(p.shape[0])
        for e, g, idx in zip(comp.experts, comp.exponents, comp.lift.index_sets):
            out += g.value(t) * e.log_density(p[:, list(idx)], t)
        return out

    fd = np.empty_like(ms)
    for k in range(2):
        dx = np.zeros(2)
        dx[k] = h
        fd[:, k] = (log_h(x + dx) - log_h(x - dx)) / (2 * h)
    assert np.max(np.abs(ms - fd)) < 1e-3


# -- validation ----------------------------------------------------------------


def test_validate_checker_ok(small_checker_composition):
    assert small_checker_composition.validate() == []


def test_validate_support_violation():
    num = ExpertPath(1, LIN, RectMixture.uniform([-4], [4]))
    den = ExpertPath(1, LIN, RectMixture.uniform([0], [4]))
    comp = Composition([num, den], [ExponentSchedule(1.0), ExponentSchedule(-1.0)],
                       CoordinateLift(1, [(0,), (0,)]))
    violations = comp.validate()
    assert any(v.startswith("support:") for v in violations)


def test_validate_empty_composition():
    comp = Composition([], [], CoordinateLift(1, []))
    assert any("coverage" in v for v in comp.validate())


def test_validate_uncovered_coordinate():
    e = ExpertPath(1, LIN, IsotropicGaussian(1.0))
    comp = Composition([e], [ExponentSchedule(1.0)], CoordinateLift(2, [(0,)]))
    assert any("coverage" in v for v in comp.validate())


def test_lift_roundtrip():
    lift = CoordinateLift(3, [(2, 0)])
    x = np.arange(6.0).reshape(2, 3)
    proj = lift.project(x, 0)
    assert proj.tolist() == [[2.0, 0.0], [5.0, 3.0]]
    lifted = lift.lift(proj, 0)
    assert np.array_equal(lift.project(lifted, 0), proj)
