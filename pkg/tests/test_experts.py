import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import energy_distance, multivariate_normal

from ratiopath.errors import DomainError, ExtrapolationError, PreconditionError
from ratiopath.experts import (
    ExpertPath,
    GmmTarget,
    GridTarget,
    IsotropicGaussian,
    RectMixture,
    build_grid_target,
)
from ratiopath.schedules import NoiseSchedule, ScheduleKind

LIN = NoiseSchedule(ScheduleKind.LINEAR)


def fd_gradient(fn, x, h=1e-6):
    out = np.empty_like(x)
    for k in range(x.shape[1]):
        dx = np.zeros(x.shape[1])
        dx[k] = h
        out[:, k] = (fn(x + dx) - fn(x - dx)) / (2 * h)
    return out


def fd_divergence(fn, x, h=1e-4):
    out = np.zeros(x.shape[0])
    for k in range(x.shape[1]):
        dx = np.zeros(x.shape[1])
        dx[k] = h
        out += (fn(x + dx)[:, k] - fn(x - dx)[:, k]) / (2 * h)
    return out


# -- log densities ----------------------------------------------------------


def test_gaussian_log_density_midpoint():
    e = ExpertPath(1, LIN, IsotropicGaussian(1.0))
    # variance (1-t)^2 + t^2 = 0.5 at the midpoint
    assert e.log_density(np.zeros(1), 0.5) == pytest.approx(
        -0.5 * math.log(2 * math.pi * 0.5), abs=1e-14)


@pytest.mark.parametrize("target", [
    IsotropicGaussian(2.0),
    GmmTarget([0.3, 0.7], [[1.0, 0.0], [-0.5, 1.0]], [np.eye(2), 0.5 * np.eye(2)]),
    RectMixture.uniform([-1.0, -1.0], [1.0, 1.0]),
])
def test_t0_is_standard_normal(target):
    e = ExpertPath(2, LIN, target)
    pts = np.array([[0.0, 0.0], [1.0, -0.5], [2.0, 2.0]])
    expect = -math.log(2 * math.pi) - 0.5 * np.sum(pts ** 2, axis=1)
    assert np.allclose(e.log_density(pts, 0.0), expect, atol=1e-12)


def test_rect_log_density_matches_quadrature():
    e = ExpertPath(1, LIN, RectMixture.uniform([-1.0], [1.0]))
    val = e.log_density(np.zeros(1), 0.5)
    exact, _ = quad(lambda y: math.exp(-(0.5 * y) ** 2 / 0.5) / math.sqrt(2 * math.pi * 0.25) * 0.5,
                    -1.0, 1.0)
    assert val == pytest.approx(math.log(exact), abs=1e-8)


def test_gmm_path_moments_closed_form():
    # component law at time t is N(beta mu_j, beta^2 Sigma_j + alpha^2 I), exactly
    mu = np.array([[1.0, -2.0]])
    cov = np.array([[[1.5, 0.3], [0.3, 0.8]]])
    e = ExpertPath(2, LIN, GmmTarget([1.0], mu, cov))
    t = 0.37
    a, b = LIN.alpha_beta(t)
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(20, 2))
    expect = multivariate_normal(mean=b * mu[0], cov=b * b * cov[0] + a * a * np.eye(2))
    assert np.allclose(e.log_density(pts, t), expect.logpdf(pts), atol=1e-12)


@pytest.mark.parametrize("target,dim", [
    (IsotropicGaussian(0.7), 1),
    (GmmTarget([0.5, 0.5], [[1.0], [-1.0]], [np.eye(1) * 0.3, np.eye(1) * 0.6]), 1),
    (RectMixture([0.4, 0.6], [[-2.0], [0.5]], [[0.0], [2.0]]), 1),
])
def test_normalization(target, dim):
    e = ExpertPath(dim, LIN, target)
    # spacing fine enough to resolve the alpha = 1e-3 edge layers at t_end
    xs = np.linspace(-12, 12, 120001)[:, None]
    w = xs[1, 0] - xs[0, 0]
    for t in (0.0, 0.3, 0.7, 0.999):
        mass = np.exp(e.log_density(xs, t)).sum() * w
        assert mass == pytest.approx(1.0, abs=1e-4), t


# -- scores and divergences --------------------------------------------------


def test_gaussian_score_example():
    e = ExpertPath(2, LIN, IsotropicGaussian(1.0))
    assert np.allclose(e.score(np.array([1.0, 1.0]), 0.5), [-2.0, -2.0], atol=1e-14)


def test_symmetric_rect_score_zero_at_origin():
    e = ExpertPath(2, LIN, RectMixture.uniform([-1.5, -0.5], [1.5, 0.5]))
    for t in (0.0, 0.2, 0.8):
        assert np.allclose(e.score(np.zeros(2), t), 0.0, atol=1e-12)


def test_single_component_gmm_equals_gaussian():
    g = ExpertPath(2, LIN, IsotropicGaussian(2.0))
    m = ExpertPath(2, LIN, GmmTarget([1.0], [[0.0, 0.0]], [2.0 * np.eye(2)]))
    pts = np.random.default_rng(0).normal(size=(40, 2))
    for t in (0.1, 0.6, 0.95):
        assert np.allclose(g.score(pts, t), m.score(pts, t), atol=1e-12)
        assert np.allclose(g.log_density(pts, t), m.log_density(pts, t), atol=1e-12)


@pytest.mark.parametrize("target", [
    IsotropicGaussian(1.3),
    GmmTarget([0.4, 0.6], [[1.0, 0.0], [-1.0, 0.5]],
              [np.eye(2) * 0.5, [[0.8, 0.2], [0.2, 0.5]]]),
    RectMixture([0.5, 0.5], [[-1.0, -1.0], [0.5, -0.5]], [[0.0, 0.0], [1.5, 1.0]]),
])
def test_score_is_gradient_of_log_density(target):
    e = ExpertPath(2, LIN, target)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(60, 2)) * 0.7
    for t in (0.1, 0.5, 0.8):
        s = e.score(x, t)
        fd = fd_gradient(lambda p, tt=t: e.log_density(p, tt), x)
        rel = np.abs(s - fd) / np.maximum(np.abs(fd), 1e-2)
        assert rel.max() < 1e-5, (t, rel.max())


@pytest.mark.parametrize("target", [
    IsotropicGaussian(1.3),
    GmmTarget([0.4, 0.6], [[1.0, 0.0], [-1.0, 0.5]],
              [np.eye(2) * 0.5, [[0.8, 0.2], [0.2, 0.5]]]),
    RectMixture([0.5, 0.5], [[-1.0, -1.0], [0.5, -0.5]], [[0.0, 0.0], [1.5, 1.0]]),
])
def test_div_score_matches_finite_differences(target):
    e = ExpertPath(2, LIN, target)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(60, 2)) * 0.6
    for t in (0.1, 0.5, 0.8):
        lap = e.div_score(x, t)
        fd = fd_divergence(lambda p, tt=t: e.score(p, tt), x)
        rel = np.abs(lap - fd) / np.maximum(np.abs(fd), 1e-2)
        assert rel.max() < 1e-4, (t, rel.max())


def test_isotropic_gaussian_div_score_closed_form():
    e = ExpertPath(3, LIN, IsotropicGaussian(2.0))
    t = 0.4
    v = (1 - t) ** 2 + t * t * 2.0
    x = np.random.default_rng(1).normal(size=(5, 3))
    assert np.allclose(e.div_score(x, t), -3.0 / v, atol=1e-14)


# -- velocities ---------------------------------------------------------------


@pytest.mark.parametrize("kind", list(ScheduleKind))
def test_gaussian_velocity_closed_form(kind):
    s = NoiseSchedule(kind)
    e = ExpertPath(2, s, IsotropicGaussian(1.0))
    t = 0.37
    a, b, da, db = s.eval(t)
    x = np.random.default_rng(5).normal(size=(8, 2))
    expect = (a * da + b * db) / (a * a + b * b) * x
    assert np.allclose(e.velocity(x, t), expect, atol=1e-12)


def test_score_reconstructed_from_velocity_linear_schedule():
    # under the linear schedule: score = (t v - x) / (1 - t)
    gmm = GmmTarget([0.4, 0.6], [[1.0, 0.0], [-1.0, 0.5]],
                    [np.eye(2) * 0.5, [[0.8, 0.2], [0.2, 0.5]]])
    e = ExpertPath(2, LIN, gmm)
    rng = np.random.default_rng(13)
    x = rng.normal(size=(50, 2))
    for t in (0.2, 0.5, 0.9):
        v = e.velocity(x, t)
        s = (t * v - x) / (1.0 - t)
        assert np.max(np.abs(s - e.score(x, t))) < 1e-10


def test_velocity_zero_at_origin_for_symmetric_target():
    e = ExpertPath(1, LIN, RectMixture.uniform([-2.0], [2.0]))
    assert np.allclose(e.velocity(np.zeros(1), 0.5), 0.0, atol=1e-12)


def test_div_velocity_matches_finite_differences():
    gmm = GmmTarget([0.5, 0.5], [[0.5, 0.0], [-0.5, 0.5]],
                    [np.eye(2) * 0.4, np.eye(2) * 0.9])
    e = ExpertPath(2, LIN, gmm)
    x = np.random.default_rng(2).normal(size=(40, 2)) * 0.5
    for t in (0.2, 0.6):
        dv = e.div_velocity(x, t)
        fd = fd_divergence(lambda p, tt=t: e.velocity(p, tt), x)
        assert np.max(np.abs(dv - fd) / np.maximum(np.abs(fd), 1e-2)) < 1e-4


def test_velocity_transport_reaches_uniform_target():
    # deterministic flow from t=0 transports a cloud onto the 1D uniform target
    e = ExpertPath(1, LIN, RectMixture.uniform([-1.0], [1.0]))
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2000, 1))
    steps = 1000
    dt = 1.0 / steps
    t_end = 1.0 - dt
    for k in range(steps - 1):
        t = max(k * dt, dt / 2)
        x = x + e.velocity(x, t) * dt
    direct = rng.uniform(-1.0, 1.0, size=2000)
    assert energy_distance(x[:, 0], direct) < 0.05


def test_domain_errors():
    e = ExpertPath(1, LIN, IsotropicGaussian(1.0))
    with pytest.raises(DomainError):
        e.log_density(np.zeros(1), 1.0)
    with pytest.raises(DomainError):
        e.score(np.zeros(1), -0.2)


def test_gmm_validation_errors():
    with pytest.raises(DomainError):
        GmmTarget([0.5, 0.6], [[0.0], [1.0]], [np.eye(1), np.eye(1)])
    with pytest.raises(DomainError):
        GmmTarget([1.0], [[0.0, 0.0]], [np.array([[1.0, 2.0], [2.0, 1.0]])])
    with pytest.raises(DomainError):
        RectMixture.uniform([1.0], [0.5])


# -- edge-smoothed rect targets ----------------------------------------------


def test_edge_smoothing_is_exact_convolution():
    # smoothed uniform == path with noise scale sqrt(alpha^2 + beta^2 sigma^2)
    sig = 0.05
    sm = ExpertPath(1, LIN, RectMixture.uniform([-1.0], [1.0], edge_sigma=sig))
    t = 0.6
    a, b = LIN.alpha_beta(t)
    s_eff = math.sqrt(a * a + (b * sig) ** 2)
    xs = np.linspace(-1.5, 1.5, 41)[:, None]
    exact = []
    for x in xs[:, 0]:
        val, _ = quad(lambda y: math.exp(-(x - b * y) ** 2 / (2 * s_eff ** 2))
                      / math.sqrt(2 * math.pi) / s_eff * 0.5, -1.0, 1.0)
        exact.append(math.log(val))
    assert np.allclose(sm.log_density(xs, t), exact, atol=1e-8)


# -- grid targets --------------------------------------------------------------


def uniform_sq_box_mass(x0, x1, y0, y1):
    cx0, cx1 = np.clip(x0, -1, 1), np.clip(x1, -1, 1)
    cy0, cy1 = np.clip(y0, -1, 1), np.clip(y1, -1, 1)
    return np.maximum(cx1 - cx0, 0) * np.maximum(cy1 - cy0, 0) / 4.0


@pytest.fixture(scope="module")
def uniform_grid():
    return build_grid_target(None, ((-6, 6), (-6, 6)), 768, [0.1, 0.5, 0.9], LIN,
                             box_mass=uniform_sq_box_mass, target_key="uniform_sq")


def interior_lattice(t, h, n=41):
    a, b = LIN.alpha_beta(t)
    margin = 4.0 * a if a < 0.25 else 0.0
    lim = b - margin - 2 * h
    if lim <= 0.05:
        lim = 0.05
    xs = np.linspace(-lim, lim, n)
    return np.stack(np.meshgrid(xs, xs), -1).reshape(-1, 2)


def test_grid_matches_rect_oracle(uniform_grid):
    e_grid = ExpertPath(2, LIN, uniform_grid)
    e_rect = ExpertPath(2, LIN, RectMixture.uniform([-1.0, -1.0], [1.0, 1.0]))
    h = 12.0 / 768
    for t in (0.1, 0.5, 0.9):
        pts = interior_lattice(t, h)
        assert np.max(np.abs(e_grid.log_density(pts, t) - e_rect.log_density(pts, t))) < 1e-3
        assert np.max(np.abs(e_grid.score(pts, t) - e_rect.score(pts, t))) < 1e-3


def test_grid_div_score_matches_rect_oracle(uniform_grid):
    e_grid = ExpertPath(2, LIN, uniform_grid)
    e_rect = ExpertPath(2, LIN, RectMixture.uniform([-1.0, -1.0], [1.0, 1.0]))
    for t in (0.1, 0.5):
        pts = interior_lattice(t, 12.0 / 768)
        assert np.max(np.abs(e_grid.div_score(pts, t) - e_rect.div_score(pts, t))) < 1e-3


def test_grid_mass_within_tolerance(uniform_grid):
    assert np.max(np.abs(uniform_grid.masses - 1.0)) < 1e-4


def test_point_mass_target_becomes_gaussian():
    # a single occupied fine cell convolves to N(beta * cell center, alpha^2 I)
    # within grid resolution
    def box_mass(x0, x1, y0, y1):
        inside = (x0 <= 0.0) & (x1 > 0.0) & (y0 <= 0.0) & (y1 > 0.0)
        return inside.astype(float)

    grid = build_grid_target(None, ((-4, 4), (-4, 4)), 512, [0.5], LIN,
                             box_mass=box_mass, target_key="dirac")
    e = ExpertPath(2, LIN, grid)
    h = 8.0 / 512
    t = 0.5
    a, _ = LIN.alpha_beta(t)
    # the scaled point mass lands in the grid cell with corner at the origin
    center = np.array([h / 2, h / 2])
    xs = np.linspace(-1.2, 1.2, 25)
    pts = np.stack(np.meshgrid(xs, xs), -1).reshape(-1, 2)
    expect = (-math.log(2 * math.pi * a * a)
              - np.sum((pts - center) ** 2, axis=1) / (2 * a * a))
    assert np.max(np.abs(e.log_density(pts, t) - expect)) < h


def test_grid_refuses_mass_leak():
    with pytest.raises(PreconditionError):
        # domain barely larger than the support leaves no room for the kernel
        build_grid_target(None, ((-1.2, 1.2), (-1.2, 1.2)), 256, [0.5], LIN,
                          box_mass=uniform_sq_box_mass, target_key="tight")


def test_grid_resolution_floor():
    with pytest.raises(PreconditionError):
        build_grid_target(None, ((-6, 6), (-6, 6)), 128, [0.5], LIN,
                          box_mass=uniform_sq_box_mass)


def test_grid_time_and_extrapolation_errors(uniform_grid):
    e = ExpertPath(2, LIN, uniform_grid)
    with pytest.raises(ExtrapolationError):
        e.log_density(np.zeros(2), 0.3)  # 0.3 is not a tabulated time
    strict = GridTarget(uniform_grid.xs, uniform_grid.ys, uniform_grid.times,
                        uniform_grid.log_q, uniform_grid.score_x, uniform_grid.score_y,
                        uniform_grid.lap_log, uniform_grid.base_mass,
                        uniform_grid.schedule_name, uniform_grid.initial_variance,
                        uniform_grid.target_key, uniform_grid.masses,
                        alphas=uniform_grid.alphas, far_field=False)
    es = ExpertPath(2, LIN, strict)
    with pytest.raises(ExtrapolationError):
        es.log_density(np.array([7.0, 0.0]), 0.5)


def test_far_field_continuation_is_continuous(uniform_grid):
    e = ExpertPath(2, LIN, uniform_grid)
    edge = uniform_grid.xs[-1]
    inside = np.array([[edge - 1e-6, 0.0]])
    outside = np.array([[edge + 1e-6, 0.0]])
    t = 0.5
    assert abs(e.log_density(inside, t)[0] - e.log_density(outside, t)[0]) < 1e-4
    assert np.max(np.abs(e.score(inside, t) - e.score(outside, t))) < 1e-2


def test_grid_cache_roundtrip(tmp_path, uniform_grid):
    path = tmp_path / "grid.bin"
    uniform_grid.save(path)
    loaded = GridTarget.load(path)
    assert np.array_equal(loaded.log_q, uniform_grid.log_q)
    assert np.array_equal(loaded.score_x, uniform_grid.score_x)
    assert np.array_equal(loaded.lap_log, uniform_grid.lap_log)
    assert loaded.content_hash() == uniform_grid.content_hash()
    assert loaded.times.tolist() == uniform_grid.times.tolist()


def test_grid_build_is_deterministic():
    kw = dict(box_mass=uniform_sq_box_mass, target_key="uniform_sq")
    g1 = build_grid_target(None, ((-5, 5), (-5, 5)), 256, [0.4], LIN, **kw)
    g2 = build_grid_target(None, ((-5, 5), (-5, 5)), 256, [0.4], LIN, **kw)
    assert np.array_equal(g1.log_q, g2.log_q)
    assert g1.content_hash() == g2.content_hash()
