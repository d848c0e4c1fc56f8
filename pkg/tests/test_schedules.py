import math

import numpy as np
import pytest

from ratiopath.errors import DomainError
from ratiopath.schedules import SCHEDULE_NAMES, NoiseSchedule, ScheduleKind

EXACT_BOUNDARY = [ScheduleKind.LINEAR, ScheduleKind.ONE_MINUS_T_SQUARED,
                  ScheduleKind.COSINE, ScheduleKind.CUSTOM, ScheduleKind.EDM]
SOFT_BOUNDARY = [ScheduleKind.DDPM, ScheduleKind.SIGMOID]


def test_closed_form_values():
    assert NoiseSchedule(ScheduleKind.LINEAR).eval(0.5)[:2] == (0.5, 0.5)
    a, b, _, _ = NoiseSchedule(ScheduleKind.COSINE).eval(0.5)
    assert a == pytest.approx(math.cos(math.pi / 4), abs=1e-15)
    assert b == pytest.approx(math.sin(math.pi / 4), abs=1e-15)
    a, _, _, _ = NoiseSchedule(ScheduleKind.DDPM).eval(1.0)
    assert a == pytest.approx(math.exp(-5.0), rel=1e-12)
    a, _, _, _ = NoiseSchedule(ScheduleKind.CUSTOM).eval(0.5)
    assert a == pytest.approx(0.25, abs=1e-15)
    # edm noise scale is the shifted parabola
    _, b, _, _ = NoiseSchedule(ScheduleKind.EDM).eval(0.25)
    assert b == pytest.approx(1.0 - (0.25 - 1.0) ** 2, abs=1e-15)


@pytest.mark.parametrize("kind", EXACT_BOUNDARY)
def test_exact_boundaries(kind):
    s = NoiseSchedule(kind)
    a0, b0, _, _ = s.eval(0.0)
    a1, b1, _, _ = s.eval(1.0)
    assert abs(a0 - 1.0) < 1e-9
    assert abs(b0) < 1e-9
    assert abs(b1 - 1.0) < 1e-9


@pytest.mark.parametrize("kind", SOFT_BOUNDARY)
def test_soft_boundaries(kind):
    s = NoiseSchedule(kind)
    a0, b0, _, _ = s.eval(0.0)
    a1, _, _, _ = s.eval(1.0)
    assert a0 >= 0.999
    assert a1 <= 0.07
    assert abs(b0) < 1e-9


@pytest.mark.parametrize("kind", list(ScheduleKind))
def test_alpha_positive_interior(kind):
    grid = np.arange(0, 1000) * 1e-3
    a, _, _, _ = NoiseSchedule(kind).eval(grid)
    assert np.all(a > 0)


@pytest.mark.parametrize("kind", list(ScheduleKind))
def test_derivatives_match_finite_differences(kind):
    s = NoiseSchedule(kind)
    grid = np.arange(1, 100) * 1e-2
    h = 1e-6
    a, b, da, db = s.eval(grid)
    ap, bp, _, _ = s.eval(grid + h)
    am, bm, _, _ = s.eval(grid - h)
    fd_a = (ap - am) / (2 * h)
    fd_b = (bp - bm) / (2 * h)
    assert np.max(np.abs(da - fd_a) / np.maximum(np.abs(fd_a), 1e-3)) < 1e-5
    assert np.max(np.abs(db - fd_b) / np.maximum(np.abs(fd_b), 1e-3)) < 1e-5


def test_ddpm_variance_preserving_identity():
    s = NoiseSchedule(ScheduleKind.DDPM)
    grid = np.linspace(0.0, 1.0, 501)
    a, b, _, _ = s.eval(grid)
    assert np.max(np.abs(a * a + b * b - 1.0)) < 1e-12


def test_custom_poly_dips_below_linear():
    s = NoiseSchedule(ScheduleKind.CUSTOM)
    grid = np.linspace(0.2, 0.6, 50)
    a, _, _, _ = s.eval(grid)
    assert np.any(a < 1.0 - grid)


def test_domain_errors():
    s = NoiseSchedule(ScheduleKind.LINEAR)
    with pytest.raises(DomainError):
        s.eval(-0.1)
    with pytest.raises(DomainError):
        s.eval(1.5)
    with pytest.raises(DomainError):
        NoiseSchedule.from_name("nope")


def test_config_names_cover_all_kinds():
    assert set(SCHEDULE_NAMES) == {"linear", "1-t2", "cosine", "ddpm", "sigmoid",
                                   "custom", "edm"}
    for name, kind in SCHEDULE_NAMES.items():
        assert NoiseSchedule.from_name(name).kind is kind
