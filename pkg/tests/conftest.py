import numpy as np
import pytest

from ratiopath.targets import checker_composition, checker_experts


def sampler_times(n_steps):
    dt = 1.0 / n_steps
    return [dt / 2.0] + [k * dt for k in range(1, n_steps - 1)]


@pytest.fixture(scope="session")
def small_checker():
    """Checker experts tabulated for a short run (T=120), shared across tests."""
    T = 120
    times = sampler_times(T)
    experts = checker_experts(times, resolution=384, table_dtype=np.float64)
    return {"T": T, "times": times, "experts": experts}


@pytest.fixture(scope="session")
def small_checker_composition(small_checker):
    return checker_composition(small_checker["times"], experts=small_checker["experts"])
