"""Ratio-of-densities path composition, diagnostics, and weighted particle sampling."""

from ratiopath.schedules import NoiseSchedule, ScheduleKind
from ratiopath.experts import (
    ExpertPath,
    GmmTarget,
    GridTarget,
    IsotropicGaussian,
    RectMixture,
    build_grid_target,
)
from ratiopath.composition import (
    Composition,
    CoordinateLift,
    CriterionReport,
    ExponentSchedule,
    default_grid,
)
from ratiopath.sampler import (
    Diagnostics,
    Method,
    ParticleEnsemble,
    SamplerConfig,
    ess,
    force_final_resample,
    run,
)
from ratiopath.metrics import MetricsReport, compute_report, mmd_rbf, wasserstein

__all__ = [
    "NoiseSchedule",
    "ScheduleKind",
    "ExpertPath",
    "IsotropicGaussian",
    "GmmTarget",
    "RectMixture",
    "GridTarget",
    "build_grid_target",
    "Composition",
    "CoordinateLift",
    "ExponentSchedule",
    "CriterionReport",
    "default_grid",
    "Method",
    "SamplerConfig",
    "ParticleEnsemble",
    "Diagnostics",
    "ess",
    "force_final_resample",
    "run",
    "MetricsReport",
    "compute_report",
    "wasserstein",
    "mmd_rbf",
]
