"""JSON composition and run configs.

A composition config looks like::

    {
      "ambient_dim": 2,
      "experts": [
        {"schedule": "linear", "coords": [0, 1],
         "target": {"family": "checker_given_b", "resolution": 384,
                    "domain": [[-6, 6], [-6, 6]]}},
        {"schedule": "linear", "coords": [0],
         "target": {"family": "uniform", "low": [0], "high": [4]}},
        {"schedule": "custom", "coords": [0],
         "target": {"family": "uniform", "low": [-4], "high": [4]}}
      ],
      "exponents": [
        {"gamma0": 1}, {"gamma0": 1, "bump": 30}, {"gamma0": -1}
      ]
    }

Grid-backed targets are tabulated lazily for the sampler's exact time grid;
criterion-only commands never build tables.
"""

from __future__ import annotations

import json

import numpy as np

from ratiopath.composition import Composition, CoordinateLift, ExponentSchedule
from ratiopath.errors import ConfigError
from ratiopath.experts import (
    ExpertPath,
    GmmTarget,
    GridTarget,
    IsotropicGaussian,
    RectMixture,
    build_grid_target,
)
from ratiopath.schedules import SCHEDULE_NAMES, NoiseSchedule
from ratiopath.targets import checker_b_box_mass, _checker_b_density

__all__ = ["load_config", "build_composition", "composition_from_file"]


def load_config(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _need(d, key, where):
    if key not in d:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return d[key]


def _build_target(spec, where, schedule, timesteps, table_dtype):
    family = _need(spec, "family", where)
    if family == "isotropic_gaussian":
        return IsotropicGaussian(float(_need(spec, "variance", where)),
                                 float(spec.get("initial_variance", 1.0)))
    if family == "gmm":
        return GmmTarget(_need(spec, "weights", where), _need(spec, "means", where),
                         _need(spec, "covs", where))
    if family == "rect_mixture":
        return RectMixture(_need(spec, "weights", where), _need(spec, "lows", where),
                           _need(spec, "highs", where))
    if family == "uniform":
        return RectMixture.uniform(_need(spec, "low", where), _need(spec, "high", where))
    if family == "checker_given_b":
        domain = spec.get("domain", [[-6.0, 6.0], [-6.0, 6.0]])
        resolution = int(spec.get("resolution", 384))
        return build_grid_target(
            _checker_b_density, tuple(map(tuple, domain)), resolution,
            timesteps or [], schedule, box_mass=checker_b_box_mass,
            target_key="checker_given_b", table_dtype=table_dtype)
    raise ConfigError(f"{where}: unknown target family {family!r}")


def build_composition(cfg, timesteps=None, table_dtype=np.float32):
    """Composition from a config dict; grid targets tabulated at ``timesteps``."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    ambient = int(_need(cfg, "ambient_dim", "config"))
    experts_cfg = _need(cfg, "experts", "config")
    exps_cfg = _need(cfg, "exponents", "config")
    if not isinstance(experts_cfg, list) or not isinstance(exps_cfg, list):
        raise ConfigError("config: experts and exponents must be lists")
    if len(experts_cfg) != len(exps_cfg):
        raise ConfigError(
            f"config: {len(experts_cfg)} experts but {len(exps_cfg)} exponents")

    experts, coords = [], []
    for i, e in enumerate(experts_cfg):
        where = f"experts[{i}]"
        name = _need(e, "schedule", where)
        if name not in SCHEDULE_NAMES:
            raise ConfigError(f"{where}: unknown schedule {name!r}")
        schedule = NoiseSchedule.from_name(name)
        cs = tuple(int(c) for c in _need(e, "coords", where))
        target = _build_target(_need(e, "target", where), where + ".target",
                               schedule, timesteps, table_dtype)
        experts.append(ExpertPath(len(cs), schedule, target))
        coords.append(cs)

    exponents = []
    for i, g in enumerate(exps_cfg):
        where = f"exponents[{i}]"
        g0 = float(_need(g, "gamma0", where))
        g1 = float(g.get("gamma1", g0))
        form = g.get("form", "constant" if g0 == g1 else "linear")
        exponents.append(ExponentSchedule(g0, g1, form, float(g.get("bump", 0.0))))

    return Composition(experts, exponents, CoordinateLift(ambient, coords))


def composition_from_file(path, timesteps=None, table_dtype=np.float32):
    return build_composition(load_config(path), timesteps, table_dtype)
