"""Reproduction harness: collapse-prevalence sweep, checker benchmark,
homogeneous-regime equivalence, bump sensitivity, and ESS ablation.

Every experiment is a pure function of (config, seeds): re-running writes
byte-identical CSV/JSON artifacts.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ratiopath.composition import default_grid
from ratiopath.metrics import compute_report
from ratiopath.sampler import Method, SamplerConfig, force_final_resample, run
from ratiopath.schedules import NoiseSchedule
from ratiopath.targets import checker_composition, checker_experts, sample_ground_truth

__all__ = [
    "SWEEP_GUIDANCE_VALUES",
    "prevalence_sweep",
    "SweepResult",
    "checker_benchmark",
    "BenchmarkRow",
    "homogeneous_check",
    "bump_sensitivity",
    "ess_ablation",
    "write_experiment",
]

SWEEP_GUIDANCE_VALUES = (1.0, 1.1, 1.5, 2.0, 7.5, 15.0)
_SWEEP_BASE = ("ddpm", "cosine", "sigmoid", "linear")
POLY_VARIANTS = ("1-t2", "edm")


@dataclass
class SweepResult:
    guidance: tuple
    poly_variant: str
    counts: tuple                 # collapse count per guidance value
    n_triplets: int
    verdicts: dict = field(default_factory=dict)  # (w, k1, k2, k3) -> bool collapsed

    def percentages(self):
        return tuple(100.0 * c / self.n_triplets for c in self.counts)


def prevalence_sweep(guidance=SWEEP_GUIDANCE_VALUES, poly_variant="1-t2", grid=None):
    """Collapse counts over the 100 likelihood-nonhomogeneous schedule triplets.

    Enumerates all ordered triplets (s1, s2, s3) from the five standard
    schedules, keeps those with s2 != s3, assigns exponents (1, w, -w) on
    shared coordinates, and checks the path-existence criterion on the grid.
    """
    if poly_variant not in POLY_VARIANTS:
        raise ValueError(f"polynomial variant must be one of {POLY_VARIANTS}")
    if grid is None:
        grid = default_grid()
    names = list(_SWEEP_BASE) + [poly_variant]
    inv_alpha_sq = {}
    for name in names:
        alpha, _, _, _ = NoiseSchedule.from_name(name).eval(grid)
        inv_alpha_sq[name] = 1.0 / alpha ** 2

    counts = []
    verdicts = {}
    n_triplets = 0
    for w in guidance:
        c = 0
        n_triplets = 0
        for k1 in names:
            for k2 in names:
                for k3 in names:
                    if k2 == k3:
                        continue
                    n_triplets += 1
                    crit = inv_alpha_sq[k1] + w * inv_alpha_sq[k2] - w * inv_alpha_sq[k3]
                    collapsed = bool(np.any(crit < 0.0))
                    verdicts[(w, k1, k2, k3)] = collapsed
                    c += collapsed
        counts.append(c)
    return SweepResult(tuple(guidance), poly_variant, tuple(counts), n_triplets, verdicts)


def sweep_both_variants(guidance=SWEEP_GUIDANCE_VALUES, grid=None):
    return {v: prevalence_sweep(guidance, v, grid) for v in POLY_VARIANTS}


# ---------------------------------------------------------------------------
# checker benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkRow:
    method: str
    bump: float
    seed: int
    path_valid: bool
    w1: float
    w2: float
    mmd: float
    resamples: int
    nonfinite: int

    def key(self):
        return (self.method, self.bump)


def _method_grid(methods):
    """Normalize a method spec like ["nr", "fkc", ("ace", 30.0), ...]."""
    out = []
    for m in methods:
        if isinstance(m, (tuple, list)):
            name, bump = m
            out.append((Method(name), float(bump)))
        else:
            out.append((Method(m), 0.0))
    return out


def checker_benchmark(methods=("nr", "fkc", ("ace", 30.0)), seeds=(0, 1, 2, 3, 4),
                      n_particles=10000, n_steps=1000, sigma=0.5, ess_threshold=0.7,
                      schedules=None, resolution=384, subsample=1000, repeats=5,
                      gt_seed=990, bump_index=1, edge_sigma=0.03, progress=None):
    """Distributional metrics of each method against exact AB-checker samples.

    Experts (and the 2D grid tables) are built once for the run's field times
    and shared across every method and seed.
    """
    from ratiopath.targets import BENCHMARK_SCHEDULES
    schedules = schedules or BENCHMARK_SCHEDULES
    dt = 1.0 / n_steps
    times = [dt / 2.0] + [k * dt for k in range(1, n_steps - 1)]
    experts = checker_experts(times, schedules=schedules, resolution=resolution,
                              table_dtype=np.float32, edge_sigma=edge_sigma)
    gt = sample_ground_truth("checker_given_ab", max(10000, n_particles), seed=gt_seed)

    rows = []
    for method, bump in _method_grid(methods):
        comp = checker_composition(times, bump=bump, bump_index=bump_index,
                                   schedules=schedules, experts=experts)
        report = comp.check_path()
        for seed in seeds:
            cfg = SamplerConfig(method=method, n_particles=n_particles,
                                n_steps=n_steps, sigma=sigma,
                                ess_threshold=ess_threshold, seed=seed)
            ens, diag = run(comp, cfg)
            samples = force_final_resample(ens, cfg)
            rep = compute_report(samples, gt, subsample=subsample, repeats=repeats,
                                 seed=seed)
            row = BenchmarkRow(method.value, bump, seed, report.is_valid,
                               rep.w1, rep.w2, rep.mmd_rbf,
                               len(diag.resample_steps), diag.nonfinite_total)
            rows.append(row)
            if progress:
                progress(row)
    return rows


def summarize_benchmark(rows):
    """Per-(method, bump): min / mean / std per metric plus the validity flag."""
    out = {}
    for row in rows:
        out.setdefault(row.key(), []).append(row)
    summary = []
    for (method, bump), group in out.items():
        entry = {"method": method, "bump": bump, "path_valid": group[0].path_valid,
                 "seeds": len(group)}
        for metric in ("w1", "w2", "mmd"):
            vals = np.array([getattr(r, metric) for r in group])
            entry[f"{metric}_min"] = float(vals.min())
            entry[f"{metric}_mean"] = float(vals.mean())
            entry[f"{metric}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        summary.append(entry)
    return summary


def homogeneous_check(seeds=(0, 1, 2, 3, 4), n_particles=10000, n_steps=1000,
                      sigma=0.5, ess_threshold=0.7, resolution=384, progress=None):
    """All-identical schedules (ddpm): FKC must equal ACE(B=0) bit-for-bit and
    both must beat the unweighted baseline."""
    rows = checker_benchmark(
        methods=("nr", "fkc", ("ace", 0.0)), seeds=seeds, n_particles=n_particles,
        n_steps=n_steps, sigma=sigma, ess_threshold=ess_threshold,
        schedules=("ddpm", "ddpm", "ddpm"), resolution=resolution, progress=progress)
    by = {}
    for r in rows:
        by.setdefault(r.method, {})[r.seed] = r
    identical = all(
        by["fkc"][s].w1 == by["ace"][s].w1
        and by["fkc"][s].w2 == by["ace"][s].w2
        and by["fkc"][s].mmd == by["ace"][s].mmd
        for s in by["fkc"])
    return {"rows": rows, "fkc_equals_ace": identical,
            "summary": summarize_benchmark(rows)}


def bump_sensitivity(bumps=(10.0, 20.0, 30.0, 40.0, 50.0, 100.0), seeds=(0, 1, 2, 3, 4),
                     **kwargs):
    """(B, mean W1, std W1) curve data from the checker benchmark."""
    methods = [("ace", b) for b in bumps]
    rows = checker_benchmark(methods=methods, seeds=seeds, **kwargs)
    curve = []
    for b in bumps:
        vals = np.array([r.w1 for r in rows if r.bump == b])
        curve.append({"bump": float(b), "w1_mean": float(vals.mean()),
                      "w1_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0})
    return {"rows": rows, "curve": curve}


def ess_ablation(thresholds=(0.1, 0.3, 0.5, 0.7, 0.9), seeds=(0, 1, 2),
                 bump=30.0, **kwargs):
    """ACE(bump) and FKC metrics across resampling thresholds."""
    curves = {"ace": [], "fkc": []}
    rows_all = []
    for tau in thresholds:
        rows = checker_benchmark(methods=[("ace", bump), "fkc"], seeds=seeds,
                                 ess_threshold=tau, **kwargs)
        rows_all.extend([(tau, r) for r in rows])
        for key in curves:
            vals = np.array([r.w1 for r in rows if r.method == key])
            curves[key].append({"tau": float(tau), "w1_mean": float(vals.mean()),
                                "w1_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0})
    return {"rows": rows_all, "curves": curves}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def write_experiment(out_dir, config, results_rows, results_header, diagnostics=None,
                     samples=None):
    """One directory per experiment: config.json, results.csv, diagnostics.json,
    and optional raw sample CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(results_header)
        writer.writerows(results_rows)
    if diagnostics is not None:
        with open(os.path.join(out_dir, "diagnostics.json"), "w") as f:
            json.dump(diagnostics, f, indent=2, sort_keys=True)
    if samples:
        for name, arr in samples.items():
            path = os.path.join(out_dir, f"{name}.csv")
            arr = np.asarray(arr)
            header = ",".join([f"x{k}" for k in range(arr.shape[1] - 1)] + ["log_weight"]) \
                if arr.shape[1] > 1 else "x0"
            np.savetxt(path, arr, delimiter=",", header=header, comments="")
    return out_dir
