"""Figure regeneration from persisted CSV/JSON experiment outputs.

Every renderer reads documented CSV schemas, never a live simulation.  The
plotted arrays are exactly the parsed input columns: clipping happens through
axis limits and masked arrays (mask only, data untouched), and each render
returns sha256 checksums of the plotted arrays so callers can verify the
figure did not alter or reinterpret the numbers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["FigureJob", "SchemaError", "render", "FIGURE_KINDS", "column_checksum"]

CRITERION_YLIM = (-20.0, 100.0)


class SchemaError(Exception):
    """Input file does not match the documented schema for the figure kind."""


@dataclass
class FigureJob:
    kind: str                     # one of FIGURE_KINDS
    inputs: dict                  # logical name -> path
    output: str                   # image path (.png or .svg)
    options: dict = field(default_factory=dict)


def column_checksum(values):
    """sha256 of the float64 little-endian bytes of a column."""
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    return hashlib.sha256(arr.tobytes()).hexdigest()


def _read_csv(path, required, kind):
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = [row for row in reader if row]
    except (OSError, StopIteration) as exc:
        raise SchemaError(f"{kind}: cannot read {path}: {exc}") from None
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(
            f"{kind}: {path} is missing columns {missing}; found {header}")
    if not rows:
        raise SchemaError(f"{kind}: {path} has no data rows")
    cols = {}
    for name in header:
        i = header.index(name)
        vals = [row[i] for row in rows]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals)
    return header, cols


def _truncate_after_frame_exit(y, lo, hi):
    """Mask marking everything after the first exit from [lo, hi].

    The returned masked array shares the input data bit-for-bit; only the
    mask changes what is drawn.
    """
    outside = (y < lo) | (y > hi)
    mask = np.zeros(len(y), dtype=bool)
    exits = np.nonzero(outside)[0]
    if exits.size:
        mask[exits[0]:] = True
        mask[exits[0]] = True
    return np.ma.masked_array(y, mask=mask)


def _save(fig, path):
    ext = os.path.splitext(path)[1].lower()
    meta = {"Date": None} if ext == ".svg" else {}
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)


def _render_criterion(job):
    header, cols = _read_csv(job.inputs["criterion"], ["t", "C_min"], "criterion")
    ccols = [h for h in header if h.startswith("C_") and h != "C_min"]
    t = cols["t"]
    fig, ax = plt.subplots(figsize=(6, 4))
    checks = {"t": column_checksum(t)}
    for name in ccols + ["C_min"]:
        y = _truncate_after_frame_exit(cols[name], *CRITERION_YLIM)
        style = {"lw": 2.0, "color": "tab:red"} if name == "C_min" else {"lw": 0.9}
        ax.plot(t, y, label=name, **style)
        checks[name] = column_checksum(np.ma.getdata(y))
    ax.axhline(0.0, color="k", lw=0.8, ls="--")
    ax.set_ylim(*CRITERION_YLIM)
    ax.set_xlabel("t")
    ax.set_ylabel("criterion")
    ax.legend(loc="upper left", fontsize=8)
    _save(fig, job.output)
    return checks


def _render_trajectory(job):
    _, cols = _read_csv(job.inputs["trajectory"],
                        ["step", "t", "particle", "x0", "x1"], "trajectory")
    resample_steps = []
    diag_path = job.inputs.get("diagnostics")
    if diag_path:
        with open(diag_path) as f:
            diag = json.load(f)
        resample_steps = [int(s) for s, _ in diag.get("resample_steps", [])]
    fig, ax = plt.subplots(figsize=(5, 5))
    checks = {name: column_checksum(cols[name]) for name in ("t", "x0", "x1")}
    at_resample = np.isin(cols["step"].astype(int), resample_steps)
    ax.scatter(cols["x0"][~at_resample], cols["x1"][~at_resample],
               s=2, c=cols["t"][~at_resample], cmap="viridis", alpha=0.5)
    if at_resample.any():
        ax.scatter(cols["x0"][at_resample], cols["x1"][at_resample],
                   s=6, c="tab:orange", label="resample event")
        ax.legend(loc="upper left", fontsize=8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    _save(fig, job.output)
    return checks


def _render_samples(job):
    _, cols = _read_csv(job.inputs["samples"], ["x0", "x1"], "samples")
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.2))
    checks = {"x0": column_checksum(cols["x0"]), "x1": column_checksum(cols["x1"])}
    axes[0].scatter(cols["x0"], cols["x1"], s=2, alpha=0.4, c="tab:blue")
    axes[0].set_title("samples")
    axes[0].set_aspect("equal")
    axes[1].hist2d(cols["x0"], cols["x1"], bins=80, cmap="magma")
    axes[1].set_title("density")
    axes[1].set_aspect("equal")
    for ax in axes:
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    _save(fig, job.output)
    return checks


def _render_bump_curve(job):
    _, cols = _read_csv(job.inputs["curve"], ["bump", "w1_mean", "w1_std"], "bump curve")
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(cols["bump"], cols["w1_mean"], yerr=cols["w1_std"],
                marker="o", capsize=3)
    ax.set_xlabel("bump amplitude")
    ax.set_ylabel("W1 (mean over seeds)")
    _save(fig, job.output)
    return {name: column_checksum(cols[name]) for name in ("bump", "w1_mean", "w1_std")}


def _render_ess_curve(job):
    _, cols = _read_csv(job.inputs["curve"], ["tau", "method", "w1_mean", "w1_std"],
                        "ess curve")
    fig, ax = plt.subplots(figsize=(5, 4))
    methods = sorted(set(cols["method"].tolist()))
    for m in methods:
        sel = cols["method"] == m
        ax.errorbar(cols["tau"][sel], cols["w1_mean"][sel], yerr=cols["w1_std"][sel],
                    marker="o", capsize=3, label=str(m))
    ax.set_xlabel("resampling threshold")
    ax.set_ylabel("W1 (mean over seeds)")
    ax.legend()
    _save(fig, job.output)
    return {"tau": column_checksum(cols["tau"]),
            "w1_mean": column_checksum(cols["w1_mean"]),
            "w1_std": column_checksum(cols["w1_std"])}


def _render_sweep(job):
    """Spaghetti plot of per-triplet criterion curves (one CSV, wide format)."""
    header, cols = _read_csv(job.inputs["curves"], ["t"], "sweep curves")
    t = cols["t"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    checks = {"t": column_checksum(t)}
    for name in header:
        if name == "t":
            continue
        y = _truncate_after_frame_exit(cols[name], *CRITERION_YLIM)
        ax.plot(t, y, lw=0.6, alpha=0.6)
        checks[name] = column_checksum(np.ma.getdata(y))
    ax.axhline(0.0, color="k", lw=0.8, ls="--")
    ax.set_ylim(*CRITERION_YLIM)
    ax.set_xlabel("t")
    ax.set_ylabel("criterion")
    _save(fig, job.output)
    return checks


FIGURE_KINDS = {
    "criterion": (_render_criterion, ("criterion",)),
    "trajectory": (_render_trajectory, ("trajectory",)),
    "samples": (_render_samples, ("samples",)),
    "bump_curve": (_render_bump_curve, ("curve",)),
    "ess_curve": (_render_ess_curve, ("curve",)),
    "sweep_spaghetti": (_render_sweep, ("curves",)),
}


def render(job: FigureJob):
    """Render one figure; returns {*array name*: sha256} of the plotted data.

    Raises SchemaError (and writes nothing) when inputs are missing or their
    columns do not match the documented schema.
    """
    if job.kind not in FIGURE_KINDS:
        raise SchemaError(f"unknown figure kind {job.kind!r}; "
                          f"expected one of {sorted(FIGURE_KINDS)}")
    fn, required = FIGURE_KINDS[job.kind]
    for name in required:
        if name not in job.inputs:
            raise SchemaError(f"{job.kind}: missing input {name!r}")
        if not os.path.exists(job.inputs[name]):
            raise SchemaError(f"{job.kind}: input file {job.inputs[name]} does not exist")
    checksums = fn(job)
    if job.options.get("checksum_sidecar", True):
        with open(job.output + ".checksums.json", "w") as f:
            json.dump(checksums, f, indent=2, sort_keys=True)
    return checksums
