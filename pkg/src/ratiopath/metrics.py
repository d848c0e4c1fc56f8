"""Distributional discrepancy metrics between sample sets.

Wasserstein distances are exact empirical optimal-transport costs on m-vs-m
subsamples (linear assignment), averaged over repeats; MMD is the unbiased
RBF U-statistic.  Both record enough estimator metadata to reproduce a value.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from ratiopath.errors import DomainError
from ratiopath.sampler import stream

__all__ = ["MetricsReport", "wasserstein", "mmd_rbf", "compute_report"]

_MEDIAN_SUBSAMPLE = 2048


@dataclass(frozen=True)
class MetricsReport:
    w1: float
    w2: float
    mmd_rbf: float
    subsample: int
    repeats: int
    bandwidth: float
    bandwidth_rule: str
    negative_mmd_note: str = ""

    def to_dict(self):
        d = {
            "W1": self.w1, "W2": self.w2, "MMD_rbf": self.mmd_rbf,
            "subsample": self.subsample, "repeats": self.repeats,
            "bandwidth": self.bandwidth, "bandwidth_rule": self.bandwidth_rule,
        }
        if self.negative_mmd_note:
            d["negative_mmd_note"] = self.negative_mmd_note
        return d

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)


def _as_2d(samples):
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DomainError("sample sets must be nonempty (n, d) arrays")
    return arr


def _canonical_pair(p, q):
    """Deterministic argument order so the metric is exactly symmetric."""
    kp = (p.shape[0], hashlib.sha256(np.ascontiguousarray(p).tobytes()).hexdigest())
    kq = (q.shape[0], hashlib.sha256(np.ascontiguousarray(q).tobytes()).hexdigest())
    return (p, q) if kp <= kq else (q, p)


def _assignment_cost(a, b, order):
    if order == 1:
        cost = cdist(a, b)
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    cost = cdist(a, b, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def wasserstein(p_samples, q_samples, order=1, subsample=1000, repeats=5, seed=0):
    """Mean exact empirical W_order over m-vs-m subsample pairs.

    With subsample >= both set sizes, this is the exact full-set distance.
    """
    if order not in (1, 2):
        raise DomainError("order must be 1 or 2")
    p = _as_2d(p_samples)
    q = _as_2d(q_samples)
    if p.shape[1] != q.shape[1]:
        raise DomainError("sample sets must share a dimension")
    a, b = _canonical_pair(p, q)
    m = int(subsample)
    if m > min(a.shape[0], b.shape[0]):
        raise DomainError(
            f"subsample {m} exceeds available samples ({a.shape[0]}, {b.shape[0]})")
    exact = m == a.shape[0] and m == b.shape[0]
    vals = []
    for r in range(1 if exact else repeats):
        rng = stream(seed, tag=21, step=r)
        ia = np.arange(m) if m == a.shape[0] else rng.choice(a.shape[0], m, replace=False)
        ib = np.arange(m) if m == b.shape[0] else rng.choice(b.shape[0], m, replace=False)
        vals.append(_assignment_cost(a[ia], b[ib], order))
    return float(np.mean(vals))


def _pairwise_sq_sums(x, y, gamma, chunk=2048):
    """Sum and count of exp(-gamma * |x - y|^2) over all pairs, chunked."""
    total = 0.0
    for i in range(0, x.shape[0], chunk):
        xi = x[i:i + chunk]
        d2 = cdist(xi, y, "sqeuclidean")
        total += float(np.exp(-gamma * d2).sum())
    return total


def median_pairwise_distance(pooled, limit=_MEDIAN_SUBSAMPLE, seed=0):
    """Median pairwise Euclidean distance; deterministic subsample above ``limit``."""
    pooled = _as_2d(pooled)
    if pooled.shape[0] > limit:
        rng = stream(seed, tag=22)
        idx = rng.choice(pooled.shape[0], limit, replace=False)
        pooled = pooled[idx]
    d = cdist(pooled, pooled)
    iu = np.triu_indices(pooled.shape[0], k=1)
    med = float(np.median(d[iu]))
    return med


def mmd_rbf(p_samples, q_samples, bandwidth="median", seed=0):
    """Unbiased squared-MMD U-statistic with kernel exp(-|x-y|^2 / (2 h^2)).

    Negative values are reported as-is; they indicate the two sets are
    statistically indistinguishable at this sample size.
    Returns (value, h, rule).
    """
    p = _as_2d(p_samples)
    q = _as_2d(q_samples)
    if p.shape[1] != q.shape[1]:
        raise DomainError("sample sets must share a dimension")
    if isinstance(bandwidth, str):
        if bandwidth != "median":
            raise DomainError(f"unknown bandwidth rule {bandwidth!r}")
        pooled = np.concatenate([p, q], axis=0)
        h = median_pairwise_distance(pooled, seed=seed)
        rule = "median"
        if h <= 0.0:
            raise DomainError("median bandwidth degenerate: pooled samples identical")
    else:
        h = float(bandwidth)
        rule = "fixed"
        if h <= 0.0:
            raise DomainError("bandwidth must be positive")
    gamma = 1.0 / (2.0 * h * h)
    m, n = p.shape[0], q.shape[0]
    if m < 2 or n < 2:
        raise DomainError("need at least 2 samples per set for the U-statistic")
    sum_pp = _pairwise_sq_sums(p, p, gamma) - m          # drop the diagonal (k(x,x)=1)
    sum_qq = _pairwise_sq_sums(q, q, gamma) - n
    sum_pq = _pairwise_sq_sums(p, q, gamma)
    val = (sum_pp / (m * (m - 1)) + sum_qq / (n * (n - 1)) - 2.0 * sum_pq / (m * n))
    return float(val), h, rule


def compute_report(p_samples, q_samples, subsample=1000, repeats=5, seed=0,
                   bandwidth="median"):
    """W1, W2 and MMD between two sample sets as one MetricsReport."""
    m = min(subsample, len(p_samples), len(q_samples))
    w1 = wasserstein(p_samples, q_samples, 1, m, repeats, seed)
    w2 = wasserstein(p_samples, q_samples, 2, m, repeats, seed)
    val, h, rule = mmd_rbf(p_samples, q_samples, bandwidth, seed=seed)
    note = "" if val >= 0 else "negative U-statistic: sets statistically indistinguishable"
    return MetricsReport(w1=w1, w2=w2, mmd_rbf=val, subsample=m, repeats=repeats,
                         bandwidth=h, bandwidth_rule=rule, negative_mmd_note=note)
