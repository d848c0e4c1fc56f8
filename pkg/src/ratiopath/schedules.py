"""Closed-form noise schedules (alpha_t, beta_t) and their exact time derivatives.

Every schedule maps t in [0, 1] to the signal scale alpha_t and noise scale
beta_t of the interpolant X_t = alpha_t * X_0 + beta_t * X_1.  Derivatives are
hand-derived closed forms; a finite-difference test guards them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ratiopath.errors import DomainError

__all__ = ["ScheduleKind", "NoiseSchedule", "SCHEDULE_NAMES"]


class ScheduleKind(enum.Enum):
    LINEAR = "linear"
    ONE_MINUS_T_SQUARED = "1-t2"
    COSINE = "cosine"
    DDPM = "ddpm"
    SIGMOID = "sigmoid"
    CUSTOM = "custom"
    EDM = "edm"


SCHEDULE_NAMES = {k.value: k for k in ScheduleKind}


def _softplus(z):
    # branch form: never exponentiates a large positive argument
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(z)))


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _eta(x):
    return (20.0 / 12.0) * _softplus(12.0 * (x - 0.5)) + 0.001 * x


def _eta_prime(x):
    return 20.0 * _sigmoid(12.0 * (x - 0.5)) + 0.001


@dataclass(frozen=True)
class NoiseSchedule:
    """One expert's noise schedule, evaluable at any t in [0, 1]."""

    kind: ScheduleKind

    @classmethod
    def from_name(cls, name: str) -> "NoiseSchedule":
        try:
            return cls(SCHEDULE_NAMES[name])
        except KeyError:
            raise DomainError(
                f"unknown schedule name {name!r}; expected one of {sorted(SCHEDULE_NAMES)}"
            ) from None

    @property
    def name(self) -> str:
        return self.kind.value

    def eval(self, t):
        """Return (alpha, beta, dalpha, dbeta) at t (scalar or array)."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
            raise DomainError(f"schedule evaluated outside [0, 1]: t={t!r}")
        a, b, da, db = self._eval_impl(t_arr)
        if np.isscalar(t) or t_arr.ndim == 0:
            return float(a), float(b), float(da), float(db)
        return a, b, da, db

    def alpha_beta(self, t):
        a, b, _, _ = self.eval(t)
        return a, b

    def _eval_impl(self, t):
        kind = self.kind
        one = np.ones_like(t)
        if kind is ScheduleKind.LINEAR:
            return 1.0 - t, t.copy(), -one, one
        if kind is ScheduleKind.ONE_MINUS_T_SQUARED:
            return 1.0 - t * t, t.copy(), -2.0 * t, one
        if kind is ScheduleKind.COSINE:
            half_pi = 0.5 * math.pi
            return (
                np.cos(half_pi * t),
                np.sin(half_pi * t),
                -half_pi * np.sin(half_pi * t),
                half_pi * np.cos(half_pi * t),
            )
        if kind is ScheduleKind.DDPM:
            a = np.exp(-(19.9 * t * t + 0.1 * t) / 4.0)
            da = a * (-(39.8 * t + 0.1) / 4.0)
            b2 = np.clip(1.0 - a * a, 0.0, None)
            b = np.sqrt(b2)
            with np.errstate(divide="ignore", invalid="ignore"):
                db = np.where(b > 0, -a * da / np.where(b > 0, b, 1.0), np.inf)
            return a, b, da, db
        if kind is ScheduleKind.SIGMOID:
            x = 1.0 - t
            f = np.exp(-_eta(x))
            a2 = np.clip(1.0 - f, 0.0, None)
            a = np.sqrt(a2)
            da = -f * _eta_prime(x) / (2.0 * a)
            return a, t.copy(), da, one
        if kind is ScheduleKind.CUSTOM:
            a = 1.0 - 4.0 * t + 7.0 * t * t - 4.0 * t ** 3
            da = -4.0 + 14.0 * t - 12.0 * t * t
            return a, t.copy(), da, one
        if kind is ScheduleKind.EDM:
            u = t - 1.0
            b = 1.0 - u * u
            db = -2.0 * u
            a2 = np.clip(1.0 - b * b, 0.0, None)
            a = np.sqrt(a2)
            with np.errstate(divide="ignore", invalid="ignore"):
                da = np.where(a > 0, -b * db / np.where(a > 0, a, 1.0), -math.sqrt(2.0))
            return a, b, da, db
        raise AssertionError(f"unhandled schedule kind {kind}")
