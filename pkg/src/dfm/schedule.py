"""Time schedulers for the two path families.

BetaSchedule drives the metric path: beta(t) = c * (t / (1 - t))**a,
zero at t = 0 and diverging at t = 1. Values are capped at beta_cap;
past the cap the path is numerically a point mass and callers switch to
exact delta handling. KappaSchedule drives the mixture path; only the
linear family kappa(t) = t is provided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["BetaSchedule", "KappaSchedule"]


@dataclass(frozen=True)
class BetaSchedule:
    c: float = 3.0
    a: float = 0.9
    beta_cap: float = 1e6

    def __post_init__(self):
        if self.c <= 0 or self.a <= 0 or self.beta_cap <= 0:
            raise ValueError(f"schedule parameters must be positive: {self}")

    def beta(self, t):
        """min(c * (t/(1-t))**a, beta_cap) for t in [0, 1)."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t >= 1):
            raise ValueError("beta(t) requires 0 <= t < 1; use the delta "
                             "shortcut at t = 1")
        raw = self.c * (t / (1.0 - t)) ** self.a
        out = np.minimum(raw, self.beta_cap)
        return float(out) if out.ndim == 0 else out

    def beta_dot(self, t):
        """Analytic d(beta)/dt for t in (0, 1) below the cap.

        Zero in the capped region. For a < 1 the derivative diverges as
        t -> 0+, so t = 0 is outside the domain; sampler code handles the
        t = 0 limit (jump probability 1) explicitly.
        """
        t = np.asarray(t, dtype=np.float64)
        if np.any(t <= 0) or np.any(t >= 1):
            raise ValueError("beta_dot(t) requires 0 < t < 1")
        ratio = t / (1.0 - t)
        raw = self.c * ratio ** self.a
        dot = self.c * self.a * ratio ** (self.a - 1.0) / (1.0 - t) ** 2
        out = np.where(raw < self.beta_cap, dot, 0.0)
        return float(out) if out.ndim == 0 else out

    def capped(self, t) -> bool:
        """True where the raw beta value meets or exceeds beta_cap."""
        t = np.asarray(t, dtype=np.float64)
        raw = self.c * (t / (1.0 - t)) ** self.a
        out = raw >= self.beta_cap
        return bool(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KappaSchedule:
    """Mixture-path scheduler. kind='linear' is the only built-in family."""

    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ValueError(f"unknown kappa family: {self.kind!r}")

    def kappa(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("kappa(t) requires 0 <= t <= 1")
        out = t.copy()
        return float(out) if out.ndim == 0 else out

    def kappa_dot(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("kappa_dot(t) requires 0 <= t <= 1")
        out = np.ones_like(t)
        return float(out) if out.ndim == 0 else out
