"""Conditional probability paths p_t(. | x1) and exact marginals.

Two families:

* metric: softmax(-beta_t * d(., x1)) over the token space, uniform at
  t = 0 and collapsing onto x1 as beta grows. Softmax is evaluated in
  log space (max subtraction) so large beta never overflows; once beta
  reaches the schedule cap the path returns an exact point mass.
* mixture: (1 - kappa_t) * source + kappa_t * delta_{x1}, recovering the
  masked construction when source is a point mass on a mask token.

Both evaluate their analytic time derivative, sample corrupted states,
and mix into exact marginal paths on enumerable joint spaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import BetaSchedule, KappaSchedule
from .token_space import TokenSpace

__all__ = ["ConditionalPath", "JointDistribution", "metric_path",
           "mask_mixture_path", "marginal_path", "enumerate_states",
           "MAX_JOINT_STATES"]

MAX_JOINT_STATES = 10 ** 6


def enumerate_states(K: int, D: int) -> np.ndarray:
    """All sequences in [K]^D as an (S, D) int array, last coord fastest."""
    S = K ** D
    if S > MAX_JOINT_STATES:
        raise ValueError(f"joint space too large: K^D = {S}")
    idx = np.arange(S)
    cols = []
    for i in range(D - 1, -1, -1):
        cols.append(idx % K)
        idx = idx // K
    return np.stack(cols[::-1], axis=1).astype(np.int64)


def state_index(seq, K: int) -> int:
    """Inverse of enumerate_states row order."""
    idx = 0
    for tok in seq:
        idx = idx * K + int(tok)
    return idx


@dataclass(frozen=True)
class JointDistribution:
    """Explicit distribution over [K]^D, stored flat in enumeration order."""

    K: int
    D: int
    probs: np.ndarray  # (K**D,)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (self.K ** self.D,):
            raise ValueError(f"probs shape {p.shape} != (K**D,)")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("probs must be a distribution (sum 1 +- 1e-10)")
        object.__setattr__(self, "probs", p)

    def states(self) -> np.ndarray:
        return enumerate_states(self.K, self.D)

    def prob_of(self, seq) -> float:
        return float(self.probs[state_index(seq, self.K)])

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        """Draw n sequences by inverse CDF; (n, D) int array."""
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
        return self.states()[np.minimum(idx, len(self.probs) - 1)]


class ConditionalPath:
    """A family p_t(. | x1) over tokens with its analytic time derivative."""

    def __init__(self, kind: str, space: TokenSpace, schedule,
                 source: np.ndarray | None = None,
                 mask_token: int | None = None):
        if kind not in ("metric", "mixture"):
            raise ValueError(f"unknown path kind: {kind!r}")
        self.kind = kind
        self.space = space
        self.schedule = schedule
        self.mask_token = mask_token
        if kind == "metric":
            if not isinstance(schedule, BetaSchedule):
                raise TypeError("metric path needs a BetaSchedule")
            self.source = np.full(space.K, 1.0 / space.K)
        else:
            if not isinstance(schedule, KappaSchedule):
                raise TypeError("mixture path needs a KappaSchedule")
            if source is None:
                if mask_token is None:
                    raise ValueError("mixture path needs a source or a mask token")
                source = np.zeros(space.K)
                source[mask_token] = 1.0
            source = np.asarray(source, dtype=np.float64)
            if source.shape != (space.K,) or np.any(source < 0) \
                    or abs(source.sum() - 1.0) > 1e-12:
                raise ValueError("mixture source must be a distribution over K")
            self.source = source

    @property
    def K(self) -> int:
        return self.space.K

    # -- conditional probabilities ------------------------------------

    def prob_matrix(self, t: float) -> np.ndarray:
        """(K, K) array; row x1 is p_t(. | x1)."""
        K = self.K
        if self.kind == "metric":
            if not (0.0 <= t < 1.0):
                raise ValueError("metric path defined for t in [0, 1); use "
                                 "the delta shortcut at t = 1")
            if self.schedule.capped(t):
                return np.eye(K)
            logits = -self.schedule.beta(t) * self.space.distances
            logits = logits - logits.max(axis=1, keepdims=True)
            w = np.exp(logits)
            return w / w.sum(axis=1, keepdims=True)
        if not (0.0 <= t <= 1.0):
            raise ValueError("mixture path defined for t in [0, 1]")
        k = self.schedule.kappa(t)
        return (1.0 - k) * self.source[None, :] + k * np.eye(K)

    def prob(self, t: float, x1: int) -> np.ndarray:
        """p_t(. | x1) as a probability vector over K."""
        return self.prob_matrix(t)[x1]

    def dprob_matrix(self, t: float) -> np.ndarray:
        """(K, K) array of d/dt p_t(x | x1); rows sum to zero."""
        if self.kind == "metric":
            if not (0.0 < t < 1.0):
                raise ValueError("metric dprob defined for t in (0, 1)")
            if self.schedule.capped(t):
                raise ValueError("dprob undefined beyond the beta cap")
            p = self.prob_matrix(t)
            d = self.space.distances
            mean_d = np.sum(p * d, axis=1, keepdims=True)
            return self.schedule.beta_dot(t) * p * (mean_d - d)
        if not (0.0 <= t <= 1.0):
            raise ValueError("mixture path defined for t in [0, 1]")
        kd = self.schedule.kappa_dot(t)
        return kd * (np.eye(self.K) - self.source[None, :])

    def dprob(self, t: float, x1: int) -> np.ndarray:
        return self.dprob_matrix(t)[x1]

    # -- corruption ----------------------------------------------------

    def sample_corrupted(self, t: float, x1_seq,
                         rng: np.random.Generator) -> np.ndarray:
        """Draw x_t with independent positions, x_t^i ~ p_t(. | x1^i).

        Accepts t = 1 (and the capped metric region) by returning the
        targets unchanged, which is the exact delta limit.
        """
        x1_seq = np.asarray(x1_seq, dtype=np.int64)
        if np.any(x1_seq < 0) or np.any(x1_seq >= self.K):
            raise ValueError("target tokens out of range")
        if t == 1.0 or (self.kind == "metric" and self.schedule.capped(t)):
            return x1_seq.copy()
        rows = self.prob_matrix(t)[x1_seq]          # (D, K)
        cdf = np.cumsum(rows, axis=1)
        u = rng.random(len(x1_seq)) * cdf[:, -1]
        return np.argmax(cdf > u[:, None], axis=1).astype(np.int64)


def metric_path(space: TokenSpace,
                schedule: BetaSchedule | None = None) -> ConditionalPath:
    return ConditionalPath("metric", space, schedule or BetaSchedule())


def mask_mixture_path(space: TokenSpace, mask_token: int,
                      schedule: KappaSchedule | None = None) -> ConditionalPath:
    return ConditionalPath("mixture", space, schedule or KappaSchedule(),
                           mask_token=mask_token)


def marginal_path(q: JointDistribution, path: ConditionalPath,
                  t: float) -> JointDistribution:
    """Exact marginal p_t(x) = sum_x1 q(x1) prod_i p_t(x^i | x1^i).

    Full tensor contraction; guarded by the joint-space capacity limit.
    """
    K, D = q.K, q.D
    if K != path.K:
        raise ValueError("joint distribution and path disagree on K")
    if K ** D > MAX_JOINT_STATES:
        raise ValueError(f"joint space too large: K^D = {K ** D}")
    P = path.prob_matrix(t)  # [x1, x]
    p = q.probs.reshape((K,) * D)
    for axis in range(D):
        p = np.moveaxis(np.tensordot(P, p, axes=(0, axis)), 0, axis)
    p = p.reshape(-1)
    p = p / p.sum()
    return JointDistribution(K=K, D=D, probs=p)
