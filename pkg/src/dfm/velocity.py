"""Kinetic-optimal probability velocities (rate matrices).

Two equivalent routes to the same conditional rate:

* the closed form for the metric path,
  u(x, z | x1) = p_t(x | x1) * beta_dot * relu(d(z, x1) - d(x, x1)),
* the generic flux construction from any (p, dp) pair,
  j(x, z) = relu(p(z) dp(x) - dp(z) p(x)),  u = j / p(z),
  with u defined as 0 wherever p(z) = 0.

Ties in the distance (relu of exactly zero) give a zero rate. Rows are
completed with a diagonal entry equal to minus the off-diagonal sum, so
the rate condition (off-diagonals >= 0, row sum 0) holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import ConditionalPath
from .schedule import BetaSchedule
from .token_space import TokenSpace

__all__ = ["VelocityRow", "ko_velocity_closed", "ko_velocity_generic",
           "velocity_row", "exit_rate", "marginal_velocity",
           "generic_row", "rate_tables"]


@dataclass(frozen=True)
class VelocityRow:
    """Rates out of state z, including the completed diagonal entry."""

    z: int
    rates: np.ndarray  # (K,)

    def exit_rate(self) -> float:
        return -float(self.rates[self.z])


def ko_velocity_closed(space: TokenSpace, sched: BetaSchedule, t: float,
                       x_dest: int, z_cur: int, x1: int) -> float:
    """Closed-form metric-path rate z_cur -> x_dest given target x1."""
    if x_dest == z_cur:
        raise ValueError("diagonal entries come from row completion")
    d = space.distances
    p = _metric_prob_row(space, sched, t, x1)
    gap = d[z_cur, x1] - d[x_dest, x1]
    if gap <= 0.0:
        return 0.0
    return float(p[x_dest] * sched.beta_dot(t) * gap)


def _metric_prob_row(space: TokenSpace, sched: BetaSchedule, t: float,
                     x1: int) -> np.ndarray:
    if not (0.0 < t < 1.0) or sched.capped(t):
        raise ValueError("metric velocities defined for t in (0,1) below the cap")
    logits = -sched.beta(t) * space.distances[x1]
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def ko_velocity_generic(p: np.ndarray, dp: np.ndarray,
                        x_dest: int, z_cur: int) -> float:
    """Kinetic-optimal rate from an arbitrary (p, dp) pair at one time."""
    if x_dest == z_cur:
        raise ValueError("diagonal entries come from row completion")
    p = np.asarray(p, dtype=np.float64)
    dp = np.asarray(dp, dtype=np.float64)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("p must be a probability vector")
    if p[z_cur] <= 0.0:
        return 0.0
    val = dp[x_dest] - dp[z_cur] * p[x_dest] / p[z_cur]
    return float(max(val, 0.0))


def velocity_row(space: TokenSpace, sched: BetaSchedule, t: float,
                 z_cur: int, x1: int) -> VelocityRow:
    """Full closed-form row with exact diagonal completion."""
    d = space.distances
    p = _metric_prob_row(space, sched, t, x1)
    gaps = np.maximum(d[z_cur, x1] - d[:, x1], 0.0)
    rates = p * sched.beta_dot(t) * gaps
    rates[z_cur] = 0.0
    rates[z_cur] = -rates.sum()
    return VelocityRow(z=z_cur, rates=rates)


def generic_row(p: np.ndarray, dp: np.ndarray, z_cur: int) -> VelocityRow:
    """Row of generic kinetic-optimal rates for one (p, dp) pair."""
    p = np.asarray(p, dtype=np.float64)
    dp = np.asarray(dp, dtype=np.float64)
    if p[z_cur] <= 0.0:
        rates = np.zeros_like(p)
    else:
        rates = np.maximum(dp - dp[z_cur] * p / p[z_cur], 0.0)
    rates[z_cur] = 0.0
    rates[z_cur] = -rates.sum()
    return VelocityRow(z=z_cur, rates=rates)


def exit_rate(row: VelocityRow) -> float:
    """Total outflow rate lambda = -diagonal = sum of off-diagonals."""
    return row.exit_rate()


def marginal_velocity(posterior: np.ndarray, space: TokenSpace,
                      sched: BetaSchedule, t: float,
                      x_dest: int, z_cur: int) -> float:
    """Posterior-averaged conditional rate (verification only).

    posterior is a distribution over per-position target values x1.
    """
    posterior = np.asarray(posterior, dtype=np.float64)
    if posterior.shape != (space.K,) or np.any(posterior < 0) \
            or abs(posterior.sum() - 1.0) > 1e-9:
        raise ValueError("posterior must be a probability vector over K")
    total = 0.0
    for x1 in range(space.K):
        w = posterior[x1]
        if w > 0.0:
            total += w * ko_velocity_closed(space, sched, t, x_dest, z_cur, x1)
    return total


def rate_tables(path: ConditionalPath, t: float, h: float | None = None):
    """Per-step lookup tables for the CTMC sampler.

    Returns (W, lam) where W[x1, z, :] are the jump weights out of z
    toward each destination (diagonal zero) and lam[x1, z] is the exit
    rate. The rate factors as a schedule term times a state term; the
    weights keep only the state term (the common schedule factor
    cancels under normalization).

    With h=None, lam is the instantaneous rate at t (+inf where the
    schedule derivative diverges). With a step size h, lam is the
    average rate over [t, t + h]: the state term frozen at t times the
    exact schedule integral over the step, divided by h. h * lam is
    then the integrated exit rate, which keeps the jump probability
    1 - exp(-h * lam) correct through the schedule singularities (the
    left endpoint t = 0 and the final step into t = 1), where the
    instantaneous rate would over- or under-shoot badly.
    """
    K = path.K
    if path.kind == "metric":
        sched = path.schedule
        d = path.space.distances
        P = path.prob_matrix(t)  # [x1, x]
        # gaps[x1, z, x] = relu(d(z, x1) - d(x, x1))
        gaps = np.maximum(d.T[:, :, None] - d.T[:, None, :], 0.0)
        W = P[:, None, :] * gaps
        S = W.sum(axis=2)
        if h is None:
            fac = np.inf if t == 0.0 else sched.beta_dot(t)
        else:
            t2 = t + h
            b2 = (sched.beta_cap if t2 >= 1.0 or sched.capped(t2)
                  else sched.beta(t2))
            fac = (b2 - sched.beta(t)) / h
        with np.errstate(invalid="ignore"):
            lam = np.where(S > 0.0, fac * S, 0.0)
        return W, lam
    P = path.prob_matrix(t)
    dP = path.dprob_matrix(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(P > 0.0, dP / np.where(P > 0.0, P, 1.0), 0.0)
    # W[x1, z, x] = relu(dp(x) - dp(z)/p(z) * p(x)), zero when p(z) = 0
    W = np.maximum(dP[:, None, :] - ratio[:, :, None] * P[:, None, :], 0.0)
    W *= (P > 0.0)[:, :, None]
    idx = np.arange(K)
    W[:, idx, idx] = 0.0
    lam = W.sum(axis=2)
    if h is not None:
        # exit rate of the mixture is kappa_dot / (1 - kappa) wherever
        # it is nonzero; rescale to its exact integral over the step,
        # -log(1 - kappa) evaluated at the endpoints (+inf into t = 1)
        ks = path.schedule
        k1, k2 = ks.kappa(t), ks.kappa(min(t + h, 1.0))
        inst = ks.kappa_dot(t) / (1.0 - k1)
        if k2 >= 1.0:
            integ = np.inf
        else:
            integ = np.log((1.0 - k1) / (1.0 - k2))
        if inst > 0.0:
            with np.errstate(invalid="ignore"):
                lam = np.where(lam > 0.0, lam * (integ / (h * inst)), 0.0)
    return W, lam
