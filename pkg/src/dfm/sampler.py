"""CTMC Euler solver with trajectory tracing and best-of-N selection.

Per step, each position independently: sample a clean-target guess from
the denoiser, compute the exit rate out of the current token under the
conditional kinetic-optimal velocity toward that guess, jump with
probability 1 - exp(-h * lambda), and if jumping resample the token
proportionally to the outgoing rates. The time grid is uniform on
[0, 1 - 1/N]; the final output is the denoiser argmax at the last state,
which sidesteps the schedule singularity at t = 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._kernels import euler_update
from .paths import ConditionalPath
from .rngs import substream
from .velocity import rate_tables

__all__ = ["SamplerConfig", "SampleTrace", "init_state", "euler_step",
           "sample", "sample_chains", "best_of_n", "revision_stats",
           "write_trace_csv"]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 32
    seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def t_end(self) -> float:
        return 1.0 - 1.0 / self.steps


@dataclass
class SampleTrace:
    """Full per-step record of one chain.

    states has steps + 1 rows (initial state plus one per step);
    guesses and jumps have one row per step. guesses holds the
    denoiser argmax at the step's evaluation time.
    """

    times: np.ndarray    # (steps + 1,)
    states: np.ndarray   # (steps + 1, D)
    guesses: np.ndarray  # (steps, D)
    jumps: np.ndarray    # (steps, D) bool


def init_state(path: ConditionalPath, D: int,
               rng: np.random.Generator) -> np.ndarray:
    """Draw the t = 0 state: one independent draw from the path source
    per target position (uniform for metric, mask for mask-mixture)."""
    cdf = np.cumsum(path.source)
    u = rng.random(D) * cdf[-1]
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def _sample_rows(M: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw along the last axis."""
    cs = np.cumsum(M, axis=-1)
    return np.argmax(cs > (u * cs[..., -1])[..., None], axis=-1).astype(np.int64)


def euler_step(state: np.ndarray, t: float, h: float, denoiser,
               path: ConditionalPath, rng: np.random.Generator,
               condition=()):
    """One solver step for a single chain; returns (new_state, x1, jumped)."""
    X = np.asarray(state, dtype=np.int64)[None, :]
    M = denoiser.posterior_batch(t, X, condition)
    x1 = _sample_rows(M, rng.random(X.shape))
    W, lam = rate_tables(path, t, h)
    new_X, jumped = euler_update(X, x1, W, lam, h,
                                 rng.random(X.shape), rng.random(X.shape))
    return new_X[0], x1[0], jumped[0]


def sample_chains(denoiser, path: ConditionalPath, config: SamplerConfig,
                  condition=(), n: int = 1,
                  rng: np.random.Generator | None = None,
                  snapshots: dict | None = None):
    """Run n chains on one shared rng stream (chain-major array layout).

    Returns (outputs, traces): outputs is the (n, D) finalized token
    array, traces a list of SampleTrace (or None without record_trace).
    If `snapshots` is a dict, its keys are step indices k and each is
    filled with a copy of the chain states at grid time k / steps
    (cheaper than full traces for marginal-consistency checks).
    """
    if rng is None:
        rng = substream(config.seed, "chains")
    N = config.steps
    h = 1.0 / N
    D = denoiser.D
    # same draws as n successive init_state calls on this rng
    cdf = np.cumsum(path.source)
    X = np.searchsorted(cdf, rng.random((n, D)) * cdf[-1],
                        side="right").astype(np.int64)
    rec = config.record_trace
    if rec:
        states = np.empty((N + 1, n, D), dtype=np.int64)
        guesses = np.empty((N, n, D), dtype=np.int64)
        jump_log = np.empty((N, n, D), dtype=bool)
        states[0] = X
    for k in range(N):
        t = k / N
        if snapshots is not None and k in snapshots:
            snapshots[k] = X.copy()
        M = denoiser.posterior_batch(t, X, condition)
        u1 = rng.random((n, D))
        zu = rng.random((n, D))
        du = rng.random((n, D))
        x1 = _sample_rows(M, u1)
        W, lam = rate_tables(path, t, h)
        if np.any(np.isnan(lam)):
            raise FloatingPointError(f"NaN exit rate at t={t}")
        X, jumped = euler_update(X, x1, W, lam, h, zu, du)
        if rec:
            states[k + 1] = X
            guesses[k] = M.argmax(axis=-1)
            jump_log[k] = jumped
    Mf = denoiser.posterior_batch(config.t_end, X, condition)
    out = Mf.argmax(axis=-1).astype(np.int64)
    traces = None
    if rec:
        times = np.arange(N + 1) / N
        traces = [SampleTrace(times=times, states=states[:, c],
                              guesses=guesses[:, c], jumps=jump_log[:, c])
                  for c in range(n)]
    return out, traces


def sample(denoiser, path: ConditionalPath, config: SamplerConfig,
           condition=(), rng: np.random.Generator | None = None):
    """Run one chain; returns (tokens, trace-or-None)."""
    out, traces = sample_chains(denoiser, path, config, condition, n=1,
                                rng=rng)
    return out[0], (traces[0] if traces else None)


def best_of_n(denoiser, path: ConditionalPath, config: SamplerConfig,
              scorer, n: int, keep: int, condition=()):
    """Draw n candidates on distinct rng substreams, keep the top `keep`.

    Sorted by score descending, ties broken by chain index. Candidates
    whose scorer raises are excluded with a warning; if every candidate
    is excluded a RuntimeError propagates.
    """
    if not (1 <= keep <= n):
        raise ValueError(f"need n >= keep >= 1, got n={n}, keep={keep}")
    scored = []
    for i in range(n):
        rng = substream(config.seed, "chain", i)
        tokens, _ = sample(denoiser, path, config, condition, rng=rng)
        try:
            score = float(scorer(tokens))
        except Exception as exc:  # scorer is caller-supplied
            warnings.warn(f"scorer failed on chain {i}: {exc}")
            continue
        scored.append((tokens, score, i))
    if not scored:
        raise RuntimeError("scorer rejected every candidate")
    scored.sort(key=lambda rec: (-rec[1], rec[2]))
    return scored[:keep]


def revision_stats(trace: SampleTrace):
    """Commit analysis of one trajectory.

    A position is committed once it first leaves its source (initial)
    value; every change after the first one counts as a revision.
    """
    changes = trace.states[1:] != trace.states[:-1]      # (steps, D)
    per_position = changes.sum(axis=0)
    revisions = np.maximum(per_position - 1, 0)
    return {
        "changes_per_position": per_position,
        "revisions_per_position": revisions,
        "total_revisions": int(revisions.sum()),
        "jump_fraction_per_step": trace.jumps.mean(axis=1),
    }


def write_trace_csv(trace: SampleTrace, path) -> None:
    """CSV rows: step,t,token_0,...,token_{D-1},jumps."""
    D = trace.states.shape[1]
    header = "step,t," + ",".join(f"token_{i}" for i in range(D)) + ",jumps"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for k in range(trace.states.shape[0]):
            njump = 0 if k == 0 else int(trace.jumps[k - 1].sum())
            toks = ",".join(str(v) for v in trace.states[k])
            fh.write(f"{k},{trace.times[k]:.10g},{toks},{njump}\n")
