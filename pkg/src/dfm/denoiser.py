"""Denoisers: predictors of the clean target given a corrupted state.

Two instances of the same surface (per-position categorical
distributions over the vocabulary):

* OracleDenoiser - the exact Bayes posterior, computed by enumerating
  the joint target space. Ground truth for the sampler and for all
  marginal-consistency checks.
* FactorizedModel - a deliberately tiny trainable network (embed ->
  concat all positions -> two tanh layers -> per-position heads) whose
  gradients are written out by hand and checked against finite
  differences. Trained with the cross-entropy objective on corrupted
  sequences, plain SGD.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import ConditionalPath, JointDistribution

__all__ = ["OracleDenoiser", "FactorizedModel", "TrainBatch", "ce_loss",
           "grad", "make_batch", "train", "save_checkpoint",
           "load_checkpoint", "ModelDenoiser"]


class OracleDenoiser:
    """Exact posterior p(x1 | x_t) by full enumeration of the target space.

    q maps a condition tuple to a JointDistribution (use {} / the empty
    tuple for unconditional tasks).
    """

    def __init__(self, q, path: ConditionalPath, on_invalid: str = "error"):
        if isinstance(q, JointDistribution):
            q = {(): q}
        if on_invalid not in ("error", "prior"):
            raise ValueError("on_invalid must be 'error' or 'prior'")
        self.q = {tuple(k): v for k, v in q.items()}
        self.path = path
        # Off-support states (zero posterior mass) are an error by
        # default; 'prior' substitutes the unconditional target
        # marginals instead, which keeps multi-mode mask-path chains
        # alive when two positions commit to different modes within one
        # discrete step (impossible in the exact continuous-time chain).
        self.on_invalid = on_invalid
        first = next(iter(self.q.values()))
        self.K, self.D = first.K, first.D
        for jd in self.q.values():
            if (jd.K, jd.D) != (self.K, self.D):
                raise ValueError("all conditional targets must share (K, D)")
        self._states = first.states()                       # (S, D)
        # one-hot position marginalizers, onehots[i][s, k]
        S = self._states.shape[0]
        self.onehots = []
        for i in range(self.D):
            oh = np.zeros((S, self.K))
            oh[np.arange(S), self._states[:, i]] = 1.0
            self.onehots.append(oh)
        # per-condition per-position target marginals, (D, K)
        self._priors = {
            c: np.stack([oh.T @ jd.probs for oh in self.onehots])
            for c, jd in self.q.items()}

    def posterior_batch(self, t: float, X: np.ndarray,
                        condition=(), chunk: int = 65536) -> np.ndarray:
        """(n, D, K) per-position posterior marginals for states X (n, D)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        n = X.shape[0]
        q = self.q[tuple(condition)]
        with np.errstate(divide="ignore"):
            logq = np.log(q.probs)                          # (S,)
            logP = np.log(self.path.prob_matrix(t))         # [x1, x]
        gathers = [logP[self._states[:, i], :] for i in range(self.D)]
        out = np.empty((n, self.D, self.K))
        for lo in range(0, n, chunk):
            Xc = X[lo:lo + chunk]
            acc = logq[:, None] + sum(
                gathers[i][:, Xc[:, i]] for i in range(self.D))  # (S, m)
            m = acc.max(axis=0)
            dead = ~np.isfinite(m)
            if np.any(dead):
                if self.on_invalid == "error":
                    raise ValueError("state has zero posterior mass (off the "
                                     "support of the mixture path)")
                m = np.where(dead, 0.0, m)
            post = np.exp(acc - m)
            post /= np.maximum(post.sum(axis=0), 1e-300)
            for i in range(self.D):
                out[lo:lo + chunk, i, :] = (self.onehots[i].T @ post).T
            if np.any(dead):
                out[lo:lo + chunk][dead] = self._priors[tuple(condition)]
        return out

    def posterior(self, t: float, tokens, condition=()) -> np.ndarray:
        """(D, K) posterior marginals for a single state."""
        return self.posterior_batch(t, np.asarray(tokens)[None, :],
                                    condition)[0]


# ---------------------------------------------------------------------
# trainable factorized predictor


class FactorizedModel:
    """Tiny full-context predictor with hand-written gradients.

    Every output position depends on every input position: all token
    embeddings (condition then corrupted target) are concatenated and
    mixed by two dense tanh layers before the per-position heads.
    Time is not an input unless time_embedding is set, mirroring the
    choice to let the model infer the noise level from the corruption.
    """

    def __init__(self, K: int, D: int, C: int = 0, embed_dim: int = 8,
                 hidden: int = 32, time_embedding: bool = False,
                 init_rng: np.random.Generator | None = None):
        self.K, self.D, self.C = K, D, C
        self.embed_dim, self.hidden = embed_dim, hidden
        self.time_embedding = bool(time_embedding)
        F = (C + D) * embed_dim + (1 if self.time_embedding else 0)
        self.F = F
        sizes = {
            "embed": (K, embed_dim),
            "W1": (F, hidden), "b1": (hidden,),
            "W2": (hidden, hidden), "b2": (hidden,),
            "heads": (D, hidden, K), "bh": (D, K),
        }
        self._slices = {}
        total = 0
        for name, shape in sizes.items():
            size = int(np.prod(shape))
            self._slices[name] = (total, total + size, shape)
            total += size
        self.theta = np.zeros(total)
        rng = init_rng or np.random.default_rng(0)
        for name, shape in sizes.items():
            fan_in = shape[0] if len(shape) == 1 else int(np.prod(shape[:-1]))
            self.param(name)[...] = rng.standard_normal(shape) / np.sqrt(
                max(fan_in, 1))
        self.param("b1")[...] = 0.0
        self.param("b2")[...] = 0.0
        self.param("bh")[...] = 0.0

    def param(self, name: str) -> np.ndarray:
        lo, hi, shape = self._slices[name]
        return self.theta[lo:hi].reshape(shape)

    def _features(self, condition, x_t, t):
        n = x_t.shape[0]
        emb = self.param("embed")
        parts = []
        if self.C:
            parts.append(emb[condition].reshape(n, -1))
        parts.append(emb[x_t].reshape(n, -1))
        if self.time_embedding:
            parts.append(np.asarray(t, dtype=np.float64).reshape(n, 1))
        return np.concatenate(parts, axis=1)

    def forward(self, condition, x_t, t=None, _cache=None):
        """Per-position logits, (n, D, K). t is ignored unless the model
        was built with time_embedding."""
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.int64))
        n = x_t.shape[0]
        condition = (np.atleast_2d(np.asarray(condition, dtype=np.int64))
                     if self.C else np.zeros((n, 0), dtype=np.int64))
        if x_t.shape[1] != self.D or condition.shape[1] != self.C:
            raise ValueError("input shape mismatch")
        if self.time_embedding and t is None:
            raise ValueError("time_embedding model needs t")
        f = self._features(condition, x_t, t)
        h1 = np.tanh(f @ self.param("W1") + self.param("b1"))
        h2 = np.tanh(h1 @ self.param("W2") + self.param("b2"))
        logits = np.einsum("nh,dhk->ndk", h2, self.param("heads")) \
            + self.param("bh")[None, :, :]
        if _cache is not None:
            _cache.update(f=f, h1=h1, h2=h2, condition=condition, x_t=x_t)
        return logits

    def predict_proba(self, condition, x_t, t=None) -> np.ndarray:
        """softmax over the last axis of forward()."""
        logits = self.forward(condition, x_t, t)
        logits = logits - logits.max(axis=-1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=-1, keepdims=True)

    def clone(self) -> "FactorizedModel":
        other = FactorizedModel(self.K, self.D, self.C, self.embed_dim,
                                self.hidden, self.time_embedding)
        other.theta[...] = self.theta
        return other


@dataclass
class TrainBatch:
    conditions: np.ndarray   # (n, C) int
    x1: np.ndarray           # (n, D) int
    t: np.ndarray            # (n,) float in [0, 1]
    x_t: np.ndarray          # (n, D) int


def make_batch(path: ConditionalPath, dataset, idx, rng) -> TrainBatch:
    """Corrupt dataset rows `idx` at per-example uniform times."""
    conds = np.stack([np.asarray(dataset[j][0], dtype=np.int64) for j in idx])
    x1 = np.stack([np.asarray(dataset[j][1], dtype=np.int64) for j in idx])
    t = rng.random(len(idx))
    x_t = np.stack([path.sample_corrupted(t[r], x1[r], rng)
                    for r in range(len(idx))])
    return TrainBatch(conditions=conds, x1=x1, t=t, x_t=x_t)


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def ce_loss(model: FactorizedModel, batch: TrainBatch) -> float:
    """Mean over the batch of -sum_i log p(x1^i | x_t); all positions
    (including any eos/pad targets) contribute."""
    logits = model.forward(batch.conditions, batch.x_t, batch.t)
    logp = _log_softmax(logits)
    n, D = batch.x1.shape
    picked = logp[np.arange(n)[:, None], np.arange(D)[None, :], batch.x1]
    return float(-picked.sum(axis=1).mean())


def grad(model: FactorizedModel, batch: TrainBatch):
    """(loss, flat gradient) via hand-written reverse mode."""
    cache = {}
    logits = model.forward(batch.conditions, batch.x_t, batch.t, _cache=cache)
    logp = _log_softmax(logits)
    n, D = batch.x1.shape
    picked = logp[np.arange(n)[:, None], np.arange(D)[None, :], batch.x1]
    loss = float(-picked.sum(axis=1).mean())

    g = np.zeros_like(model.theta)

    def gpart(name):
        lo, hi, shape = model._slices[name]
        return g[lo:hi].reshape(shape)

    dlogits = np.exp(logp)
    dlogits[np.arange(n)[:, None], np.arange(D)[None, :], batch.x1] -= 1.0
    dlogits /= n

    h2, h1, f = cache["h2"], cache["h1"], cache["f"]
    gpart("heads")[...] = np.einsum("nh,ndk->dhk", h2, dlogits)
    gpart("bh")[...] = dlogits.sum(axis=0)
    dh2 = np.einsum("ndk,dhk->nh", dlogits, model.param("heads"))
    dz2 = dh2 * (1.0 - h2 * h2)
    gpart("W2")[...] = h1.T @ dz2
    gpart("b2")[...] = dz2.sum(axis=0)
    dh1 = dz2 @ model.param("W2").T
    dz1 = dh1 * (1.0 - h1 * h1)
    gpart("W1")[...] = f.T @ dz1
    gpart("b1")[...] = dz1.sum(axis=0)
    df = dz1 @ model.param("W1").T

    E = model.embed_dim
    gemb = gpart("embed")
    tokens = np.concatenate([cache["condition"], cache["x_t"]], axis=1)
    for j in range(tokens.shape[1]):
        np.add.at(gemb, tokens[:, j], df[:, j * E:(j + 1) * E])
    return loss, g


def train(model: FactorizedModel, path: ConditionalPath, dataset,
          steps: int, batch_size: int, lr: float,
          rng: np.random.Generator):
    """Plain SGD on the corruption cross-entropy; returns per-step losses.

    Deterministic given the rng state. Raises RuntimeError on divergence
    (non-finite loss), leaving the last finite parameters in place.
    """
    losses = []
    n = len(dataset)
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        batch = make_batch(path, dataset, idx, rng)
        loss, g = grad(model, batch)
        if not np.isfinite(loss):
            raise RuntimeError(f"training diverged at step {step}: loss={loss}")
        model.theta -= lr * g
        losses.append(loss)
    return losses


class ModelDenoiser:
    """Adapter exposing a FactorizedModel through the denoiser surface."""

    def __init__(self, model: FactorizedModel):
        self.model = model
        self.K, self.D = model.K, model.D

    def posterior_batch(self, t: float, X: np.ndarray, condition=()) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        n = X.shape[0]
        conds = np.broadcast_to(
            np.asarray(condition, dtype=np.int64).reshape(1, -1),
            (n, self.model.C))
        tvec = np.full(n, t)
        return self.model.predict_proba(conds, X, tvec)


# ---------------------------------------------------------------------
# checkpoint plumbing: versioned text container


def save_checkpoint(model: FactorizedModel, path) -> None:
    with open(path, "w") as fh:
        fh.write("dfm-ckpt v1\n")
        fh.write(f"K={model.K} D={model.D} C={model.C} "
                 f"embed_dim={model.embed_dim} hidden={model.hidden} "
                 f"time_embedding={int(model.time_embedding)}\n")
        fh.write(" ".join(repr(float(v)) for v in model.theta) + "\n")


def load_checkpoint(path) -> FactorizedModel:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "dfm-ckpt v1":
            raise ValueError(f"bad checkpoint header: {header!r}")
        hp = dict(kv.split("=") for kv in fh.readline().split())
        theta = np.array(fh.readline().split(), dtype=np.float64)
    model = FactorizedModel(
        K=int(hp["K"]), D=int(hp["D"]), C=int(hp["C"]),
        embed_dim=int(hp["embed_dim"]), hidden=int(hp["hidden"]),
        time_embedding=bool(int(hp["time_embedding"])))
    if theta.shape != model.theta.shape:
        raise ValueError("checkpoint parameter count mismatch")
    model.theta[...] = theta
    return model
