"""Toy tasks, ground-truth target distributions, and text plumbing.

Tasks are the substrate for the recovery and training experiments: each
bundles a token space, a target length, a condition space, and either an
explicit enumerable JointDistribution per condition or a sequence
sampler. Text mode adds eos/pad semantics: targets are padded with one
eos and then pads to a fixed length, and decoding truncates at the
first eos.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .paths import JointDistribution, enumerate_states
from .token_space import TokenSpace, build_token_space, random_token_space

__all__ = ["ToyTask", "builtin_task", "task_dataset", "with_mask_token",
           "ingest_corpus", "decode_text", "load_tokenizer",
           "save_tokenizer", "BUILTIN_TASKS"]

BUILTIN_TASKS = ("point", "two_mode", "grid_pattern", "copy_condition",
                 "char_text")


@dataclass
class ToyTask:
    name: str
    space: TokenSpace
    D: int
    mode: str = "grid"                     # "grid" | "text"
    conditions: list = field(default_factory=lambda: [()])
    q: dict | None = None                  # condition tuple -> JointDistribution
    sampler: object = None                 # fallback: (cond, rng, n) -> (n, D)
    charmap: dict | None = None            # text mode: char -> token id

    def joint(self, condition=()) -> JointDistribution:
        if self.q is None:
            raise ValueError(f"task {self.name} has no explicit q")
        return self.q[tuple(condition)]

    def draw_targets(self, condition, rng, n: int) -> np.ndarray:
        if self.q is not None:
            return self.joint(condition).sample(rng, n)
        return self.sampler(condition, rng, n)


def with_mask_token(space: TokenSpace) -> tuple[TokenSpace, int]:
    """Append a dedicated mask token for the mixture baseline.

    The mask embedding is a seeded random unit vector; the mask id is
    the old K. Returns (extended space, mask id).
    """
    rng = np.random.default_rng(0xA5)
    for _ in range(16):
        cand = rng.standard_normal(space.E)
        emb = np.vstack([space.embeddings, cand])
        try:
            ext = build_token_space(emb, eos=space.eos, pad=space.pad)
        except ValueError:
            continue
        return ext, space.K
    raise RuntimeError("could not place a distinct mask embedding")


def _delta_joint(K: int, seq) -> JointDistribution:
    D = len(seq)
    p = np.zeros(K ** D)
    idx = 0
    for tok in seq:
        idx = idx * K + int(tok)
    p[idx] = 1.0
    return JointDistribution(K=K, D=D, probs=p)


def _grid_pattern_joint(K: int, D: int, noise: float) -> JointDistribution:
    """Constant-color field with per-cell noise: pick a base color
    uniformly, each cell keeps it w.p. 1 - noise else resamples uniformly."""
    states = enumerate_states(K, D)
    p = np.zeros(len(states))
    for c in range(K):
        cell = np.where(states == c, (1.0 - noise) + noise / K, noise / K)
        p += cell.prod(axis=1) / K
    return JointDistribution(K=K, D=D, probs=p / p.sum())


def builtin_task(name: str, **overrides) -> ToyTask:
    """Construct one of the named toy tasks; deterministic given the name."""
    if name == "point":
        K, D = overrides.get("K", 5), overrides.get("D", 3)
        space = random_token_space(K, E=8, seed=11)
        target = overrides.get("target", tuple(range(1, D + 1)))
        target = tuple(t % K for t in target)
        return ToyTask(name=name, space=space, D=D,
                       q={(): _delta_joint(K, target)})

    if name == "two_mode":
        K, D = overrides.get("K", 5), overrides.get("D", 3)
        space = random_token_space(K, E=8, seed=12)
        s1 = tuple(i % K for i in range(D))
        s2 = tuple(int(np.argmax(space.distances[t])) for t in s1)
        p = np.zeros(K ** D)
        for seq in (s1, s2):
            idx = 0
            for tok in seq:
                idx = idx * K + tok
            p[idx] += 0.5
        return ToyTask(name=name, space=space, D=D,
                       q={(): JointDistribution(K=K, D=D, probs=p)})

    if name == "grid_pattern":
        side = overrides.get("side", 2)
        K = overrides.get("K", 4)
        noise = overrides.get("noise", 0.2)
        D = side * side
        space = random_token_space(K, E=8, seed=13)
        if K ** D <= 10 ** 6:
            q = {(): _grid_pattern_joint(K, D, noise)}
            return ToyTask(name=name, space=space, D=D, q=q)

        def sampler(condition, rng, n, K=K, D=D, noise=noise):
            base = rng.integers(0, K, size=n)
            out = np.repeat(base[:, None], D, axis=1)
            flip = rng.random((n, D)) < noise
            out[flip] = rng.integers(0, K, size=int(flip.sum()))
            return out

        return ToyTask(name=name, space=space, D=D, sampler=sampler)

    if name == "copy_condition":
        K, C = overrides.get("K", 5), overrides.get("C", 2)
        space = random_token_space(K, E=8, seed=14)
        conditions = [tuple(s) for s in enumerate_states(K, C)]
        q = {c: _delta_joint(K, tuple(reversed(c))) for c in conditions}
        return ToyTask(name=name, space=space, D=C, conditions=conditions, q=q)

    if name == "char_text":
        alphabet = overrides.get("alphabet", "abcde")
        L = overrides.get("L", 6)
        words = overrides.get("words", ("ab", "bad", "cab", "dead", "be"))
        charmap = {ch: i for i, ch in enumerate(alphabet)}
        K = len(alphabet) + 2
        eos, pad = K - 2, K - 1
        space = random_token_space(K, E=8, seed=15, eos=eos, pad=pad)
        seqs = [_pad_tokens([charmap[ch] for ch in w], L, eos, pad)
                for w in words]
        p = np.zeros(K ** L)
        for seq in seqs:
            idx = 0
            for tok in seq:
                idx = idx * K + tok
            p[idx] += 1.0 / len(seqs)
        return ToyTask(name=name, space=space, D=L, mode="text",
                       q={(): JointDistribution(K=K, D=L, probs=p)},
                       charmap=charmap)

    raise ValueError(f"unknown task {name!r}; choose from {BUILTIN_TASKS}")


def task_dataset(task: ToyTask, n: int, rng: np.random.Generator):
    """n (condition, target) pairs with conditions drawn uniformly."""
    out = []
    for _ in range(n):
        cond = task.conditions[rng.integers(0, len(task.conditions))]
        target = task.draw_targets(cond, rng, 1)[0]
        out.append((np.asarray(cond, dtype=np.int64), target))
    return out


# ---------------------------------------------------------------------
# text plumbing


def _pad_tokens(tokens, L: int, eos: int, pad: int):
    if len(tokens) > L - 1:
        raise ValueError(f"sequence of length {len(tokens)} exceeds L-1={L - 1}")
    return list(tokens) + [eos] + [pad] * (L - 1 - len(tokens))


def ingest_corpus(path, charmap: dict, L: int, eos: int, pad: int):
    """Newline-delimited UTF-8 corpus -> list of ((), target) pairs.

    Each target is tokens + one eos + pads to exactly L. Unknown
    characters and over-length lines are errors.
    """
    pairs = []
    offset = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.rstrip("\n")
            for col, ch in enumerate(text):
                if ch not in charmap:
                    raise ValueError(
                        f"unknown character {ch!r} at byte offset "
                        f"{offset + len(text[:col].encode('utf-8'))} "
                        f"(line {lineno})")
            if len(text) > L - 1:
                raise ValueError(
                    f"line {lineno} has {len(text)} characters, "
                    f"maximum is L-1={L - 1}")
            tokens = _pad_tokens([charmap[ch] for ch in text], L, eos, pad)
            pairs.append(((), np.asarray(tokens, dtype=np.int64)))
            offset += len(line.encode("utf-8"))
    return pairs


def decode_text(tokens, charmap: dict, eos: int):
    """Characters before the first eos; (text, missing_eos flag).

    Sampler output is stochastic, so a missing eos decodes the whole
    sequence and flags it instead of raising.
    """
    inv = {i: ch for ch, i in charmap.items()}
    chars = []
    for tok in tokens:
        tok = int(tok)
        if tok == eos:
            return "".join(chars), False
        chars.append(inv.get(tok, ""))
    return "".join(chars), True


def save_tokenizer(charmap: dict, path) -> None:
    with open(path, "w") as fh:
        for ch, idx in charmap.items():
            fh.write(f"{ch}\t{idx}\n")


def load_tokenizer(path) -> dict:
    charmap = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.rstrip("\n"):
                continue
            ch, idx = line.rstrip("\n").split("\t")
            charmap[ch] = int(idx)
    return charmap
