"""Immutable categorical distributions over a fixed vocabulary.

Everything in the toolkit passes :class:`Dist` objects around. Logs are
natural logs throughout, so entropies are in nats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

#: Sum tolerance accepted (and silently repaired) by the :class:`Dist` constructor.
RENORM_TOL = 1e-6


@dataclass(frozen=True)
class Vocab:
    """Ordered table of unique token strings; ids are list positions."""

    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if not tokens:
            raise ValueError("vocabulary must contain at least one token")
        index = {t: i for i, t in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} is not in the vocabulary") from None

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def token(self, i: int) -> str:
        return self.tokens[i]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


class Dist:
    """A normalized probability vector.

    Inputs whose sum is within ``RENORM_TOL`` of one are renormalized;
    anything further off, negative, or non-finite is rejected. The stored
    array is read-only.
    """

    __slots__ = ("_probs",)

    def __init__(self, probs):
        arr = np.array(probs, dtype=np.float64, copy=True).reshape(-1)
        if arr.size == 0:
            raise ValueError("a distribution needs at least one outcome")
        if not np.all(np.isfinite(arr)):
            raise ValueError("probabilities must be finite")
        if np.any(arr < 0):
            raise ValueError("probabilities must be non-negative")
        total = math.fsum(arr)
        if abs(total - 1.0) > RENORM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        if total != 1.0:
            arr /= total
        arr.setflags(write=False)
        self._probs = arr

    @classmethod
    def uniform(cls, size: int) -> "Dist":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def one_hot(cls, size: int, index: int) -> "Dist":
        arr = np.zeros(size)
        arr[index] = 1.0
        return cls(arr)

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def vocab_size(self) -> int:
        return self._probs.size

    def __len__(self) -> int:
        return self._probs.size

    def __getitem__(self, i):
        return self._probs[i]

    def argmax(self) -> int:
        # np.argmax returns the first maximal index, i.e. lowest id wins ties
        return int(np.argmax(self._probs))

    def support(self, floor: float = 0.0) -> np.ndarray:
        return self._probs > floor

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dist):
            return NotImplemented
        return np.array_equal(self._probs, other._probs)

    def __hash__(self):
        return hash(self._probs.tobytes())

    def __repr__(self) -> str:
        if self._probs.size <= 8:
            return f"Dist({np.array2string(self._probs, precision=4)})"
        return f"Dist(V={self._probs.size}, max={self._probs.max():.4g})"


def _check_same_size(p: Dist, q: Dist):
    if p.vocab_size != q.vocab_size:
        raise ValueError(
            f"vocabulary size mismatch: {p.vocab_size} vs {q.vocab_size}"
        )


def entropy(d: Dist) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = d.probs[d.probs > 0]
    h = -float(np.dot(p, np.log(p)))
    if h <= 0.0:
        return 0.0
    # clamp rounding dust; the true value lies in [0, log V]
    return min(h, math.log(d.vocab_size))


def kl_divergence(p: Dist, q: Dist) -> float:
    """KL(p || q) summed over the support of ``p``; ``inf`` if q misses it."""
    _check_same_size(p, q)
    mask = p.probs > 0
    pp, qq = p.probs[mask], q.probs[mask]
    if np.any(qq == 0):
        return math.inf
    return max(float(np.dot(pp, np.log(pp) - np.log(qq))), 0.0)


def total_variation(p: Dist, q: Dist) -> float:
    """Half the L1 distance, so a truncation's TV equals its removed mass."""
    _check_same_size(p, q)
    return 0.5 * math.fsum(np.abs(p.probs - q.probs))


class Rng:
    """Seeded, splittable random stream.

    Backed by numpy's counter-based Philox generator, whose output is
    specified bit-for-bit, so a given seed reproduces across platforms.
    Child streams for parallel work are derived from ``(seed, index)``.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._path = tuple(_path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "Rng":
        return Rng(self.seed, self._path + (int(index),))

    def random(self) -> float:
        return float(self._gen.random())

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self._path})"


def sample(d: Dist, rng: Rng) -> int:
    """Draw one token id by inverse CDF over the stored order."""
    cdf = np.cumsum(d.probs)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    if i >= d.vocab_size:
        # u landed on the rounded top of the cdf; take the last live id
        i = int(np.flatnonzero(d.probs)[-1])
    return i


Scorer = Callable[[Sequence[int]], Dist]


class NoDistribution(LookupError):
    """Raised by a scorer that has no distribution for a prefix at all."""


def avg_neg_log_prob(token_ids: Sequence[int], scorer: Scorer) -> float:
    """Mean per-token surprisal in nats.

    ``scorer(prefix)`` must return the distribution over the token that
    follows ``prefix`` (the tokens of this sequence seen so far). A zero
    probability on an observed token, or a scorer raising
    :class:`NoDistribution`, makes the result ``inf``.
    """
    ids = list(token_ids)
    if not ids:
        raise ValueError("cannot score an empty sequence")
    total = []
    for i, tok in enumerate(ids):
        try:
            p = scorer(ids[:i]).probs[tok]
        except NoDistribution:
            return math.inf
        if p <= 0:
            return math.inf
        total.append(-math.log(p))
    return math.fsum(total) / len(ids)
