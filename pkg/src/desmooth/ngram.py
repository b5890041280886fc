"""Count-based n-gram language model with optional uniform smoothing.

With ``uniform_weight = w`` a seen context gives
``(1 - w) * MLE + w * uniform``; an unseen context gives pure uniform.
Unsmoothed models refuse unseen contexts with :class:`UnseenContext`.
There is deliberately no backoff to lower orders.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .dist import Dist, NoDistribution, Rng, Vocab, entropy, sample
from .truncation import TruncationRule, apply_rule


class UnseenContext(NoDistribution):
    """The context was never observed and the model has no smoothing."""


@dataclass(frozen=True)
class GenerationRecord:
    prompt_ids: tuple
    generated_ids: tuple
    support_exit_index: Optional[int]
    per_step_entropy: tuple
    # whether the context each step was drawn from had been seen in training
    context_seen: tuple = ()
    status: str = "complete"

    @property
    def exited(self) -> bool:
        return self.support_exit_index is not None


class NGramModel:
    """Order-``n`` counts stored as a context index plus flat CSR arrays.

    ``_index`` maps a context tuple to its row; row ``r`` owns
    ``next_ids[offsets[r]:offsets[r+1]]`` and the matching ``next_counts``.
    """

    def __init__(self, order, vocab, contexts, offsets, next_ids, next_counts,
                 uniform_weight=0.0, bos_id=None, eos_id=None):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not 0 <= uniform_weight < 1:
            raise ValueError("uniform_weight must lie in [0, 1)")
        self.order = int(order)
        self.vocab = vocab
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.contexts = np.asarray(contexts, dtype=np.int64).reshape(
            self.offsets.size - 1, self.order - 1)
        self.next_ids = np.asarray(next_ids, dtype=np.int64)
        self.next_counts = np.asarray(next_counts, dtype=np.int64)
        self.uniform_weight = float(uniform_weight)
        self.bos_id = bos_id
        self.eos_id = eos_id
        self.context_totals = np.add.reduceat(self.next_counts, self.offsets[:-1]) \
            if self.next_counts.size else np.zeros(0, dtype=np.int64)
        self._index = {tuple(c): i for i, c in enumerate(self.contexts.tolist())}

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    @property
    def num_contexts(self) -> int:
        return len(self._index)

    def with_smoothing(self, uniform_weight: float) -> "NGramModel":
        """Same counts, different smoothing weight; the arrays are shared."""
        clone = object.__new__(NGramModel)
        clone.__dict__.update(self.__dict__)
        if not 0 <= uniform_weight < 1:
            raise ValueError("uniform_weight must lie in [0, 1)")
        clone.uniform_weight = float(uniform_weight)
        return clone

    def _key(self, context: Sequence[int]) -> tuple:
        k = self.order - 1
        if k == 0:
            return ()
        ctx = tuple(int(t) for t in context[-k:])
        if len(ctx) < k:
            raise ValueError(f"context needs {k} tokens, got {len(ctx)}")
        return ctx

    def has_context(self, context: Sequence[int]) -> bool:
        return self._key(context) in self._index

    def context_counts(self, context: Sequence[int]) -> dict[int, int]:
        r = self._index.get(self._key(context))
        if r is None:
            return {}
        lo, hi = self.offsets[r], self.offsets[r + 1]
        return dict(zip(self.next_ids[lo:hi].tolist(), self.next_counts[lo:hi].tolist()))

    def count(self, context: Sequence[int], token: int) -> int:
        return self.context_counts(context).get(int(token), 0)

    def iter_contexts(self) -> Iterable[tuple]:
        return iter(self._index)

    def cond_dist(self, context: Sequence[int]) -> Dist:
        V = self.vocab_size
        r = self._index.get(self._key(context))
        w = self.uniform_weight
        if r is None:
            if w == 0:
                raise UnseenContext(f"context {tuple(context)[-(self.order - 1):]} unseen")
            return Dist.uniform(V)
        lo, hi = self.offsets[r], self.offsets[r + 1]
        probs = np.full(V, w / V)
        probs[self.next_ids[lo:hi]] += (1 - w) * self.next_counts[lo:hi] / self.context_totals[r]
        return Dist(probs)

    def context_after(self, history: Sequence[int]) -> tuple:
        """The conditioning context following ``history``.

        Tokens before the last end-of-document marker are forgotten and the
        remainder is left-padded with begin-of-text markers when short.
        """
        k = self.order - 1
        if k == 0:
            return ()
        hist = list(history)
        if self.eos_id is not None:
            for i in range(len(hist) - 1, -1, -1):
                if hist[i] == self.eos_id:
                    hist = hist[i + 1:]
                    break
        tail = hist[-k:]
        if len(tail) < k:
            if self.bos_id is None:
                raise ValueError(
                    f"need at least {k} tokens of history for an order-{self.order} model"
                )
            tail = [self.bos_id] * (k - len(tail)) + tail
        return tuple(tail)

    def scorer(self, prompt_ids: Sequence[int] = ()):
        """Per-step scorer over a continuation of ``prompt_ids``."""
        prompt = list(prompt_ids)

        def score(prefix):
            return self.cond_dist(self.context_after(prompt + list(prefix)))

        return score

    def __repr__(self):
        return (f"NGramModel(order={self.order}, V={self.vocab_size}, "
                f"contexts={self.num_contexts}, uniform_weight={self.uniform_weight})")


def _windows(seq: np.ndarray, n: int) -> np.ndarray:
    if seq.size < n:
        return np.zeros((0, n), dtype=np.int64)
    return np.lib.stride_tricks.sliding_window_view(seq, n)


def _from_ngrams(grams: np.ndarray, n: int, vocab: Vocab, **kw) -> NGramModel:
    if grams.shape[0] == 0:
        return NGramModel(n, vocab, np.zeros((0, n - 1)), [0], [], [], **kw)
    order = np.lexsort(grams.T[::-1])
    g = grams[order]
    new = np.ones(g.shape[0], dtype=bool)
    new[1:] = np.any(g[1:] != g[:-1], axis=1)
    starts = np.flatnonzero(new)
    uniq = g[starts]
    counts = np.diff(np.append(starts, g.shape[0]))
    ctx = uniq[:, :-1]
    ctx_new = np.ones(uniq.shape[0], dtype=bool)
    if n > 1:
        ctx_new[1:] = np.any(ctx[1:] != ctx[:-1], axis=1)
    else:
        ctx_new[1:] = False
    ctx_starts = np.flatnonzero(ctx_new)
    offsets = np.append(ctx_starts, uniq.shape[0])
    return NGramModel(n, vocab, ctx[ctx_starts], offsets, uniq[:, -1], counts, **kw)


def _default_vocab(ids: Iterable[int]) -> Vocab:
    top = max(ids, default=-1)
    return Vocab(tuple(str(i) for i in range(top + 1)))


def train(corpus_tokens: Sequence[int], n: int, vocab: Optional[Vocab] = None,
          uniform_weight: float = 0.0) -> NGramModel:
    """Count every ``n``-gram of one flat token sequence (no padding)."""
    seq = np.asarray(list(corpus_tokens), dtype=np.int64)
    if n < 1:
        raise ValueError("order must be >= 1")
    if seq.size < n:
        raise ValueError(f"corpus of {seq.size} tokens is shorter than n={n}")
    vocab = vocab or _default_vocab(seq.tolist())
    if seq.size and (seq.min() < 0 or seq.max() >= vocab.size):
        raise ValueError("token id outside the vocabulary")
    return _from_ngrams(_windows(seq, n), n, vocab, uniform_weight=uniform_weight)


def train_documents(docs: Sequence[Sequence[int]], n: int, vocab: Vocab,
                    bos_id: int, eos_id: int, uniform_weight: float = 0.0) -> NGramModel:
    """Count n-grams per document, padded with ``n-1`` BOS and one EOS.

    The EOS makes sampling closed under the training support: a sampled
    EOS sends generation back to the all-BOS context, which every
    document starts from.
    """
    if not docs:
        raise ValueError("no documents to train on")
    pad = [bos_id] * (n - 1)
    chunks = [_windows(np.asarray(pad + list(d) + [eos_id], dtype=np.int64), n) for d in docs]
    grams = np.concatenate(chunks, axis=0)
    if grams.size and grams.max() >= vocab.size:
        raise ValueError("token id outside the vocabulary")
    return _from_ngrams(grams, n, vocab, uniform_weight=uniform_weight,
                        bos_id=bos_id, eos_id=eos_id)


def cond_dist(m: NGramModel, context: Sequence[int]) -> Dist:
    return m.cond_dist(context)


def generate(m: NGramModel, prompt_ids: Sequence[int], steps: int,
             rule: Optional[TruncationRule] = None, rng: Optional[Rng] = None,
             *, stop_at_eos: bool = False) -> GenerationRecord:
    """Sample ``steps`` tokens autoregressively, truncating with ``rule``.

    ``support_exit_index`` is the first step after which the model's
    context was never seen in training. An unsmoothed model that reaches
    such a context stops early with status ``"unseen_context"``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if rng is None:
        raise ValueError("an explicit Rng is required for generation")
    prompt = [int(t) for t in prompt_ids]
    history = list(prompt)
    out, ents, seen = [], [], []
    exit_index, status = None, "complete"
    ctx = m.context_after(history)
    for step in range(steps):
        was_seen = m.has_context(ctx)
        try:
            d = m.cond_dist(ctx)
        except UnseenContext:
            status = "unseen_context"
            break
        d, _ = apply_rule(d, rule)
        tok = sample(d, rng)
        out.append(tok)
        ents.append(entropy(d))
        seen.append(was_seen)
        history.append(tok)
        if stop_at_eos and m.eos_id is not None and tok == m.eos_id:
            status = "eos"
            break
        ctx = m.context_after(history)
        if exit_index is None and not m.has_context(ctx):
            exit_index = step
    return GenerationRecord(tuple(prompt), tuple(out), exit_index, tuple(ents),
                            tuple(seen), status)
