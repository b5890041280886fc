"""Plain-text corpus ingestion and a seeded synthetic corpus generator.

Text is split on whitespace. Documents are separated by blank lines; each
document is left-padded with ``BOS`` and closed with ``EOS`` when counted.
"""
from __future__ import annotations

import bisect
import itertools
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dist import Vocab

BOS = "<s>"
EOS = "</s>"


def split_documents(text: str) -> list[list[str]]:
    docs, cur = [], []
    for line in text.splitlines():
        words = line.split()
        if words:
            cur.extend(words)
        elif cur:
            docs.append(cur)
            cur = []
    if cur:
        docs.append(cur)
    return docs


def read_documents(path) -> list[list[str]]:
    return split_documents(Path(path).read_text(encoding="utf-8"))


def build_vocab(docs: Iterable[Sequence[str]]) -> Vocab:
    """Reserved markers first, then words in order of first appearance."""
    seen = {BOS: None, EOS: None}
    for doc in docs:
        for w in doc:
            seen.setdefault(w, None)
    return Vocab(tuple(seen))


def encode(docs: Iterable[Sequence[str]], vocab: Vocab) -> list[list[int]]:
    return [vocab.ids(doc) for doc in docs]


def write_documents(docs: Iterable[Sequence[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, doc in enumerate(docs):
            if i:
                f.write("\n")
            # wrap long documents so the file stays line-oriented
            for start in range(0, len(doc), 20):
                f.write(" ".join(doc[start:start + 20]))
                f.write("\n")


_ONSETS = ["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s",
           "t", "v", "w", "z", "br", "st", "tr", "pl", "gr", "sh", "ch"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea"]
_CODAS = ["", "n", "r", "s", "t", "l", "m", "nd", "st"]


def pseudo_words(n: int, seed: int = 0) -> list[str]:
    """``n`` distinct pronounceable nonsense words."""
    gen = np.random.default_rng(seed)
    syllables = ["".join(t) for t in itertools.product(_ONSETS, _VOWELS, _CODAS)]
    out, seen = [], set()
    while len(out) < n:
        k = int(gen.integers(1, 4))
        w = "".join(syllables[i] for i in gen.integers(len(syllables), size=k))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def _zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def synthetic_documents(
    n_docs: int,
    seed: int = 0,
    *,
    vocab_words: int = 3000,
    mean_length: int = 100,
    max_branching: int = 60,
) -> list[list[str]]:
    """Documents drawn from a sparse random first-order Markov source.

    Each word has a small Zipf-distributed set of possible successors, so
    higher-order contexts are mostly low entropy, while document starts
    draw from the whole vocabulary. Roughly ``n_docs * mean_length`` tokens.
    """
    gen = np.random.default_rng(seed)
    words = pseudo_words(vocab_words, seed)
    popularity = _zipf_weights(vocab_words, 1.05)
    branching = np.minimum(gen.zipf(1.6, size=vocab_words), max_branching)
    succ_ids, succ_cdf = [], []
    for w in range(vocab_words):
        b = int(branching[w])
        ids = gen.choice(vocab_words, size=b, replace=False, p=popularity)
        weights = gen.dirichlet(np.full(b, 0.7))
        succ_ids.append(ids.tolist())
        succ_cdf.append(np.cumsum(weights).tolist())
    start_cdf = np.cumsum(popularity).tolist()
    stop = 1.0 / mean_length

    docs = []
    for _ in range(n_docs):
        u = gen.random(4 * mean_length + 64).tolist()
        pos = 0

        def draw(cdf):
            nonlocal pos, u
            if pos == len(u):
                u = gen.random(4 * mean_length + 64).tolist()
                pos = 0
            x = u[pos]
            pos += 1
            return min(bisect.bisect_right(cdf, x * cdf[-1]), len(cdf) - 1)

        cur = draw(start_cdf)
        doc = [words[cur]]
        while True:
            ends = draw([stop, 1.0]) == 0
            if ends and len(doc) > 1:
                break
            cur = succ_ids[cur][draw(succ_cdf[cur])]
            doc.append(words[cur])
        docs.append(doc)
    return docs
