"""Behavioral analyses of truncation rules.

* entropy profiles: how much each rule cuts, bucketed by the entropy of
  the distribution it is applied to;
* adversarial repetition: does a rule let generation escape a loop;
* a CheckList-style battery of hand-built distributions.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ._parallel import parallel_map
from .dist import Dist, Rng, Scorer, Vocab, avg_neg_log_prob, entropy, total_variation
from .ngram import NGramModel, generate
from .truncation import TruncationRule, allowed, truncate

DEFAULT_BUCKET_EDGES = tuple(np.round(np.arange(0.0, 8.0 + 1e-9, 0.25), 2).tolist())


# --------------------------------------------------------------------------
# entropy profiles


@dataclass(frozen=True)
class EntropyBucketStats:
    bucket_lo: float
    bucket_hi: float
    count: int
    mean_tv: Optional[float]
    mean_retained_entropy: Optional[float]


@dataclass(frozen=True)
class EntropyProfile:
    buckets: tuple
    overflow: int

    def __iter__(self):
        return iter(self.buckets)

    def __len__(self):
        return len(self.buckets)

    def occupied(self) -> list:
        return [b for b in self.buckets if b.count > 0]

    @property
    def total(self) -> int:
        return sum(b.count for b in self.buckets) + self.overflow


class ProfileAccumulator:
    """One-pass bucket accumulator.

    Per-bucket values are kept and summed with ``math.fsum`` at the end,
    which is exactly rounded, so the result does not depend on input order
    or on how shards were merged.
    """

    def __init__(self, rule: Optional[TruncationRule], bucket_edges: Sequence[float] = DEFAULT_BUCKET_EDGES):
        edges = [float(e) for e in bucket_edges]
        if len(edges) < 2:
            raise ValueError("need at least two bucket edges")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bucket edges must be strictly increasing")
        self.rule = rule
        self.edges = edges
        self._tv = [[] for _ in edges[:-1]]
        self._ent = [[] for _ in edges[:-1]]
        self.overflow = 0

    def bucket_of(self, h: float) -> Optional[int]:
        if h == self.edges[-1]:
            return len(self.edges) - 2
        i = bisect.bisect_right(self.edges, h) - 1
        if 0 <= i < len(self.edges) - 1:
            return i
        return None

    def add(self, d: Dist) -> None:
        b = self.bucket_of(entropy(d))
        if b is None:
            self.overflow += 1
            return
        post = truncate(d, allowed(d, self.rule)) if self.rule is not None else d
        self._tv[b].append(total_variation(d, post))
        self._ent[b].append(entropy(post))

    def merge(self, other: "ProfileAccumulator") -> "ProfileAccumulator":
        if other.edges != self.edges or other.rule != self.rule:
            raise ValueError("can only merge accumulators with the same rule and edges")
        for mine, theirs in zip(self._tv, other._tv):
            mine.extend(theirs)
        for mine, theirs in zip(self._ent, other._ent):
            mine.extend(theirs)
        self.overflow += other.overflow
        return self

    def result(self) -> EntropyProfile:
        out = []
        for i, (tvs, ents) in enumerate(zip(self._tv, self._ent)):
            n = len(tvs)
            out.append(EntropyBucketStats(
                self.edges[i], self.edges[i + 1], n,
                math.fsum(tvs) / n if n else None,
                math.fsum(ents) / n if n else None,
            ))
        return EntropyProfile(tuple(out), self.overflow)


def entropy_profile(dists: Iterable[Dist], rule: Optional[TruncationRule],
                    bucket_edges: Sequence[float] = DEFAULT_BUCKET_EDGES) -> EntropyProfile:
    acc = ProfileAccumulator(rule, bucket_edges)
    for d in dists:
        acc.add(d)
    return acc.result()


def entropy_profile_sharded(dists: Sequence[Dist], rule, bucket_edges=DEFAULT_BUCKET_EDGES,
                            shards: int = 4, workers: int | None = None) -> EntropyProfile:
    """Same as :func:`entropy_profile`, computed over parallel shards."""
    dists = list(dists)
    chunks = [dists[i::shards] for i in range(shards)]

    def run(chunk):
        acc = ProfileAccumulator(rule, bucket_edges)
        for d in chunk:
            acc.add(d)
        return acc

    parts = parallel_map(run, chunks, workers)
    total = ProfileAccumulator(rule, bucket_edges)
    for p in parts:
        total.merge(p)
    return total.result()


# --------------------------------------------------------------------------
# repetition


def build_adversarial_prompt(prompt_ids: Sequence[int], tail_len: int = 3, extra_reps: int = 5) -> list[int]:
    """Append ``extra_reps`` more copies of the prompt's last ``tail_len`` tokens."""
    prompt = list(prompt_ids)
    if tail_len < 1:
        raise ValueError("tail_len must be positive")
    if extra_reps < 0:
        raise ValueError("extra_reps must be non-negative")
    if len(prompt) < tail_len:
        raise ValueError(f"prompt has {len(prompt)} tokens, fewer than tail_len={tail_len}")
    return prompt + prompt[-tail_len:] * extra_reps


@dataclass(frozen=True)
class RepetitionVerdict:
    avg_nll: float
    is_repetition: bool


def detect_repetition(sample_ids: Sequence[int], scorer: Scorer, threshold: float = 1.0) -> RepetitionVerdict:
    """Flag a sample whose mean surprisal under the model is below ``threshold`` nats."""
    nll = avg_neg_log_prob(sample_ids, scorer)
    return RepetitionVerdict(nll, nll < threshold)


@dataclass(frozen=True)
class CompletionResult:
    prompt_index: int
    completion_index: int
    length: int
    verdict: RepetitionVerdict
    status: str = "complete"


def repetition_runs(model: NGramModel, prompts: Sequence[Sequence[int]], rule: Optional[TruncationRule],
                    rng: Rng, completions_per_prompt: int = 5, max_steps: int = 512, *,
                    tail_len: int = 3, extra_reps: int = 5, threshold: float = 1.0,
                    workers: int | None = None) -> list[CompletionResult]:
    """Every completion's verdict, ordered by (prompt, completion).

    Completion ``j`` of prompt ``i`` draws from ``rng.child(i).child(j)``,
    so results do not depend on scheduling.
    """
    if not prompts:
        raise ValueError("no prompts given")
    if completions_per_prompt < 1:
        raise ValueError("completions_per_prompt must be at least 1")

    def run(i):
        adv = build_adversarial_prompt(prompts[i], tail_len, extra_reps)
        out = []
        for j in range(completions_per_prompt):
            rec = generate(model, adv, max_steps, rule, rng.child(i).child(j), stop_at_eos=True)
            if rec.generated_ids:
                verdict = detect_repetition(rec.generated_ids, model.scorer(adv), threshold)
            else:
                verdict = RepetitionVerdict(math.inf, False)
            out.append(CompletionResult(i, j, len(rec.generated_ids), verdict, rec.status))
        return out

    results = parallel_map(run, range(len(prompts)), workers)
    return [r for chunk in results for r in chunk]


def repetition_experiment(model: NGramModel, prompts, rule, completions_per_prompt: int = 5,
                          max_steps: int = 512, rng: Rng | None = None, **kw) -> float:
    """Fraction of adversarially prompted completions that keep repeating."""
    if rng is None:
        raise ValueError("an explicit Rng is required")
    runs = repetition_runs(model, prompts, rule, rng, completions_per_prompt, max_steps, **kw)
    return sum(r.verdict.is_repetition for r in runs) / len(runs)


# --------------------------------------------------------------------------
# checklist battery


@dataclass(frozen=True)
class Expectation:
    size: Optional[int] = None
    min_size: Optional[int] = None
    max_size: Optional[int] = None
    contains: tuple = ()
    excludes: tuple = ()
    # (other rule key, fraction): size <= fraction * size under the other rule
    at_most_fraction_of: Optional[tuple] = None

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Expectation":
        known = {"size", "min_size", "max_size", "contains", "excludes", "at_most_fraction_of"}
        extra = set(raw) - known
        if extra:
            raise ValueError(f"unknown expectation keys {sorted(extra)}")
        kw = dict(raw)
        for k in ("contains", "excludes", "at_most_fraction_of"):
            if k in kw and kw[k] is not None:
                kw[k] = tuple(kw[k])
        return cls(**kw)


@dataclass(frozen=True)
class ChecklistCase:
    name: str
    dist: Dist
    vocab: Optional[Vocab] = None
    rules: tuple = ()
    # keyed by rule label (e.g. "top_p=0.95") or bare kind (e.g. "top_p")
    expected: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.vocab is not None and self.vocab.size != self.dist.vocab_size:
            raise ValueError(f"case {self.name!r}: vocab and dist sizes differ")

    def token(self, i: int) -> str:
        return self.vocab.token(i) if self.vocab is not None else str(i)


@dataclass(frozen=True)
class ChecklistRow:
    case: str
    rule: str
    size: int
    kept_mass: float
    members: tuple
    passed: Optional[bool]
    failures: tuple = ()


def _expectation_for(case: ChecklistCase, rule: TruncationRule):
    for key in (rule.label, rule.kind):
        if key in case.expected:
            exp = case.expected[key]
            return exp if isinstance(exp, Expectation) else Expectation.from_dict(exp)
    return None


def _sizes_by_key(sizes: Mapping[TruncationRule, int]) -> dict:
    out = {}
    for rule, n in sizes.items():
        out.setdefault(rule.kind, n)
        out[rule.label] = n
    return out


def run_checklist(cases: Sequence[ChecklistCase], rules: Sequence[TruncationRule] = (),
                  print_threshold: float = 0.01) -> list[ChecklistRow]:
    """Apply each rule to each case and evaluate the case's expectations.

    ``rules`` is used for cases that do not carry their own. Failed
    expectations become report rows, never exceptions.
    """
    rows = []
    for case in cases:
        case_rules = tuple(case.rules) or tuple(rules)
        if not case_rules:
            raise ValueError(f"case {case.name!r} has no rules to run")
        sets = {r: allowed(case.dist, r) for r in case_rules}
        by_key = _sizes_by_key({r: a.size for r, a in sets.items()})
        for rule, a in sets.items():
            ids = a.ids
            shown = [i for i in ids[np.argsort(-case.dist.probs[ids], kind="stable")]
                     if case.dist.probs[i] >= print_threshold]
            exp = _expectation_for(case, rule)
            failures = []
            if exp is not None:
                members = {case.token(i) for i in ids}
                if exp.size is not None and a.size != exp.size:
                    failures.append(f"size {a.size} != {exp.size}")
                if exp.min_size is not None and a.size < exp.min_size:
                    failures.append(f"size {a.size} < {exp.min_size}")
                if exp.max_size is not None and a.size > exp.max_size:
                    failures.append(f"size {a.size} > {exp.max_size}")
                for t in exp.contains:
                    if t not in members:
                        failures.append(f"missing {t!r}")
                for t in exp.excludes:
                    if t in members:
                        failures.append(f"unexpectedly kept {t!r}")
                if exp.at_most_fraction_of is not None:
                    other, frac = exp.at_most_fraction_of
                    if other not in by_key:
                        failures.append(f"no rule {other!r} to compare with")
                    elif a.size > frac * by_key[other]:
                        failures.append(f"size {a.size} > {frac} x {other} size {by_key[other]}")
            rows.append(ChecklistRow(
                case.name, rule.label, a.size, a.kept_mass,
                tuple(case.token(i) for i in shown),
                None if exp is None else not failures,
                tuple(failures),
            ))
    return rows


def _peaked(head: Sequence[tuple[str, float]], tail_size: int, tail_prefix: str = "w") -> tuple[Vocab, Dist]:
    """A hand-set head plus ``tail_size`` words sharing the rest equally."""
    tokens = [t for t, _ in head] + [f"{tail_prefix}{i}" for i in range(tail_size)]
    probs = [p for _, p in head]
    if tail_size:
        probs += [(1 - sum(probs)) / tail_size] * tail_size
    return Vocab(tuple(tokens)), Dist(probs)


def builtin_cases() -> list[ChecklistCase]:
    """Synthetic stand-ins for the low-/high-entropy prompts studied by hand."""
    cases = []

    vocab, d = _peaked([("Trump", 0.96)], 40, "name")
    cases.append(ChecklistCase("Donald", d, vocab, expected={
        "top_p": {"size": 1, "contains": ["Trump"]},
        "typical": {"max_size": 1},
        "epsilon": {"size": 41},
        "eta": {"size": 41},
    }))

    vocab, d = _peaked([("is", 0.96), ("'s", 0.02), ("was", 0.01), ("isn", 0.005)], 995)
    cases.append(ChecklistCase("My name", d, vocab, expected={
        "top_p": {"size": 1, "contains": ["is"]},
        "epsilon": {"min_size": 4, "contains": ["is", "'s", "was", "isn"]},
        "eta": {"min_size": 4, "contains": ["is", "'s", "was", "isn"]},
    }))

    V = 50_000
    zipf = 1.0 / np.arange(1, V + 1)
    vocab = Vocab(tuple(f"t{i}" for i in range(V)))
    cases.append(ChecklistCase("The", Dist(zipf / zipf.sum()), vocab, expected={
        "top_p": {"min_size": 1000},
        "epsilon": {"at_most_fraction_of": ("eta", 0.2)},
        "eta": {"min_size": 1000},
    }))

    vocab = Vocab(tuple(f"v{i}" for i in range(10)))
    hot = {"size": 1, "contains": ["v3"]}
    cases.append(ChecklistCase("one-hot", Dist.one_hot(10, 3), vocab, expected={
        k: hot for k in ("top_k", "top_p", "typical", "epsilon", "eta")
    }))
    return cases
