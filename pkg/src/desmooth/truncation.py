"""Truncation rules: each maps a model distribution to an allowed set.

Ties in any probability ordering are broken by the lower token id, and the
threshold rules (epsilon, eta) keep words strictly above the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .dist import Dist, entropy

KINDS = ("top_k", "top_p", "typical", "epsilon", "eta")

_ALIASES = {
    "topk": "top_k", "top-k": "top_k", "k": "top_k",
    "topp": "top_p", "top-p": "top_p", "nucleus": "top_p", "p": "top_p",
    "typical_p": "typical",
    "eps": "epsilon", "epsilon_sampling": "epsilon",
    "eta_sampling": "eta",
}


#: Rounding allowance when a cumulative sum is compared with p.
PREFIX_SLACK = 1e-12


def canonical_kind(kind: str) -> str:
    k = kind.strip().lower().replace(" ", "_")
    k = _ALIASES.get(k, k)
    if k not in KINDS:
        raise ValueError(f"unknown truncation rule {kind!r}; expected one of {KINDS}")
    return k


@dataclass(frozen=True)
class TruncationRule:
    """Algorithm tag plus exactly the hyperparameters that algorithm uses.

    For eta-sampling ``alpha="auto"`` means alpha = sqrt(epsilon).
    """

    kind: str
    k: Optional[int] = None
    p: Optional[float] = None
    epsilon: Optional[float] = None
    alpha: Union[float, str, None] = None

    def __post_init__(self):
        kind = canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        given = {f for f in ("k", "p", "epsilon", "alpha") if getattr(self, f) is not None}
        needed = {
            "top_k": {"k"},
            "top_p": {"p"},
            "typical": {"p"},
            "epsilon": {"epsilon"},
            "eta": {"epsilon", "alpha"},
        }[kind]
        if kind == "eta" and "alpha" not in given:
            object.__setattr__(self, "alpha", "auto")
            given.add("alpha")
        if given != needed:
            raise ValueError(
                f"{kind} takes exactly {sorted(needed)}, got {sorted(given)}"
            )
        if kind == "top_k":
            if int(self.k) != self.k or self.k < 1:
                raise ValueError("k must be a positive integer")
            object.__setattr__(self, "k", int(self.k))
        if kind in ("top_p", "typical") and not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if kind in ("epsilon", "eta") and not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if kind == "eta" and self.alpha != "auto" and not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1] or be 'auto'")

    @classmethod
    def top_k(cls, k: int) -> "TruncationRule":
        return cls("top_k", k=k)

    @classmethod
    def top_p(cls, p: float) -> "TruncationRule":
        return cls("top_p", p=p)

    @classmethod
    def typical(cls, p: float) -> "TruncationRule":
        return cls("typical", p=p)

    @classmethod
    def eps(cls, epsilon: float) -> "TruncationRule":
        return cls("epsilon", epsilon=epsilon)

    @classmethod
    def eta(cls, epsilon: float, alpha: Union[float, str] = "auto") -> "TruncationRule":
        return cls("eta", epsilon=epsilon, alpha=alpha)

    @classmethod
    def from_param(cls, kind: str, value: float) -> "TruncationRule":
        """Build a rule from its single headline hyperparameter."""
        kind = canonical_kind(kind)
        if kind == "top_k":
            return cls.top_k(int(value))
        if kind in ("top_p", "typical"):
            return cls(kind, p=float(value))
        if kind == "epsilon":
            return cls.eps(float(value))
        return cls.eta(float(value))

    @property
    def effective_alpha(self) -> Optional[float]:
        if self.kind != "eta":
            return None
        return math.sqrt(self.epsilon) if self.alpha == "auto" else float(self.alpha)

    @property
    def param(self):
        """The headline hyperparameter (epsilon for eta-sampling)."""
        return {"top_k": self.k, "top_p": self.p, "typical": self.p,
                "epsilon": self.epsilon, "eta": self.epsilon}[self.kind]

    @property
    def label(self) -> str:
        if self.kind == "eta" and self.alpha != "auto":
            return f"eta={self.epsilon:g}:{self.alpha:g}"
        return f"{self.kind}={self.param:g}"

    def allowed(self, d: Dist) -> "AllowedSet":
        return allowed(d, self)

    def __call__(self, d: Dist) -> Dist:
        return truncate(d, allowed(d, self))


@dataclass(frozen=True)
class AllowedSet:
    mask: np.ndarray
    kept_mass: float
    rule: Optional[TruncationRule] = None

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @property
    def ids(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def __contains__(self, i) -> bool:
        return bool(self.mask[i])


def _make(d: Dist, mask: np.ndarray, rule) -> AllowedSet:
    mask = np.asarray(mask, dtype=bool)
    mask.setflags(write=False)
    return AllowedSet(mask, float(np.sum(d.probs[mask])), rule)


def allowed_from_mask(d: Dist, mask) -> AllowedSet:
    """Wrap an arbitrary boolean mask (e.g. the identity) as an allowed set."""
    mask = np.array(mask, dtype=bool)
    if mask.shape != d.probs.shape:
        raise ValueError("mask length does not match the distribution")
    return _make(d, mask, None)


def truncate(d: Dist, a: AllowedSet) -> Dist:
    """Zero everything outside the allowed set and renormalize by Z."""
    if a.mask.shape != d.probs.shape:
        raise ValueError("allowed set does not match the distribution size")
    if not a.mask.any() or a.kept_mass <= 0:
        raise ValueError("cannot renormalize over an empty allowed set")
    out = np.where(a.mask, d.probs, 0.0) / a.kept_mass
    return Dist(out)


def _prefix_mask(d: Dist, order: np.ndarray, p: float) -> np.ndarray:
    # minimal prefix of `order` whose cumulative mass reaches p; the target is
    # capped at the achievable total so p=1 survives rounding in the sum, and
    # given PREFIX_SLACK so that e.g. 45 x 0.02 counts as reaching 0.9
    cum = np.cumsum(d.probs[order])
    target = min(p, cum[-1]) - PREFIX_SLACK
    j = int(np.searchsorted(cum, target, side="left"))
    mask = np.zeros(d.vocab_size, dtype=bool)
    mask[order[: j + 1]] = True
    return mask


def allowed_top_k(d: Dist, k: int) -> AllowedSet:
    if not 1 <= k <= d.vocab_size:
        raise ValueError(f"k={k} outside [1, {d.vocab_size}]")
    order = np.argsort(-d.probs, kind="stable")
    mask = np.zeros(d.vocab_size, dtype=bool)
    mask[order[:k]] = True
    return _make(d, mask, TruncationRule.top_k(k))


def allowed_top_p(d: Dist, p: float) -> AllowedSet:
    rule = TruncationRule.top_p(p)
    order = np.argsort(-d.probs, kind="stable")
    return _make(d, _prefix_mask(d, order, p), rule)


def allowed_typical(d: Dist, p: float) -> AllowedSet:
    rule = TruncationRule.typical(p)
    h = entropy(d)
    with np.errstate(divide="ignore"):
        keys = np.abs(h + np.log(d.probs))
    # zero-probability words get log 0 = -inf, hence key +inf: sorted last
    order = np.argsort(keys, kind="stable")
    return _make(d, _prefix_mask(d, order, p), rule)


def allowed_epsilon(d: Dist, epsilon: float) -> AllowedSet:
    """Keep words with probability > epsilon, or just the argmax if none are."""
    rule = TruncationRule.eps(epsilon)
    mask = d.probs > epsilon
    if not mask.any():
        mask = np.zeros(d.vocab_size, dtype=bool)
        mask[d.argmax()] = True
    return _make(d, mask, rule)


def eta_threshold(d: Dist, epsilon: float, alpha: Union[float, str] = "auto") -> float:
    """min(epsilon, alpha * exp(-h)) with h the entropy of ``d`` itself."""
    if alpha == "auto":
        alpha = math.sqrt(epsilon)
    return min(epsilon, alpha * math.exp(-entropy(d)))


def allowed_eta(d: Dist, epsilon: float, alpha: Union[float, str] = "auto") -> AllowedSet:
    rule = TruncationRule.eta(epsilon, alpha)
    mask = d.probs > eta_threshold(d, epsilon, alpha)
    if not mask.any():
        # only reachable with alpha == 1 on an exactly uniform input, where
        # exp(-h) equals every probability
        mask = np.zeros(d.vocab_size, dtype=bool)
        mask[d.argmax()] = True
    return _make(d, mask, rule)


def allowed(d: Dist, rule: Optional[TruncationRule]) -> AllowedSet:
    """Dispatch on ``rule.kind``; ``None`` means no truncation."""
    if rule is None:
        return _make(d, np.ones(d.vocab_size, dtype=bool), None)
    if rule.kind == "top_k":
        return allowed_top_k(d, rule.k)
    if rule.kind == "top_p":
        return allowed_top_p(d, rule.p)
    if rule.kind == "typical":
        return allowed_typical(d, rule.p)
    if rule.kind == "epsilon":
        return allowed_epsilon(d, rule.epsilon)
    return allowed_eta(d, rule.epsilon, rule.alpha)


def apply_rule(d: Dist, rule: Optional[TruncationRule]) -> tuple[Dist, AllowedSet]:
    a = allowed(d, rule)
    if rule is None:
        return d, a
    return truncate(d, a), a
