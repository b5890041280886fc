"""Ground-truth experiments with an explicitly smoothed model.

A model distribution is built as ``lam * p_star + (1 - lam) * q`` where
``q`` stays within a ``delta`` band around uniform. Under that model the
probability of any word outside the true support is bounded, and the
threshold ``eta_star`` derived from those bounds separates in-support
words from pure smoothing mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import Dist, Rng, entropy
from .truncation import AllowedSet, allowed_from_mask, truncate

#: Probabilities at or below this count as zero when taking a support.
SUPPORT_FLOOR = 1e-12
_BAND_TOL = 1e-12


def support(d: Dist) -> np.ndarray:
    return d.probs > SUPPORT_FLOOR


@dataclass(frozen=True)
class TvsWeights:
    beta_var: float = 1.0
    beta_sup: float = 1.0

    def __post_init__(self):
        if self.beta_var < 0 or self.beta_sup < 0:
            raise ValueError("TV_S weights must be non-negative")
        if self.beta_var == 0 and self.beta_sup == 0:
            raise ValueError("TV_S weights cannot both be zero")


@dataclass(frozen=True)
class SmoothingScenario:
    """A true distribution, its smoothing distribution, and model constants.

    ``lam`` is the context mixture weight, ``lambda_bar`` its global floor.
    The band on ``q`` is treated as closed so that ``delta = 0`` (exactly
    uniform smoothing) is representable.
    """

    p_star: Dist
    q: Dist
    lam: float
    delta: float
    alpha: float
    lambda_bar: float

    def __post_init__(self):
        V = self.p_star.vocab_size
        if self.q.vocab_size != V:
            raise ValueError("p_star and q must share a vocabulary")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.lambda_bar <= 1:
            raise ValueError("lambda_bar must lie in (0, 1]")
        lo, hi = (1 - self.delta) / V, (1 + self.delta) / V
        if np.any(self.q.probs < lo - _BAND_TOL) or np.any(self.q.probs > hi + _BAND_TOL):
            raise ValueError(f"q leaves the delta band [{lo:.3g}, {hi:.3g}]")
        if self.lam < self.min_lambda - _BAND_TOL:
            raise ValueError(
                f"lam={self.lam} is below the required floor {self.min_lambda}"
            )

    @property
    def vocab_size(self) -> int:
        return self.p_star.vocab_size

    @property
    def true_entropy(self) -> float:
        return entropy(self.p_star)

    @property
    def context_lambda_bar(self) -> float:
        """The entropy-dependent floor 1 - V alpha exp(-h*) / (1 + delta)."""
        V = self.vocab_size
        return 1 - V * self.alpha * math.exp(-self.true_entropy) / (1 + self.delta)

    @property
    def min_lambda(self) -> float:
        return max(self.lambda_bar, self.context_lambda_bar)

    @property
    def support(self) -> np.ndarray:
        return support(self.p_star)


def smooth(s: SmoothingScenario) -> Dist:
    return Dist(s.lam * s.p_star.probs + (1 - s.lam) * s.q.probs)


def bound_absolute(s: SmoothingScenario) -> float:
    """Largest probability an out-of-support word can reach: (1+δ)(1-λ̄)/V."""
    return (1 + s.delta) * (1 - s.lambda_bar) / s.vocab_size


def bound_relative(s: SmoothingScenario) -> float:
    return s.alpha * math.exp(-s.true_entropy)


def eta_star(s: SmoothingScenario) -> float:
    return min(bound_absolute(s), bound_relative(s))


def tv_s(p_star: Dist, p_trunc: Dist, a: AllowedSet, w: TvsWeights = TvsWeights()) -> float:
    """Support-weighted total variation.

    ``beta_var`` times the true mass the allowed set drops, plus
    ``beta_sup`` times the truncated mass placed outside the true support.
    """
    if p_star.vocab_size != p_trunc.vocab_size or a.mask.size != p_star.vocab_size:
        raise ValueError("vocabulary size mismatch")
    s_star = support(p_star)
    lost = math.fsum(p_star.probs[s_star & ~a.mask])
    off = math.fsum(p_trunc.probs[~s_star & a.mask])
    return w.beta_var * lost + w.beta_sup * off


def threshold_allowed(d: Dist, threshold: float) -> np.ndarray:
    return d.probs > threshold


@dataclass(frozen=True)
class RecoveryReport:
    support_loss_zero: bool
    minimal: bool
    threshold: float
    kept: int
    var_loss: float
    best_var_loss: float
    # words the tested threshold drops although a zero-support-loss
    # threshold keeps them
    needlessly_truncated: tuple = field(default=())
    # kept words outside the true support
    spurious: tuple = field(default=())


def _candidate_thresholds(d: Dist) -> np.ndarray:
    vals = np.unique(d.probs)
    mids = (vals[:-1] + vals[1:]) / 2
    return np.unique(np.concatenate([[0.0], vals, mids]))


def verify_recovery(s: SmoothingScenario, threshold: float | None = None) -> RecoveryReport:
    """Check zero support loss and minimal truncation for a threshold rule.

    The threshold defaults to ``eta_star(s)``. Minimality is decided by
    brute force over every threshold at which the allowed set can change:
    among those whose allowed set stays inside the true support, none may
    lose less true mass than the tested one.
    """
    model = smooth(s)
    s_star = s.support
    tau = eta_star(s) if threshold is None else float(threshold)

    def losses(t):
        mask = threshold_allowed(model, t)
        if not mask.any():
            return mask, math.inf
        a = allowed_from_mask(model, mask)
        return mask, tv_s(s.p_star, truncate(model, a), a, TvsWeights(1.0, 0.0))

    mask, var_loss = losses(tau)
    support_loss_zero = bool(mask.any()) and not np.any(mask & ~s_star)

    best_var, best_mask = math.inf, None
    for t in _candidate_thresholds(model):
        m, lost = losses(t)
        if m.any() and not np.any(m & ~s_star) and lost < best_var:
            best_var, best_mask = lost, m

    minimal = support_loss_zero and var_loss <= best_var + 1e-12
    needless = ()
    if best_mask is not None:
        needless = tuple(int(i) for i in np.flatnonzero(best_mask & ~mask))
    spurious = tuple(int(i) for i in np.flatnonzero(mask & ~s_star))
    return RecoveryReport(
        support_loss_zero=support_loss_zero,
        minimal=bool(minimal),
        threshold=tau,
        kept=int(mask.sum()),
        var_loss=var_loss,
        best_var_loss=best_var,
        needlessly_truncated=needless,
        spurious=spurious,
    )


def _entropy_of(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.dot(p, np.log(p)))


def _tilted(scores: np.ndarray, t: float, floor: float) -> np.ndarray:
    z = t * scores
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    k = p.size
    return (1 - k * floor) * p + floor


def _floor_for(k: int, goal: float) -> float:
    # largest per-word floor f whose most-peaked distribution
    # [1-(k-1)f, f, ..., f] has entropy <= goal
    lo, hi = 0.0, 1.0 / k
    for _ in range(100):
        mid = (lo + hi) / 2
        peaked = np.array([1 - (k - 1) * mid] + [mid] * (k - 1))
        if _entropy_of(peaked) <= goal:
            lo = mid
        else:
            hi = mid
    return lo


def _true_dist(k: int, target: float, gen: np.random.Generator) -> np.ndarray:
    if k == 1:
        return np.ones(1)
    if target >= math.log(k) - 1e-12:
        return np.full(k, 1.0 / k)
    goal_min = 0.5 * min(target, 0.1) if target > 0 else 0.05
    floor = _floor_for(k, goal_min)
    scores = gen.standard_normal(k)
    # entropy falls monotonically as the tilt t grows
    lo, hi = 0.0, 1.0
    while _entropy_of(_tilted(scores, hi, floor)) > target and hi < 1e6:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if _entropy_of(_tilted(scores, mid, floor)) > target:
            lo = mid
        else:
            hi = mid
    return _tilted(scores, hi, floor)


def sample_scenario(
    vocab_size: int,
    support_size: int,
    entropy_target: float,
    rng: Rng,
    *,
    max_delta: float = 0.5,
    lambda_bar_min: float = 0.8,
) -> SmoothingScenario:
    """Draw a random scenario honoring every model constraint.

    The true distribution covers exactly ``support_size`` words with
    entropy within 0.1 nats of ``entropy_target``. The mixture floor is
    chosen so every in-support word ends up strictly above ``eta_star``;
    that separation is what makes eta_star recover the whole support.
    """
    if not 1 <= support_size <= vocab_size:
        raise ValueError("need 1 <= support_size <= vocab_size")
    if entropy_target < 0 or entropy_target > math.log(support_size) + 1e-12:
        raise ValueError(
            f"entropy target {entropy_target} infeasible for support size {support_size}"
        )
    gen = rng.generator
    V = vocab_size
    words = gen.permutation(V)[:support_size]
    p = np.zeros(V)
    p[words] = _true_dist(support_size, entropy_target, gen)
    p_star = Dist(p)
    h_star = entropy(p_star)

    delta = float(gen.uniform(0, max_delta))
    alpha = float(gen.uniform(0.01, 1.0))
    # centred deviations of half-width delta/2 keep q strictly inside the band
    dev = gen.uniform(-delta / 2, delta / 2, size=V)
    dev -= dev.mean()
    q = Dist((1 + dev) / V)

    # lambda_bar * p_min > (1 - lambda_bar)(1 + delta)/V >= eta_star
    c = (1 + delta) / V
    p_min = float(p_star.probs[words].min())
    separating = c / (p_min + c)
    lo = max(lambda_bar_min, separating + (1 - separating) / 2)
    lambda_bar = float(lo + (1 - lo) * gen.uniform(0, 0.9))
    lam_lo = max(lambda_bar, 1 - V * alpha * math.exp(-h_star) / (1 + delta))
    lam = float(gen.uniform(lam_lo, 1.0)) if lam_lo < 1 else 1.0
    return SmoothingScenario(p_star, q, lam, delta, alpha, lambda_bar)
