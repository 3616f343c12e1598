"""Scalar induced losses, scoring rules and exp-concavity checks.

A generalized-linear loss is a function ``phi(t, y)`` of the linear
predictor ``t = theta^T x`` and a label ``y``.  The log loss of each GLM
family gives one such ``phi``; composing a family with one of the
non-log scoring rules gives another (generally non-convex) one.  Both are
represented by :class:`ScalarLoss` with exact first and second
derivatives in ``t``.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

FAMILIES = ("logistic", "geometric", "poisson", "gaussian")
DISCRETE_FAMILIES = ("logistic", "geometric", "poisson")

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# integral of N(m, 1)^2 over the real line
GAUSS_SQ_NORM = 1.0 / (2.0 * math.sqrt(math.pi))

_TAIL = 1e-16
_MAX_SUPPORT = 2_000_000


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class ScoringRule(str, enum.Enum):
    LOG = "log"
    SQUARED = "squared"
    HELLINGER = "hellinger"
    QUADRATIC = "quadratic"


# Table of exp-concavity (mixability) constants for the four rules.
MIXABILITY = {
    ScoringRule.LOG: 1.0,
    ScoringRule.SQUARED: 1.0,
    ScoringRule.HELLINGER: 3.0,
    ScoringRule.QUADRATIC: 0.5,
}
# the Hellinger constant established by the stationary-point argument
HELLINGER_PROOF_ETA = 27.0 / 8.0


@dataclass(frozen=True)
class LabelSet:
    """Label space: ``binary`` {-1, +1}, ``integers`` 0..high, or ``interval`` [low, high]."""

    kind: str
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("binary", "integers", "interval"):
            raise DomainError(f"unknown label set kind {self.kind!r}")
        if self.kind == "binary" and (self.low, self.high) != (-1.0, 1.0):
            raise DomainError("binary label sets are exactly {-1, +1}")
        if self.kind == "integers" and (self.low != 0 or self.high < 0 or self.high != int(self.high)):
            raise DomainError("integer label sets are 0..y_max with integer y_max >= 0")
        if self.low > self.high:
            raise DomainError("empty label interval")

    @classmethod
    def binary(cls) -> "LabelSet":
        return cls("binary", -1.0, 1.0)

    @classmethod
    def integers(cls, y_max: int = 10) -> "LabelSet":
        return cls("integers", 0.0, float(y_max))

    @classmethod
    def interval(cls, low: float = -3.0, high: float = 3.0) -> "LabelSet":
        return cls("interval", float(low), float(high))

    @property
    def diameter(self) -> float:
        # max |y| over the set; equals max{y} for the integer sets
        return float(max(abs(self.low), abs(self.high)))

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)) and self.kind != "interval":
            return False
        if self.kind == "binary":
            return bool(np.all((y == 1.0) | (y == -1.0)))
        if self.kind == "integers":
            return bool(np.all((y == np.round(y)) & (y >= 0) & (y <= self.high)))
        return bool(np.all((y >= self.low) & (y <= self.high)))

    def candidates(self, n: int = 101) -> np.ndarray:
        """Finite set of labels used when a supremum over the label set is gridded."""
        if self.kind == "binary":
            return np.array([-1.0, 1.0])
        if self.kind == "integers":
            return np.arange(0.0, self.high + 1.0)
        if not (np.isfinite(self.low) and np.isfinite(self.high)):
            raise DomainError("cannot grid an unbounded label interval")
        return np.linspace(self.low, self.high, n)


def default_label_set(family: str) -> LabelSet:
    if family == "logistic":
        return LabelSet.binary()
    if family in ("geometric", "poisson"):
        return LabelSet.integers(10)
    if family == "gaussian":
        return LabelSet.interval(-3.0, 3.0)
    raise DomainError(f"unknown family {family!r}")


def softplus(t):
    """log(1 + e^t), switching to t + log(1 + e^-t) above t = 30."""
    t = np.asarray(t, dtype=float)
    big = t > 30.0
    safe = np.where(big, 0.0, t)
    return np.where(big, t + np.log1p(np.exp(-np.where(big, t, 0.0))), np.log1p(np.exp(safe)))


# -- log-loss kernels per family -----------------------------------------------

def _nll(family, t, y):
    if family == "logistic":
        return softplus(-t * y)
    if family == "geometric":
        return (y + 1.0) * softplus(t) - t
    if family == "poisson":
        return np.exp(t) - y * t
    if family == "gaussian":
        return 0.5 * (t - y) ** 2
    raise DomainError(f"unknown family {family!r}")


def _nll_d1(family, t, y):
    if family == "logistic":
        return -y * expit(-t * y)
    if family == "geometric":
        return (y + 1.0) * expit(t) - 1.0
    if family == "poisson":
        return np.exp(t) - y
    if family == "gaussian":
        return t - y
    raise DomainError(f"unknown family {family!r}")


def _nll_d2(family, t, y):
    if family == "logistic":
        return expit(t * y) * expit(-t * y)
    if family == "geometric":
        return (y + 1.0) * expit(t) * expit(-t)
    if family == "poisson":
        return np.exp(t) + 0.0 * y
    if family == "gaussian":
        return np.ones(np.broadcast(t, y).shape)
    raise DomainError(f"unknown family {family!r}")


def base_log_measure(family, y):
    """The theta-free part of -log p(y | t) that the scalar log loss drops."""
    y = np.asarray(y, dtype=float)
    if family == "poisson":
        return gammaln(y + 1.0)
    if family == "gaussian":
        return np.full(y.shape, LOG_SQRT_2PI)
    return np.zeros(y.shape)


def log_density(family, t, y):
    """log p(y | t) for the family at linear predictor ``t`` (mass or density)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    return -_nll(family, t, y) - base_log_measure(family, y)


def support_bound(family, t, tail: float = _TAIL) -> int:
    """Largest label K such that P(Y > K) < ``tail`` for every predictor in ``t``."""
    t = np.asarray(t, dtype=float)
    if family == "poisson":
        rate = float(np.max(np.exp(t)))
        k = rate + 12.0 * math.sqrt(rate) + 40.0
    elif family == "geometric":
        # P(Y > K) = (1 - lam)^(K + 1) with log(1 - lam) = -softplus(t)
        log_fail = -float(np.min(softplus(t)))
        k = math.log(tail) / log_fail
    else:
        raise DomainError(f"{family} has no integer support")
    if not np.isfinite(k) or k > _MAX_SUPPORT:
        raise DomainError(f"{family} support too large to sum at predictor range {t.min()}..{t.max()}")
    return int(math.ceil(k))


def family_labels(family, t, tail: float = _TAIL) -> np.ndarray:
    if family == "logistic":
        return np.array([-1.0, 1.0])
    return np.arange(0.0, support_bound(family, t, tail) + 1.0)


# -- scalar losses ---------------------------------------------------------------

@dataclass(frozen=True)
class ScalarLoss:
    """phi(t, y) induced by a GLM family and a scoring rule.

    With ``rule="log"`` this is the family's log loss with the base-measure
    constant dropped (logistic ``log(1+e^{-ty})``, geometric
    ``(y+1)log(1+e^t) - t``, poisson ``e^t - yt``, gaussian ``(t-y)^2/2``).
    Other rules give ``rule(p_t, y)`` with ``p_t`` the family conditional.
    Methods broadcast over array ``t`` and ``y`` and do not validate labels;
    use :func:`loss_eval` and friends for checked calls.
    """

    family: str
    rule: ScoringRule = ScoringRule.LOG
    label_set: LabelSet | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        object.__setattr__(self, "rule", ScoringRule(self.rule))
        if self.label_set is None:
            object.__setattr__(self, "label_set", default_label_set(self.family))

    @property
    def id(self) -> str:
        return self.family if self.rule is ScoringRule.LOG else f"{self.family}-{self.rule.value}"

    @property
    def is_log(self) -> bool:
        return self.rule is ScoringRule.LOG

    def value(self, t, y):
        t, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(y, float))
        if self.is_log:
            return _nll(self.family, t, y)
        p, _, _ = self._prob_derivs(t, y)
        if self.rule is ScoringRule.SQUARED:
            return 0.5 * (p - 1.0) ** 2
        if self.rule is ScoringRule.HELLINGER:
            return (np.sqrt(p) - 1.0) ** 2
        s0, _, _ = self._sq_norm_derivs(t)
        return 0.5 - p + 0.5 * s0

    def d1(self, t, y):
        t, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(y, float))
        if self.is_log:
            return _nll_d1(self.family, t, y)
        p, dp, _ = self._prob_derivs(t, y)
        if self.rule is ScoringRule.SQUARED:
            return (p - 1.0) * dp
        if self.rule is ScoringRule.HELLINGER:
            r = np.sqrt(p)
            return (r - 1.0) * r * self._score(t, y)
        _, s1, _ = self._sq_norm_derivs(t)
        return -dp + 0.5 * s1

    def d2(self, t, y):
        t, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(y, float))
        if self.is_log:
            return _nll_d2(self.family, t, y)
        p, dp, ddp = self._prob_derivs(t, y)
        if self.rule is ScoringRule.SQUARED:
            return dp**2 + (p - 1.0) * ddp
        if self.rule is ScoringRule.HELLINGER:
            s = self._score(t, y)
            ds = -_nll_d2(self.family, t, y)
            r = np.sqrt(p)
            dr = 0.5 * r * s
            ddr = r * (0.25 * s**2 + 0.5 * ds)
            return 2.0 * dr**2 + 2.0 * (r - 1.0) * ddr
        _, _, s2 = self._sq_norm_derivs(t)
        return -ddp + 0.5 * s2

    # d/dt log p_t(y) = -phi_log'(t, y)
    def _score(self, t, y):
        return -_nll_d1(self.family, t, y)

    def _prob_derivs(self, t, y):
        p = np.exp(log_density(self.family, t, y))
        s = self._score(t, y)
        ds = -_nll_d2(self.family, t, y)
        return p, p * s, p * (s**2 + ds)

    def _sq_norm_derivs(self, t):
        """S(t) = sum_k p_t(k)^2 and its first two t-derivatives."""
        if self.family == "gaussian":
            return np.full(t.shape, GAUSS_SQ_NORM), np.zeros(t.shape), np.zeros(t.shape)
        if t.size == 0:
            return t.copy(), t.copy(), t.copy()
        # depends on t alone, so evaluate once per distinct predictor
        uniq, inv = np.unique(t, return_inverse=True)
        labels = family_labels(self.family, uniq)
        tt = uniq[:, None]
        p2 = np.exp(2.0 * log_density(self.family, tt, labels))
        s = -_nll_d1(self.family, tt, labels)
        ds = -_nll_d2(self.family, tt, labels)
        out = (p2.sum(-1), 2.0 * (p2 * s).sum(-1), 2.0 * (p2 * (2.0 * s**2 + ds)).sum(-1))
        return tuple(o[inv].reshape(t.shape) for o in out)


def _check_label(loss: ScalarLoss, t, y):
    if not loss.label_set.contains(y):
        raise DomainError(f"label {y!r} outside label set {loss.label_set}")
    if not np.all(np.isfinite(np.asarray(t, dtype=float))):
        raise DomainError("t must be finite")


def loss_eval(loss: ScalarLoss, t, y):
    _check_label(loss, t, y)
    return loss.value(t, y)


def loss_d1(loss: ScalarLoss, t, y):
    _check_label(loss, t, y)
    return loss.d1(t, y)


def loss_d2(loss: ScalarLoss, t, y):
    _check_label(loss, t, y)
    return loss.d2(t, y)


# -- predictive distributions and scoring rules ----------------------------------

class PredictiveDistribution:
    """A distribution over labels.

    Subclasses provide ``prob`` (mass, or density for continuous labels),
    ``log_prob``, ``sq_norm`` (sum of squared masses, or integral of the
    squared density) and the ``discrete`` flag.
    """

    discrete: bool = True

    def prob(self, y):
        raise NotImplementedError

    def log_prob(self, y):
        with np.errstate(divide="ignore"):
            return np.log(self.prob(y))

    def sq_norm(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Categorical(PredictiveDistribution):
    """Explicit probability vector over a finite list of labels."""

    labels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if labels.shape != probs.shape or labels.ndim != 1:
            raise DomainError("labels and probs must be 1-D arrays of equal length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise DomainError("probs must be nonnegative and sum to 1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)

    def prob(self, y):
        y = np.asarray(y, dtype=float)
        hit = self.labels == y[..., None]
        return np.where(hit, self.probs, 0.0).sum(-1)

    def sq_norm(self) -> float:
        return float(np.sum(self.probs**2))


def score_eval(rule, p: PredictiveDistribution, y) -> float:
    """Loss of predicting ``p`` when ``y`` occurs.

    The log rule returns ``inf`` when ``p(y) = 0``; this is a value, not an
    error, so aggregation weights of such predictions become exactly 0.
    """
    rule = ScoringRule(rule)
    if rule is ScoringRule.LOG:
        return -p.log_prob(y)
    py = p.prob(y)
    if rule is ScoringRule.SQUARED:
        return 0.5 * (py - 1.0) ** 2
    if rule is ScoringRule.HELLINGER:
        return (np.sqrt(py) - 1.0) ** 2
    return 0.5 * (1.0 - 2.0 * py + p.sq_norm())


def mixability_constant(rule) -> float:
    return MIXABILITY[ScoringRule(rule)]


def _simplex_grid(k: int, resolution: int) -> np.ndarray:
    m = resolution - 1
    pts = [c for c in itertools.product(range(m + 1), repeat=k - 1) if sum(c) <= m]
    arr = np.array([list(c) + [m - sum(c)] for c in pts], dtype=float)
    return arr / m


def _rule_on_simplex(rule: ScoringRule, p: np.ndarray, y: int) -> np.ndarray:
    py = p[..., y]
    if rule is ScoringRule.LOG:
        with np.errstate(divide="ignore"):
            return -np.log(py)
    if rule is ScoringRule.SQUARED:
        return 0.5 * (py - 1.0) ** 2
    if rule is ScoringRule.HELLINGER:
        return (np.sqrt(py) - 1.0) ** 2
    return 0.5 * (1.0 - 2.0 * py + np.sum(p**2, axis=-1))


@dataclass(frozen=True)
class ExpConcavityResult:
    holds: bool
    violated_at: tuple | None = None
    label: int | None = None
    gap: float = 0.0


def check_exp_concavity(rule, eta: float, k: int, grid_resolution: int = 21,
                        tol: float = 1e-9) -> ExpConcavityResult:
    """Midpoint-concavity scan of ``p -> exp(-eta * rule(p, y))`` on the k-simplex.

    Every pair of points of the simplex lattice with ``grid_resolution``
    points per edge is tested for every label; the first pair whose
    midpoint falls below the chord by more than ``tol`` is reported.
    """
    rule = ScoringRule(rule)
    if k < 2 or grid_resolution < 3:
        raise DomainError("need k >= 2 and grid_resolution >= 3")
    pts = _simplex_grid(k, grid_resolution)
    n = len(pts)
    chunk = max(1, 2_000_000 // (n * k))
    for y in range(k):
        f = np.exp(-eta * _rule_on_simplex(rule, pts, y))
        for start in range(0, n, chunk):
            a = pts[start:start + chunk]
            mid = 0.5 * (a[:, None, :] + pts[None, :, :])
            gap = 0.5 * (f[start:start + chunk, None] + f[None, :]) - np.exp(-eta * _rule_on_simplex(rule, mid, y))
            bad = np.argwhere(gap > tol)
            if len(bad):
                i, j = bad[0]
                return ExpConcavityResult(False, (a[i].tolist(), pts[j].tolist()), y, float(gap[i, j]))
    return ExpConcavityResult(True)
