"""Generalized-linear conditional families p_theta(y | x).

Each family is parameterized by the linear predictor ``t = theta^T x``.
For logistic, poisson and gaussian this predictor is the natural
parameter.  The geometric family with success probability ``sigmoid(t)``
is not canonical in ``t``; its natural parameter is
``c = log(1 - sigmoid(t)) = -softplus(t)`` and :func:`log_partition`
reports ``A(c) = -log(1 - e^c)``.  KL divergences are always taken
between conditionals indexed by linear predictors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, xlogy

from .losses import (
    GAUSS_SQ_NORM,
    DomainError,
    LabelSet,
    PredictiveDistribution,
    ScalarLoss,
    default_label_set,
    family_labels,
    log_density,
    softplus,
)

_ALIASES = {"gaussian_unit_variance": "gaussian"}


@dataclass(frozen=True)
class GlmFamily:
    """A GLM conditional family on ``dimension``-dimensional covariates.

    ``renormalize`` only affects the geometric and poisson families: when
    set, masses are renormalized over ``0..label_set.high``.  By default the
    full infinite-support law is used and sums are truncated adaptively.
    """

    id: str
    dimension: int = 2
    label_set: LabelSet | None = None
    renormalize: bool = False

    def __post_init__(self):
        fam = _ALIASES.get(self.id, self.id)
        if fam not in ("logistic", "geometric", "poisson", "gaussian"):
            raise DomainError(f"unknown family {self.id!r}")
        object.__setattr__(self, "id", fam)
        if self.label_set is None:
            object.__setattr__(self, "label_set", default_label_set(fam))
        if self.dimension < 1:
            raise DomainError("dimension must be positive")

    @property
    def discrete(self) -> bool:
        return self.id != "gaussian"

    def loss(self, rule="log") -> ScalarLoss:
        return ScalarLoss(self.id, rule, self.label_set)

    def mean(self, t):
        """E[Y] at linear predictor ``t`` (for logistic, on the {-1, +1} scale)."""
        t = np.asarray(t, dtype=float)
        if self.id == "logistic":
            return np.tanh(t / 2.0)
        if self.id == "geometric":
            return np.exp(-t)
        if self.id == "poisson":
            return np.exp(t)
        return t

    def variance(self, t):
        t = np.asarray(t, dtype=float)
        if self.id == "logistic":
            return 4.0 * expit(t) * expit(-t)
        if self.id == "geometric":
            return np.exp(-t) * (1.0 + np.exp(-t))
        if self.id == "poisson":
            return np.exp(t)
        return np.ones_like(t)

    def fisher_information(self, t):
        """Var of d/dt log p_t(Y), i.e. the Fisher information in the linear predictor."""
        t = np.asarray(t, dtype=float)
        if self.id == "logistic":
            return expit(t) * expit(-t)
        if self.id == "geometric":
            return expit(-t)
        if self.id == "poisson":
            return np.exp(t)
        return np.ones_like(t)


@dataclass(frozen=True, eq=False)
class GlmPredictive(PredictiveDistribution):
    """Conditional law of Y at a scalar linear predictor ``t``."""

    family: GlmFamily
    t: float

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise DomainError("linear predictor must be finite")

    @property
    def discrete(self) -> bool:
        return self.family.discrete

    def _norm_const(self) -> float:
        if not (self.family.renormalize and self.family.id in ("geometric", "poisson")):
            return 0.0
        ys = np.arange(0.0, self.family.label_set.high + 1.0)
        return float(np.log(np.exp(log_density(self.family.id, self.t, ys)).sum()))

    def log_prob(self, y):
        y = np.asarray(y, dtype=float)
        fam = self.family.id
        if fam == "logistic":
            ok = (y == 1.0) | (y == -1.0)
        elif fam == "gaussian":
            ok = np.isfinite(y)
        else:
            ok = (y >= 0) & (y == np.round(y))
            if self.family.renormalize:
                ok &= y <= self.family.label_set.high
        safe = np.where(ok, y, 1.0 if fam == "logistic" else 0.0)
        return np.where(ok, log_density(fam, self.t, safe) - self._norm_const(), -np.inf)

    def prob(self, y):
        return np.exp(self.log_prob(y))

    def support(self) -> np.ndarray:
        """Labels carrying all but < 1e-12 of the mass (discrete families only)."""
        if not self.discrete:
            raise DomainError("gaussian family has continuous support")
        ys = family_labels(self.family.id, self.t, tail=1e-13)
        if self.family.renormalize and self.family.id != "logistic":
            ys = ys[ys <= self.family.label_set.high]
        return ys

    def masses(self) -> tuple[np.ndarray, np.ndarray]:
        ys = self.support()
        return ys, self.prob(ys)

    def sq_norm(self) -> float:
        if not self.discrete:
            return GAUSS_SQ_NORM
        _, p = self.masses()
        return float(np.sum(p**2))

    def mean(self) -> float:
        return float(self.family.mean(self.t))

    def sample(self, rng: np.random.Generator, size=None):
        return _draw(self.family, np.full(() if size is None else size, self.t), rng)


def _draw(family: GlmFamily, t: np.ndarray, rng: np.random.Generator):
    fam = family.id
    if fam == "logistic":
        return np.where(rng.random(t.shape) < expit(t), 1.0, -1.0)
    if fam == "gaussian":
        return t + rng.standard_normal(t.shape)
    if family.renormalize:
        raise DomainError("sampling from renormalized truncations is not supported")
    if fam == "poisson":
        return rng.poisson(np.exp(t)).astype(float)
    # numpy's geometric counts trials, starting at 1
    return rng.geometric(expit(t)) - 1.0


def glm_predict(family: GlmFamily, theta, x) -> GlmPredictive:
    t = float(np.dot(np.asarray(theta, dtype=float), np.asarray(x, dtype=float)))
    return GlmPredictive(family, t)


def glm_sample(family: GlmFamily, theta, x, rng: np.random.Generator):
    """Draw labels at covariates ``x`` (one row per draw, or a single vector)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(x @ np.asarray(theta, dtype=float), dtype=float)
    out = _draw(family, t, rng)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LogPartition:
    """Log-partition ``A`` and its first two derivatives at the natural parameter."""

    A: Callable = field(repr=False)
    A1: Callable = field(repr=False)
    A2: Callable = field(repr=False)
    natural: Callable = field(repr=False)


def log_partition(family: GlmFamily | str) -> LogPartition:
    fam = family.id if isinstance(family, GlmFamily) else _ALIASES.get(family, family)
    ident = lambda t: np.asarray(t, dtype=float)  # noqa: E731
    if fam == "logistic":
        # Bernoulli form on y' = (y + 1) / 2
        return LogPartition(softplus, expit, lambda u: expit(u) * expit(-u), ident)
    if fam == "poisson":
        return LogPartition(np.exp, np.exp, np.exp, ident)
    if fam == "gaussian":
        return LogPartition(lambda u: 0.5 * np.asarray(u, float) ** 2, ident,
                            lambda u: np.ones_like(np.asarray(u, float)), ident)
    if fam == "geometric":
        # natural parameter c < 0, with e^c = 1 - success probability
        def A(c):
            return -np.log(-np.expm1(c))

        def A1(c):
            return 1.0 / np.expm1(-np.asarray(c, float))

        def A2(c):
            e = np.exp(np.asarray(c, float))
            return e / (1.0 - e) ** 2

        return LogPartition(A, A1, A2, lambda t: -softplus(t))
    raise DomainError(f"unknown family {family!r}")


def kl_conditional(family: GlmFamily | str, t: float, u: float) -> float:
    """KL(p_t || p_u) as the Bregman divergence of the log-partition."""
    lp = log_partition(family)
    a, b = lp.natural(t), lp.natural(u)
    return float(lp.A(b) - lp.A(a) - lp.A1(a) * (b - a))


def _fisher_at_zero(family: GlmFamily) -> float:
    return float(family.fisher_information(0.0))


def kl_mixture_expansion_check(family: GlmFamily | str, t: float, u: float) -> dict:
    """Exact KL(p_t || (p_t + p_u)/2) against its quadratic approximation.

    The quadratic term is ``(u - t)^2 I(0) / 8`` where ``I`` is the Fisher
    information in the linear predictor (``A''(0)`` for canonical families).
    """
    if not isinstance(family, GlmFamily):
        family = GlmFamily(family)
    if abs(t) > 1 or abs(u) > 1:
        raise DomainError("expansion check requires |t|, |u| <= 1")
    pt, pu = GlmPredictive(family, t), GlmPredictive(family, u)
    if family.discrete:
        ys = np.union1d(pt.support(), pu.support())
        a, b = pt.prob(ys), pu.prob(ys)
        lhs = float(np.sum(xlogy(a, a) - xlogy(a, 0.5 * (a + b))))
    else:
        # log((p_t + p_u)/(2 p_t)) = log((1 + exp((u-t)(y-t) - (u-t)^2/2)) / 2), y ~ N(t, 1)
        z, w = np.polynomial.hermite_e.hermegauss(120)
        w = w / np.sqrt(2.0 * np.pi)
        h = u - t
        lhs = float(-np.sum(w * (np.logaddexp(0.0, h * z - 0.5 * h * h) - math.log(2.0))))
    quad = (u - t) ** 2 * _fisher_at_zero(family) / 8.0
    return {"lhs": lhs, "quadratic_term": quad, "residual": lhs - quad}
