"""Proper and improper learners for GLM prediction.

Contains the norm-constrained MLE, Vovk's aggregating algorithm over a
finite parameter grid, and AHA: a mixture of subsample MLEs weighted by
their exponentiated total loss on the full sample.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .families import GlmFamily
from .losses import (
    GAUSS_SQ_NORM,
    DomainError,
    PredictiveDistribution,
    ScalarLoss,
    ScoringRule,
    base_log_measure,
    family_labels,
    log_density,
)


class SolverError(RuntimeError):
    """Raised when the projected-gradient solver meets a non-finite objective."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class DegenerateWeightsError(ValueError):
    """Every aggregated component has infinite cumulative loss."""


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if len(X) != len(y):
            raise DomainError("X and y must have the same number of rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def rows(self):
        return list(zip(self.X, self.y))

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx])

    def prefix(self, m: int) -> "LabeledDataset":
        return LabeledDataset(self.X[:m], self.y[:m])

    @classmethod
    def empty(cls, d: int) -> "LabeledDataset":
        return cls(np.zeros((0, d)), np.zeros(0))


# -- scores of GLM predictions and their mixtures --------------------------------

def component_losses(family: GlmFamily, rule, T: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Scoring-rule loss of p_t(. ) at every predictor in ``T`` against broadcast labels ``y``.

    For the log rule this is the full ``-log p_t(y)``, base measure included.
    """
    rule = ScoringRule(rule)
    loss = ScalarLoss(family.id, rule, family.label_set)
    out = loss.value(T, y)
    if rule is ScoringRule.LOG:
        out = out + base_log_measure(family.id, np.broadcast_to(y, out.shape))
    return out


def _mixture_sq_norm(family: GlmFamily, T: np.ndarray, logw: np.ndarray) -> np.ndarray:
    """Squared L2 norm of sum_k w_k p_{T[..., k]} (sum over labels, or integral for gaussian)."""
    w = np.exp(logw)
    if family.id == "gaussian":
        diff = T[..., :, None] - T[..., None, :]
        kern = GAUSS_SQ_NORM * np.exp(-0.25 * diff**2)
        return np.einsum("...j,...jk,...k->...", w, kern, w)
    labels = family_labels(family.id, T)
    mass = np.exp(logw[..., None] + log_density(family.id, T[..., None], labels))
    return np.sum(mass.sum(axis=-2) ** 2, axis=-1)


def mixture_scores(family: GlmFamily, rule, T: np.ndarray, logw: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Loss of the mixture sum_k w_k p_{T[i, k]} at label y[i], one value per row.

    ``T`` has shape (n, K); ``logw`` broadcasts against it.
    """
    rule = ScoringRule(rule)
    logw = np.broadcast_to(logw, T.shape)
    with np.errstate(divide="ignore"):
        log_mix = logsumexp(logw + log_density(family.id, T, y[:, None]), axis=1)
    if rule is ScoringRule.LOG:
        return -log_mix
    p = np.exp(log_mix)
    if rule is ScoringRule.SQUARED:
        return 0.5 * (p - 1.0) ** 2
    if rule is ScoringRule.HELLINGER:
        return (np.sqrt(p) - 1.0) ** 2
    return 0.5 * (1.0 - 2.0 * p + _mixture_sq_norm(family, T, logw))


# -- constrained MLE -------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 10_000
    initial_step: float = 1.0
    shrink: float = 0.5


def _project(theta: np.ndarray, B: float) -> np.ndarray:
    norm = np.linalg.norm(theta)
    return theta if norm <= B else theta * (B / norm)


def fit_mle(family: GlmFamily, loss: ScalarLoss, data: LabeledDataset, B: float,
            solver_cfg: SolverConfig | None = None, theta_init=None) -> np.ndarray:
    """Minimize the average of phi(theta^T x_i, y_i) over the ball ||theta|| <= B.

    Projected gradient descent with backtracking on the sufficient-decrease
    condition; stops once the gradient mapping norm is at most ``tol``.
    """
    cfg = solver_cfg or SolverConfig()
    if B < 0:
        raise DomainError("B must be nonnegative")
    if data.n == 0:
        raise DomainError("cannot fit on an empty dataset")
    d = data.d
    if B == 0:
        return np.zeros(d)
    X, y, n = data.X, data.y, data.n

    def objective(theta):
        return float(np.mean(loss.value(X @ theta, y)))

    def gradient(theta):
        return X.T @ loss.d1(X @ theta, y) / n

    theta = np.zeros(d) if theta_init is None else _project(np.asarray(theta_init, float), B)
    f = objective(theta)
    step = cfg.initial_step
    for _ in range(cfg.max_iter):
        g = gradient(theta)
        while True:
            cand = _project(theta - step * g, B)
            diff = cand - theta
            f_cand = objective(cand)
            if not math.isfinite(f_cand):
                if step < 1e-20:
                    raise SolverError("non-finite objective during line search", cand)
                step *= cfg.shrink
                continue
            if f_cand <= f + g @ diff + (diff @ diff) / (2.0 * step) or step < 1e-20:
                break
            step *= cfg.shrink
        if not math.isfinite(f_cand):
            raise SolverError("non-finite objective", cand)
        mapping = np.linalg.norm(diff) / step
        if f_cand <= f:
            theta, f = cand, f_cand
        if mapping <= cfg.tol:
            break
        step /= cfg.shrink
    return theta


# -- mixtures --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixturePredictor:
    """Finite mixture of GLM conditionals, ``sum_k weights[k] p_{thetas[k]}``."""

    thetas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if len(thetas) != len(w):
            raise DomainError("one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "weights", w)

    @property
    def components(self):
        return list(zip(self.thetas, self.weights))

    @classmethod
    def point(cls, theta) -> "MixturePredictor":
        return cls(np.atleast_2d(theta), np.ones(1))

    def predict(self, family: GlmFamily, x) -> "GlmMixture":
        return GlmMixture(family, self.thetas @ np.asarray(x, dtype=float), self.weights)

    def to_dict(self) -> dict:
        return {"thetas": self.thetas.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "MixturePredictor":
        return cls(np.asarray(doc["thetas"], float), np.asarray(doc["weights"], float))


@dataclass(frozen=True, eq=False)
class GlmMixture(PredictiveDistribution):
    """Predictive mixture of family conditionals at linear predictors ``ts``."""

    family: GlmFamily
    ts: np.ndarray
    weights: np.ndarray

    @property
    def discrete(self) -> bool:
        return self.family.discrete

    def _logw(self):
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def log_prob(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            lp = log_density(self.family.id, self.ts, y[..., None])
        if self.family.id == "logistic":
            lp = np.where((y[..., None] == 1) | (y[..., None] == -1), lp, -np.inf)
        elif self.discrete:
            lp = np.where((y[..., None] >= 0) & (y[..., None] == np.round(y[..., None])), lp, -np.inf)
        return logsumexp(self._logw() + lp, axis=-1)

    def prob(self, y):
        return np.exp(self.log_prob(y))

    def sq_norm(self) -> float:
        return float(_mixture_sq_norm(self.family, self.ts[None, :], self._logw()[None, :])[0])


# -- Vovk aggregating algorithm --------------------------------------------------

def theta_grid(d: int, B: float, size: int | None = None, seed: int = 0) -> np.ndarray:
    """Grid covering the ball of radius B.

    For d = 2 a sunflower spiral with equal-area cells; otherwise seeded
    uniform directions crossed with radius levels equally spaced in volume.
    """
    if size is None:
        size = 512 if d == 2 else 4096
    if d == 1:
        return np.linspace(-B, B, size)[:, None]
    k = np.arange(size)
    if d == 2:
        r = B * np.sqrt((k + 0.5) / size)
        ang = k * math.pi * (3.0 - math.sqrt(5.0))
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    levels = max(1, int(round(size ** (1.0 / 3.0))))
    n_dir = int(math.ceil(size / levels))
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_dir, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = B * ((np.arange(levels) + 0.5) / levels) ** (1.0 / d)
    return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)[:size]


def _softmax_logweights(cum: np.ndarray, eta: float, log_prior=None) -> np.ndarray:
    logits = -eta * cum
    if log_prior is not None:
        logits = logits + log_prior
    finite = np.isfinite(logits)
    if not finite.any(axis=-1).all():
        raise DegenerateWeightsError("all components have infinite cumulative loss")
    top = np.max(np.where(finite, logits, -np.inf), axis=-1, keepdims=True)
    return logits - top - logsumexp(logits - top, axis=-1, keepdims=True)


def vovk_weights(family: GlmFamily, scoring_rule, eta: float, history: LabeledDataset,
                 theta_grid, log_prior=None) -> np.ndarray:
    """Exponential weights exp(-eta * cumulative loss) over the grid, normalized."""
    if eta <= 0:
        raise DomainError("eta must be positive")
    grid = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    if len(grid) == 0:
        raise DomainError("empty grid")
    if history.n == 0:
        cum = np.zeros(len(grid))
    else:
        cum = component_losses(family, scoring_rule, grid @ history.X.T, history.y[None, :]).sum(axis=1)
    return np.exp(_softmax_logweights(cum, eta, log_prior))


def vovk_predict(family: GlmFamily, weights, theta_grid, x) -> GlmMixture:
    grid = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    return GlmMixture(family, grid @ np.asarray(x, dtype=float), np.asarray(weights, dtype=float))


def lipschitz_constant(family: GlmFamily, scoring_rule, T: float, n_grid: int = 10_000):
    """sup |d/dt phi(t, y)| over |t| <= T and the family's label set.

    Returns ``(value, analytic)``; non-log rules fall back to a grid maximum.
    """
    rule = ScoringRule(scoring_rule)
    ls = family.label_set
    if rule is ScoringRule.LOG:
        if family.id == "logistic":
            return float(expit(T)), True
        if family.id == "poisson":
            return float(max(math.exp(T), ls.high - math.exp(-T))), True
        if family.id == "gaussian":
            return float(T + ls.diameter), True
        if family.id == "geometric":
            return float(max((ls.high + 1.0) * expit(T) - 1.0, 1.0 - expit(-T))), True
    loss = ScalarLoss(family.id, rule, ls)
    ts = np.linspace(-T, T, n_grid)
    ys = ls.candidates(101)
    return float(np.max(np.abs(loss.d1(ts[:, None], ys[None, :])))), False


def regret_bound(d: int, eta: float, lip: float, n: int) -> float:
    """Regret guarantee 5 (d / eta) log(lip n / d + e) of the aggregating algorithm."""
    return 5.0 * (d / eta) * math.log(lip * n / d + math.e)


@dataclass(frozen=True)
class RegretReport:
    cumulative_loss: float
    best_comparator_loss: float
    regret: float
    regret_bound: float
    best_index: int = -1
    lipschitz: float = 0.0
    lipschitz_analytic: bool = True
    per_round: np.ndarray = field(default=None, repr=False)


def vovk_online_run(family: GlmFamily, scoring_rule, eta: float, sequence: LabeledDataset,
                    theta_grid, R: float = 1.0, B: float | None = None) -> RegretReport:
    """Replay the aggregating algorithm over ``sequence`` and account regret against the grid."""
    grid = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    if B is None:
        B = float(np.max(np.linalg.norm(grid, axis=1)))
    d = grid.shape[1]
    lip, analytic = lipschitz_constant(family, scoring_rule, R * B)
    n = sequence.n
    bound = regret_bound(d, eta, lip, n)
    if n == 0:
        return RegretReport(0.0, 0.0, 0.0, bound, -1, lip, analytic, np.zeros(0))
    T = sequence.X @ grid.T
    losses = component_losses(family, scoring_rule, T, sequence.y[:, None])
    cum_before = np.vstack([np.zeros(len(grid)), np.cumsum(losses, axis=0)[:-1]])
    logw = _softmax_logweights(cum_before, eta)
    rounds = mixture_scores(family, scoring_rule, T, logw, sequence.y)
    totals = losses.sum(axis=0)
    best = int(np.argmin(totals))
    total = float(rounds.sum())
    return RegretReport(total, float(totals[best]), total - float(totals[best]), bound, best,
                        lip, analytic, rounds)


def adversarial_labels(family: GlmFamily, scoring_rule, eta: float, X: np.ndarray,
                       theta_grid) -> np.ndarray:
    """Labels chosen online as the outcome the current Vovk mixture finds least likely.

    Only defined for the logistic family, where the choice is between two labels.
    """
    if family.id != "logistic":
        raise DomainError("adversarial labels are implemented for the logistic family")
    grid = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    cum = np.zeros(len(grid))
    labels = np.empty(len(X))
    for i, x in enumerate(X):
        logw = _softmax_logweights(cum, eta)
        t = grid @ x
        p_plus = float(np.exp(logsumexp(logw + log_density("logistic", t, 1.0))))
        y = -1.0 if p_plus >= 0.5 else 1.0
        labels[i] = y
        cum += component_losses(family, scoring_rule, t, np.array(y))
    return labels


# -- AHA -------------------------------------------------------------------------

def aha_fit(family: GlmFamily, scoring_rule, data: LabeledDataset, B: float, K: int,
            rng: np.random.Generator, solver_cfg: SolverConfig | None = None,
            threads: int = 1) -> MixturePredictor:
    """Mix K subsample fits, weighting each by exp(-total loss on the full sample).

    Each subset of size floor(2n/3) is drawn from its own child generator,
    so the result does not depend on ``threads``.
    """
    if K < 1:
        raise DomainError("K must be at least 1")
    if data.n < 3:
        raise DomainError("AHA needs at least 3 observations")
    loss = ScalarLoss(family.id, scoring_rule, family.label_set)
    m = (2 * data.n) // 3
    children = rng.spawn(K)
    subsets = [child.choice(data.n, size=m, replace=False) for child in children]

    def fit(k):
        try:
            return fit_mle(family, loss, data.subset(subsets[k]), B, solver_cfg)
        except SolverError as err:
            raise SolverError(f"subsample {k}: {err}", err.iterate) from err

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            thetas = np.array(list(pool.map(fit, range(K))))
    else:
        thetas = np.array([fit(k) for k in range(K)])
    total = component_losses(family, scoring_rule, thetas @ data.X.T, data.y[None, :]).sum(axis=1)
    logw = _softmax_logweights(total, 1.0)
    w = np.exp(logw)
    return MixturePredictor(thetas, w / w.sum())


def risk_estimate(predictor: MixturePredictor, family: GlmFamily, scoring_rule,
                  test: LabeledDataset) -> float:
    """Average scoring-rule loss of the mixture's predictions on ``test``."""
    if test.n == 0:
        raise DomainError("empty test set")
    T = test.X @ predictor.thetas.T
    with np.errstate(divide="ignore"):
        logw = np.log(predictor.weights)
    return float(np.mean(mixture_scores(family, scoring_rule, T, logw[None, :], test.y)))
