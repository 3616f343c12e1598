"""Gaussian approximation of the aggregation weight measure.

Compares the discretized exponential-weights measure over a parameter
grid with the normal law centred at the constrained MLE whose precision
is ``n`` times the empirical Hessian, both in parameter space and through
the induced predictive distributions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from .families import GlmFamily, GlmPredictive
from .learners import (
    GlmMixture,
    LabeledDataset,
    fit_mle,
    theta_grid as make_theta_grid,
    vovk_weights,
)
from .losses import DomainError, PredictiveDistribution, ScalarLoss


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    mean: np.ndarray
    precision: np.ndarray
    normalizer: float = 0.0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        prec = np.atleast_2d(np.asarray(self.precision, dtype=float))
        if prec.shape != (len(mean), len(mean)):
            raise DomainError("precision must be a d x d matrix")
        if not np.allclose(prec, prec.T, rtol=0, atol=1e-12 * max(1.0, np.abs(prec).max())):
            raise DomainError("precision must be symmetric")
        eig = np.linalg.eigvalsh(prec)
        if eig.min() <= 0:
            raise DomainError("precision must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", 0.5 * (prec + prec.T))
        # log normalizing constant of the density
        object.__setattr__(self, "normalizer",
                           0.5 * float(np.sum(np.log(eig))) - 0.5 * len(mean) * math.log(2 * math.pi))

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)

    def density(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        diff = pts - self.mean
        quad = np.einsum("ij,jk,ik->i", diff, self.precision, diff)
        return np.exp(self.normalizer - 0.5 * quad)


def empirical_hessian(family: GlmFamily, scoring_rule, data: LabeledDataset, theta) -> np.ndarray:
    """(1/n) sum_i phi''(theta^T x_i, y_i) x_i x_i^T."""
    loss = ScalarLoss(family.id, scoring_rule, family.label_set)
    curv = loss.d2(data.X @ np.asarray(theta, dtype=float), data.y)
    H = (data.X * curv[:, None]).T @ data.X / data.n
    return 0.5 * (H + H.T)


def gaussian_approximation(family: GlmFamily, scoring_rule, data: LabeledDataset, theta_hat) -> GaussianApprox:
    return GaussianApprox(theta_hat, data.n * empirical_hessian(family, scoring_rule, data, theta_hat))


def _cell_masses(approx: GaussianApprox, grid: np.ndarray, cell_volumes: np.ndarray) -> np.ndarray:
    if grid.shape[1] == 1:
        # exact integrals over the 1-D cells centred at the grid points
        sd = 1.0 / math.sqrt(float(approx.precision[0, 0]))
        c = grid[:, 0]
        lo = (c - 0.5 * cell_volumes - approx.mean[0]) / sd
        hi = (c + 0.5 * cell_volumes - approx.mean[0]) / sd
        return norm.cdf(hi) - norm.cdf(lo)
    return approx.density(grid) * cell_volumes


def tv_distance_grid(weights, approx: GaussianApprox, theta_grid, cell_volumes, radius: float | None = None) -> float:
    """Half the L1 distance between cell weights and the Gaussian's cell masses, plus its off-ball mass.

    In one dimension cell masses are exact normal integrals and the off-ball
    mass is exact for the interval ``[-radius, radius]``; in two dimensions
    they use midpoint rule and the residual ``1 - sum(cell masses)``.
    """
    grid = np.asarray(theta_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    d = grid.shape[1]
    if d > 2:
        raise DomainError("grid TV is supported for d <= 2 only")
    w = np.asarray(weights, dtype=float)
    vol = np.broadcast_to(np.asarray(cell_volumes, dtype=float), w.shape)
    g = _cell_masses(approx, grid, vol)
    if d == 1 and radius is not None:
        sd = 1.0 / math.sqrt(float(approx.precision[0, 0]))
        off = norm.cdf((-radius - approx.mean[0]) / sd) + norm.sf((radius - approx.mean[0]) / sd)
    else:
        off = max(0.0, 1.0 - float(g.sum()))
    return 0.5 * float(np.abs(w - g).sum()) + float(off)


def predictive_tv(p: PredictiveDistribution, q: PredictiveDistribution) -> float:
    """Total variation between two predictive distributions over the same label space."""
    if p.discrete != q.discrete:
        raise DomainError("cannot compare discrete and continuous predictions")
    if p.discrete:
        labels = np.union1d(_support(p), _support(q))
        return 0.5 * float(np.abs(p.prob(labels) - q.prob(labels)).sum())
    if isinstance(p, GlmPredictive) and isinstance(q, GlmPredictive):
        return float(2.0 * norm.cdf(abs(p.t - q.t) / 2.0) - 1.0)
    centers = np.concatenate([_centers(p), _centers(q)])
    ys = np.linspace(centers.min() - 12.0, centers.max() + 12.0, 40001)
    return 0.5 * float(trapezoid(np.abs(p.prob(ys) - q.prob(ys)), ys))


def _support(p):
    if isinstance(p, GlmPredictive):
        return p.support()
    if isinstance(p, GlmMixture):
        fam = p.family
        ys = [GlmPredictive(fam, float(t)).support() for t in (p.ts.min(), p.ts.max())]
        return np.union1d(*ys)
    return np.asarray(p.labels, dtype=float)


def _centers(p):
    if isinstance(p, GlmPredictive):
        return np.array([p.t])
    return np.asarray(p.ts, dtype=float)


def grid_cells(d: int, B: float, size: int):
    """Parameter grid tiling the ball together with per-cell volumes."""
    if d == 1:
        width = 2.0 * B / size
        pts = -B + width * (np.arange(size) + 0.5)
        return pts[:, None], np.full(size, width)
    if d == 2:
        return make_theta_grid(2, B, size), np.full(size, math.pi * B * B / size)
    raise DomainError("grid cells are only available for d <= 2")


@dataclass(frozen=True)
class BvmRow:
    seed: int
    n: int
    tv_param: float
    tv_predictive: tuple


def bvm_replicate(seed: int, n: int, theta_star=(1.0,), B: float = 3.0, grid_size: int = 4001,
                  x_query=(-1.0, 0.5, 2.0)) -> BvmRow:
    """One well-specified logistic replication at sample size ``n``.

    Covariates are standard normal; each (seed, n) pair owns its stream.
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    d = len(theta_star)
    family = GlmFamily("logistic", d)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n,)))
    X = rng.standard_normal((n, d))
    y = np.where(rng.random(n) < 1.0 / (1.0 + np.exp(-X @ theta_star)), 1.0, -1.0)
    data = LabeledDataset(X, y)
    theta_hat = fit_mle(family, family.loss(), data, B)
    approx = gaussian_approximation(family, "log", data, theta_hat)
    grid, vol = grid_cells(d, B, grid_size)
    w = vovk_weights(family, "log", 1.0, data, grid, log_prior=np.log(vol))
    tv = tv_distance_grid(w, approx, grid, vol, radius=B if d == 1 else None)
    pred = []
    for xq in x_query:
        x = np.full(d, float(xq))
        mix = GlmMixture(family, grid @ x, w)
        pred.append(predictive_tv(mix, GlmPredictive(family, float(theta_hat @ x))))
    return BvmRow(seed, n, tv, tuple(pred))


def run_bvm(seeds, n_list, **kwargs) -> list[BvmRow]:
    return [bvm_replicate(int(s), int(n), **kwargs) for s in seeds for n in n_list]
