"""Minimax lower bounds for misspecified GLM prediction.

This module evaluates the worst-case signal ``q_worst``, the linearity
constant and the resulting lower bound, and builds the explicit pair of
three-point distributions behind that bound so that their separation and
KL divergence can be checked by brute force.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import xlogy

from .families import GlmFamily, GlmPredictive
from .losses import DomainError, LabelSet, ScalarLoss

EPS_MAX = 0.6


class ConstructionError(ValueError):
    """No feasible (alpha, y0) exists at the requested (t, y)."""


class DegenerateInstanceError(ConstructionError):
    """The perturbation size delta collapses to zero."""


@dataclass(frozen=True)
class Radii:
    """Data radius R, parameter radius B, contamination gamma and sample size n."""

    R: float
    B: float
    gamma: float = 1.0
    n: int = 100

    def __post_init__(self):
        if not (self.R > 0 and self.B > 0):
            raise DomainError("radii must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError("gamma must lie in [0, 1]")
        if self.n < 1:
            raise DomainError("sample size must be at least 1")

    @property
    def RB(self) -> float:
        return self.R * self.B

    @property
    def t_max(self) -> float:
        # 2 t^2 <= R^2 B^2
        return self.RB / math.sqrt(2.0)


# -- q_worst ---------------------------------------------------------------------

def _y0_candidates(loss: ScalarLoss, y0_candidates) -> np.ndarray:
    if y0_candidates is None:
        return loss.label_set.candidates(101)
    return np.asarray(y0_candidates, dtype=float).ravel()


def _signal_table(loss: ScalarLoss, t: float, alphas: np.ndarray, y0s: np.ndarray) -> np.ndarray:
    """alpha * phi'(alpha t, y0) on the (alpha, y0) grid."""
    return alphas[:, None] * loss.d1(alphas[:, None] * t, y0s[None, :])


def _q_from(a, b):
    with np.errstate(invalid="ignore", divide="ignore"):
        q = a / (a - b)
    return np.where(np.sign(a) * np.sign(b) < 0, q, 0.0)


@dataclass(frozen=True)
class QWorst:
    q: float
    alpha: float | None = None
    y0: float | None = None

    @property
    def argmax(self):
        return None if self.alpha is None else (self.alpha, self.y0)


def q_worst(loss: ScalarLoss, t: float, y: float, alpha_grid: int = 2001,
            y0_candidates=None, refine: bool = True) -> QWorst:
    """Largest ``a / (a - b)`` with ``a = alpha phi'(alpha t, y0)`` of sign opposite ``b = phi'(t, y)``.

    ``alpha`` ranges over ``[-1, 1]`` and ``y0`` over the candidate labels.
    Returns ``q = 0`` with no argmax when ``b = 0`` or no sign flip exists.
    """
    b = float(loss.d1(t, y))
    if b == 0.0 or not math.isfinite(b):
        return QWorst(0.0)
    alphas = np.linspace(-1.0, 1.0, alpha_grid)
    y0s = _y0_candidates(loss, y0_candidates)
    q = _q_from(_signal_table(loss, t, alphas, y0s), b)
    i, j = np.unravel_index(np.argmax(q), q.shape)
    if q[i, j] <= 0.0:
        return QWorst(0.0)
    alpha, y0 = float(alphas[i]), float(y0s[j])
    if refine:
        lo, hi = alphas[max(i - 1, 0)], alphas[min(i + 1, len(alphas) - 1)]
        res = minimize_scalar(lambda a: -float(_q_from(a * loss.d1(a * t, y0), b)),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if -res.fun > q[i, j]:
            alpha = float(res.x)
    a = alpha * float(loss.d1(alpha * t, y0))
    return QWorst(float(a / (a - b)), alpha, y0)


def _signal_envelopes(loss: ScalarLoss, ts: np.ndarray, alpha_grid: int, y0s: np.ndarray):
    """Per-t maxima of the positive and negative parts of alpha * phi'(alpha t, y0).

    ``q`` is increasing in ``|a|`` for a fixed opposite-sign ``b``, so these
    two envelopes determine q_worst at every label y.
    """
    alphas = np.linspace(-1.0, 1.0, alpha_grid)
    pos = np.empty(len(ts))
    neg = np.empty(len(ts))
    for k, t in enumerate(ts):
        a = _signal_table(loss, float(t), alphas, y0s)
        pos[k] = max(float(a.max()), 0.0)
        neg[k] = max(float(-a.min()), 0.0)
    return pos, neg


def _q_envelope(b, pos, neg):
    amp = np.where(b < 0, pos, np.where(b > 0, neg, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        q = amp / (amp + np.abs(b))
    return np.where(amp > 0, q, 0.0)


# -- linearity constant ----------------------------------------------------------

def _curvature_sup(loss: ScalarLoss, t: float, delta: float, y, n_grid: int = 101):
    """sup over |D| <= delta of phi''(t + D, y) on an ``n_grid`` point grid."""
    offs = np.linspace(-delta, delta, n_grid)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return loss.d2(t + offs[:, None], y[None, :]).max(axis=0)


def _lambda_terms(b, q, S, delta, gamma, n):
    first = delta * np.sqrt(gamma * q)
    with np.errstate(divide="ignore", invalid="ignore"):
        second = np.where(S > 0, np.abs(b) * q / (S * math.sqrt(2.0 * n)), np.inf)
    return np.abs(b) * np.minimum(first, second)


@dataclass(frozen=True)
class LinearityResult:
    lam: float
    t: float | None = None
    delta: float | None = None
    y: float | None = None
    q: float = 0.0

    @property
    def argmax(self):
        return None if self.t is None else (self.t, self.delta, self.y)


def linearity_constant(loss: ScalarLoss, radii: Radii, t_delta_grid: int = 201,
                       delta_sup_grid: int = 101, alpha_grid: int = 2001,
                       y_candidates=None, refine: bool = True) -> LinearityResult:
    """Maximize the linearity-constant integrand over the disk 2(t^2 + delta^2) <= R^2 B^2.

    The disk is covered by ``t_delta_grid`` chords in ``t`` with
    ``t_delta_grid`` points each in ``delta``.  The inner supremum of the
    curvature is a running maximum over the samples ``t +- delta_j``
    (refined so the spacing is no coarser than ``delta_sup_grid`` points
    on ``[-delta, delta]``).  One local pass over ``delta`` then ``t``
    polishes the best grid point.
    """
    if radii.gamma == 0.0:
        return LinearityResult(0.0)
    ys = _y0_candidates(loss, y_candidates)
    nt = t_delta_grid
    ts = np.linspace(-radii.t_max, radii.t_max, nt)
    pos, neg = _signal_envelopes(loss, ts, alpha_grid, ys)
    refine_factor = max(1, math.ceil((delta_sup_grid - 1) / (2 * (nt - 1))))
    m = (nt - 1) * refine_factor
    best = (0.0, None, None, None, 0.0)
    for k, t in enumerate(ts):
        dmax = math.sqrt(max(radii.t_max**2 - t * t, 0.0))
        b = loss.d1(t, ys)
        q = _q_envelope(b, pos[k], neg[k])
        if not np.any(q > 0):
            continue
        steps = np.arange(m + 1) * (dmax / m)
        curv = np.maximum(loss.d2(t + steps[:, None], ys), loss.d2(t - steps[:, None], ys))
        S = np.maximum.accumulate(curv, axis=0)[::refine_factor]
        deltas = steps[::refine_factor]
        vals = _lambda_terms(b[None, :], q[None, :], S, deltas[:, None], radii.gamma, radii.n)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        if vals[i, j] > best[0]:
            best = (float(vals[i, j]), float(t), float(deltas[i]), float(ys[j]), float(q[j]))
    if best[1] is None:
        return LinearityResult(0.0)
    if refine:
        best = _polish(loss, radii, best, ts, delta_sup_grid, alpha_grid, ys)
    return LinearityResult(*best)


def _point_value(loss, radii, t, delta, y, delta_sup_grid, alpha_grid, ys):
    if 2.0 * (t * t + delta * delta) > radii.RB**2 * (1 + 1e-12) or delta < 0:
        return 0.0, 0.0
    pos, neg = _signal_envelopes(loss, np.array([t]), alpha_grid, ys)
    b = float(loss.d1(t, y))
    q = float(_q_envelope(np.array(b), pos[0], neg[0]))
    S = float(_curvature_sup(loss, t, delta, y, delta_sup_grid)[0])
    return float(_lambda_terms(b, q, S, delta, radii.gamma, radii.n)), q


def _polish(loss, radii, best, ts, delta_sup_grid, alpha_grid, ys):
    val, t, delta, y, q = best
    step = ts[1] - ts[0] if len(ts) > 1 else radii.t_max

    def dmax(tt):
        return math.sqrt(max(radii.t_max**2 - tt * tt, 0.0))

    res = minimize_scalar(
        lambda d: -_point_value(loss, radii, t, d, y, delta_sup_grid, alpha_grid, ys)[0],
        bounds=(0.0, dmax(t)), method="bounded", options={"xatol": 1e-10})
    cand, cq = _point_value(loss, radii, t, float(res.x), y, delta_sup_grid, alpha_grid, ys)
    if cand > val:
        val, delta, q = cand, float(res.x), cq
    lo = max(-radii.t_max, t - step)
    hi = min(radii.t_max, t + step)
    res = minimize_scalar(
        lambda tt: -_point_value(loss, radii, tt, min(delta, dmax(tt)), y, delta_sup_grid, alpha_grid, ys)[0],
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    tt = float(res.x)
    cand, cq = _point_value(loss, radii, tt, min(delta, dmax(tt)), y, delta_sup_grid, alpha_grid, ys)
    if cand > val:
        val, t, delta, q = cand, tt, min(delta, dmax(tt)), cq
    return val, t, delta, y, q


def linearity_lower_bound(lam: float, n: int) -> float:
    """Minimax excess-risk lower bound lambda / (4 sqrt(n)) implied by the linearity constant."""
    if lam < 0 or n < 1:
        raise DomainError("need lambda >= 0 and n >= 1")
    return lam / (4.0 * math.sqrt(n))


def closed_form_bound(example: str, radii: Radii, diam_y: float) -> float:
    """Shape of the per-family minimax lower bound with unspecified constants set to 1."""
    rb, g, n = radii.RB, radii.gamma, radii.n
    if example == "logistic":
        if rb <= 1.0:
            return min(rb * math.sqrt(g) / math.sqrt(n), 1.0 / n)
        return min(math.sqrt(g * rb) / math.sqrt(n), math.exp(2.0 * rb / 5.0) / n)
    if example in ("geometric", "poisson"):
        if rb < 1.0:
            raise DomainError(f"{example} bound needs R*B >= 1 (got {rb})")
        if diam_y < 3.0:
            raise DomainError(f"{example} bound needs label diameter >= 3 (got {diam_y})")
        if example == "geometric":
            return diam_y * min(math.sqrt(g * rb) / math.sqrt(n), math.exp(rb) / n)
        return min(diam_y * math.sqrt(g * rb) / math.sqrt(n), math.exp(rb) * diam_y**2 / n)
    if example == "gaussian":
        return min(max(rb * rb, rb * diam_y) * math.sqrt(g) / math.sqrt(n), max(rb * rb, diam_y**2) / n)
    raise DomainError(f"unknown example {example!r}")


# -- rate probe ------------------------------------------------------------------

@dataclass(frozen=True)
class RateProbe:
    applicable: bool
    values: list = field(default_factory=list)
    slope: float | None = None
    t: float | None = None
    y: float | None = None
    q: float = 0.0


def _inflection_points(loss: ScalarLoss, radii: Radii, ys: np.ndarray, n_grid: int = 2001):
    ts = np.linspace(-radii.t_max, radii.t_max, n_grid)
    for y in ys:
        curv = loss.d2(ts, y)
        flips = np.nonzero(np.sign(curv[:-1]) * np.sign(curv[1:]) < 0)[0]
        for i in flips:
            t = brentq(lambda s: float(loss.d2(s, y)), ts[i], ts[i + 1], xtol=1e-14)
            yield float(t), float(y)


def rate_probe(loss: ScalarLoss, radii: Radii, n_list, y_candidates=None,
               delta_sup_grid: int = 101) -> RateProbe:
    """Evaluate the integrand at delta = n^(-1/4) at a curvature-zero point.

    A point with ``phi''(t, y) = 0``, ``phi'(t, y) != 0`` and ``q_worst > 0``
    is located by scanning sign changes of ``phi''``; the probe reports
    ``not applicable`` when none exists on the grid.
    """
    ys = _y0_candidates(loss, y_candidates)
    for t, y in _inflection_points(loss, radii, ys):
        b = float(loss.d1(t, y))
        if abs(b) < 1e-12:
            continue
        q = q_worst(loss, t, y, y0_candidates=ys).q
        if q <= 0:
            continue
        values = []
        for n in n_list:
            delta = float(n) ** -0.25
            S = float(_curvature_sup(loss, t, delta, y, delta_sup_grid)[0])
            values.append((int(n), float(_lambda_terms(b, q, S, delta, radii.gamma, n))))
        ns, lams = np.log([v[0] for v in values]), np.log([v[1] for v in values])
        slope = float(np.polyfit(ns, lams, 1)[0]) if len(values) > 1 else None
        return RateProbe(True, values, slope, t, y, q)
    return RateProbe(False)


# -- three-point constructions ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class ThreePointDistribution:
    """Finitely supported joint law of (X, Y)."""

    points: np.ndarray
    labels: np.ndarray
    masses: np.ndarray

    def risk(self, loss: ScalarLoss, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        t = thetas @ self.points.T
        return loss.value(t, self.labels[None, :]) @ self.masses

    def risk_gradient(self, loss: ScalarLoss, theta) -> np.ndarray:
        t = self.points @ np.asarray(theta, dtype=float)
        return (self.masses * loss.d1(t, self.labels)) @ self.points

    def atoms(self) -> dict:
        out: dict = {}
        for x, y, m in zip(self.points, self.labels, self.masses):
            key = (tuple(np.round(x, 15).tolist()), float(y))
            out[key] = out.get(key, 0.0) + float(m)
        return out


@dataclass(frozen=True, eq=False)
class PerturbedDistribution:
    """Mixture ``(1 - gamma) P0 + gamma P`` with P0 = (X = 0, Y ~ family at predictor 0)."""

    base: ThreePointDistribution
    gamma: float
    family: GlmFamily

    def _null_risk(self, loss: ScalarLoss) -> float:
        null = GlmPredictive(self.family, 0.0)
        if null.discrete:
            ys, p = null.masses()
            return float(np.sum(p * loss.value(0.0, ys)))
        z, w = np.polynomial.hermite_e.hermegauss(80)
        return float(np.sum(w * loss.value(0.0, z)) / math.sqrt(2.0 * math.pi))

    def risk(self, loss: ScalarLoss, thetas) -> np.ndarray:
        base = self.base.risk(loss, thetas)
        if self.gamma == 1.0:
            return base
        return (1.0 - self.gamma) * self._null_risk(loss) + self.gamma * base

    def atoms(self) -> dict:
        """Point masses keyed by (x, y); the continuous null part is keyed ("null", None)."""
        out = {k: self.gamma * m for k, m in self.base.atoms().items()}
        if self.gamma == 1.0:
            return out
        origin = tuple([0.0] * self.base.points.shape[1])
        null = GlmPredictive(self.family, 0.0)
        if not null.discrete:
            out[("null", None)] = 1.0 - self.gamma
            return out
        ys, p = null.masses()
        for y, m in zip(ys, p):
            key = (origin, float(y))
            out[key] = out.get(key, 0.0) + (1.0 - self.gamma) * float(m)
        return out


def atom_kl(p_atoms: dict, q_atoms: dict) -> float:
    """KL between two laws given as atom dictionaries."""
    total = 0.0
    for key, a in p_atoms.items():
        b = q_atoms.get(key, 0.0)
        if a > 0 and b == 0:
            return math.inf
        total += float(xlogy(a, a) - xlogy(a, b))
    return total


@dataclass(frozen=True, eq=False)
class HardInstance:
    loss: ScalarLoss
    radii: Radii
    v: np.ndarray
    w: np.ndarray
    t: float
    delta: float
    epsilon: float
    q: float
    alpha: float
    y: float
    y0: float
    P_plus: ThreePointDistribution
    P_minus: ThreePointDistribution
    Q_plus: PerturbedDistribution
    Q_minus: PerturbedDistribution

    @property
    def gamma(self) -> float:
        return self.Q_plus.gamma

    @property
    def d(self) -> int:
        return len(self.v)

    @property
    def theta0(self) -> np.ndarray:
        return (2.0 / self.radii.R**2) * self.t * self.v

    def theta_delta(self, sign: float = 1.0) -> np.ndarray:
        return self.theta0 + sign * (2.0 * self.delta / self.radii.R**2) * self.w

    @property
    def slope(self) -> float:
        return float(self.loss.d1(self.t, self.y))

    @property
    def sep_lower(self) -> float:
        """Separation guaranteed for the unperturbed pair P_plus, P_minus."""
        return 0.5 * self.q * self.epsilon * abs(self.slope) * self.delta

    @property
    def kl_exact(self) -> float:
        e = self.epsilon
        return self.q * e * math.log((1.0 + e) / (1.0 - e))

    @property
    def kl_bound(self) -> float:
        return self.q * self.epsilon**2

    def base_distribution(self) -> ThreePointDistribution:
        """The epsilon = 0 midpoint of P_plus and P_minus."""
        m = 0.5 * (self.P_plus.masses + self.P_minus.masses)
        return ThreePointDistribution(self.P_plus.points, self.P_plus.labels, m)


def _three_point(v, w, alpha, y0, y, q, eps, sign):
    points = np.stack([alpha * v, v + w, v - w])
    labels = np.array([y0, y, y], dtype=float)
    masses = np.array([1.0 - q, q * (1.0 + sign * eps) / 2.0, q * (1.0 - sign * eps) / 2.0])
    return ThreePointDistribution(points, labels, masses)


def _delta_ok(loss, t, y, delta, budget, n_sup):
    return delta * float(_curvature_sup(loss, t, delta, y, n_sup)[0]) <= budget


def select_delta(loss: ScalarLoss, radii: Radii, t: float, y: float, q: float, epsilon: float,
                 iterations: int = 60, n_sup: int = 101) -> float:
    """Largest delta with delta * sup phi'' <= eps q |phi'| inside the disk, by bisection."""
    hi = math.sqrt(max(radii.t_max**2 - t * t, 0.0))
    budget = epsilon * q * abs(float(loss.d1(t, y)))
    if _delta_ok(loss, t, y, hi, budget, n_sup):
        return hi
    lo = 0.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if _delta_ok(loss, t, y, mid, budget, n_sup):
            lo = mid
        else:
            hi = mid
    return lo


def build_hard_instance(loss: ScalarLoss, radii: Radii, t: float, y: float, epsilon: float,
                        d: int = 2, alpha_grid: int = 2001, y0_candidates=None) -> HardInstance:
    if not 0.0 < epsilon <= EPS_MAX:
        raise DomainError(f"epsilon must lie in (0, 3/5], got {epsilon}")
    if d < 2:
        raise DomainError("the construction needs d >= 2")
    if not loss.label_set.contains(y):
        raise DomainError(f"label {y} outside label set")
    if 2.0 * t * t > radii.RB**2:
        raise ConstructionError(f"t = {t} violates 2 t^2 <= (R B)^2")
    qw = q_worst(loss, t, y, alpha_grid, y0_candidates)
    if qw.q <= 0.0:
        raise ConstructionError(f"no sign-flipping (alpha, y0) at t = {t}, y = {y}")
    delta = select_delta(loss, radii, t, y, qw.q, epsilon)
    if delta <= 0.0:
        raise DegenerateInstanceError(f"delta = 0 at t = {t}, y = {y}, epsilon = {epsilon}")
    scale = radii.R / math.sqrt(2.0)
    v = np.zeros(d)
    w = np.zeros(d)
    v[0] = scale
    w[1] = scale
    p_plus = _three_point(v, w, qw.alpha, qw.y0, y, qw.q, epsilon, 1.0)
    p_minus = _three_point(v, w, qw.alpha, qw.y0, y, qw.q, epsilon, -1.0)
    fam = GlmFamily(loss.family, d, loss.label_set)
    return HardInstance(loss, radii, v, w, float(t), float(delta), float(epsilon), qw.q, qw.alpha,
                        float(y), qw.y0, p_plus, p_minus,
                        PerturbedDistribution(p_plus, 1.0, fam), PerturbedDistribution(p_minus, 1.0, fam))


def perturb_instance(instance: HardInstance, gamma: float) -> HardInstance:
    if not 0.0 <= gamma <= 1.0:
        raise DomainError("gamma must lie in [0, 1]")
    fam = instance.Q_plus.family
    return replace(instance,
                   radii=replace(instance.radii, gamma=float(gamma)),
                   Q_plus=PerturbedDistribution(instance.P_plus, float(gamma), fam),
                   Q_minus=PerturbedDistribution(instance.P_minus, float(gamma), fam))


# -- brute-force verification ----------------------------------------------------

def separation_bruteforce(f_plus, f_minus, theta_grid, tolerance: float = 1e-4) -> float:
    """Largest delta for which small excess risk under one functional forces large excess under the other.

    ``f_plus`` and ``f_minus`` are evaluated on ``theta_grid`` (one point
    per row, or a 1-D array of scalars) and infima are taken over the grid.
    """
    grid = np.asarray(theta_grid, dtype=float)
    e1 = np.asarray(f_plus(grid), dtype=float)
    e2 = np.asarray(f_minus(grid), dtype=float)
    e1 = e1 - e1.min()
    e2 = e2 - e2.min()

    def holds(delta):
        bad = ((e1 <= delta) & (e2 < delta)) | ((e2 <= delta) & (e1 < delta))
        return not bad.any()

    lo, hi = 0.0, float(max(e1.max(), e2.max())) + 1.0
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


def polar_grid(radius: float, n_radii: int = 200, n_angles: int = 200, d: int = 2) -> np.ndarray:
    """Polar grid of the disk in the first two coordinates, zero-padded to d dimensions."""
    r = np.linspace(0.0, radius, n_radii)
    ang = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    pts = np.stack([np.outer(r, np.cos(ang)).ravel(), np.outer(r, np.sin(ang)).ravel()], axis=1)
    pts = np.unique(np.round(pts, 14), axis=0)
    out = np.zeros((len(pts), d))
    out[:, :2] = pts
    return out


@dataclass(frozen=True)
class SeparationCertificate:
    sep_lower: float
    kl_exact: float
    kl_bound: float
    grid_resolution: int
    sep_bruteforce: float = 0.0
    kl_formula: float = 0.0
    kl_bound_holds: bool = False
    lecam_value: float = 0.0
    balanced_epsilon: float = math.inf
    epsilon_feasible: bool = False
    passed: bool = False
    failures: tuple = ()


def verify_instance(instance: HardInstance, theta_grid=None, grid_resolution: int = 200,
                    tolerance: float = 1e-4) -> SeparationCertificate:
    """Check the perturbed pair Q_plus, Q_minus by brute force.

    The certificate passes when the grid separation is at least
    ``gamma * sep_lower`` and the KL of the joint laws, summed atom by atom,
    equals ``gamma`` times the closed-form three-point KL.
    """
    g = instance.gamma
    if theta_grid is None:
        theta_grid = polar_grid(instance.radii.B, grid_resolution, grid_resolution, instance.d)
        extra = np.stack([instance.theta0, instance.theta_delta(1.0), instance.theta_delta(-1.0)])
        theta_grid = np.vstack([theta_grid, extra])
    loss = instance.loss
    sep = separation_bruteforce(lambda th: instance.Q_plus.risk(loss, th),
                                lambda th: instance.Q_minus.risk(loss, th), theta_grid, tolerance)
    kl = atom_kl(instance.Q_plus.atoms(), instance.Q_minus.atoms())
    formula = g * instance.kl_exact
    bound = g * instance.kl_bound
    sep_lower = g * instance.sep_lower
    n = instance.radii.n
    lecam = sep * max(0.0, 1.0 - math.sqrt(n * kl / 2.0))
    gq = g * instance.q
    balanced_eps = math.sqrt(1.0 / (2.0 * n * gq)) if gq > 0 else math.inf
    failures = []
    if sep < sep_lower - tolerance:
        failures.append(f"grid separation {sep:.6g} < guaranteed {sep_lower:.6g}")
    if abs(kl - formula) > 1e-12:
        failures.append(f"atomwise KL {kl!r} != closed form {formula!r}")
    return SeparationCertificate(
        sep_lower=sep_lower, kl_exact=kl, kl_bound=bound, grid_resolution=grid_resolution,
        sep_bruteforce=sep, kl_formula=formula, kl_bound_holds=bool(kl <= bound),
        lecam_value=lecam, balanced_epsilon=balanced_eps, epsilon_feasible=bool(balanced_eps**2 <= 1.0 / 3.0),
        passed=not failures, failures=tuple(failures))


# -- serialization ---------------------------------------------------------------

def loss_to_dict(loss: ScalarLoss) -> dict:
    ls = loss.label_set
    return {"family": loss.family, "rule": loss.rule.value,
            "label_set": {"kind": ls.kind, "low": ls.low, "high": ls.high}}


def loss_from_dict(doc: dict) -> ScalarLoss:
    ls = doc.get("label_set")
    label_set = LabelSet(ls["kind"], float(ls["low"]), float(ls["high"])) if ls else None
    return ScalarLoss(doc["family"], doc.get("rule", "log"), label_set)


def _dist_to_dict(p: ThreePointDistribution) -> dict:
    return {"points": p.points.tolist(), "labels": p.labels.tolist(), "masses": p.masses.tolist()}


def instance_to_dict(inst: HardInstance) -> dict:
    r = inst.radii
    return {
        "loss": loss_to_dict(inst.loss),
        "radii": {"R": r.R, "B": r.B, "gamma": r.gamma, "n": r.n},
        "v": inst.v.tolist(),
        "w": inst.w.tolist(),
        "t": inst.t,
        "delta": inst.delta,
        "epsilon": inst.epsilon,
        "q": inst.q,
        "alpha": inst.alpha,
        "y": inst.y,
        "y0": inst.y0,
        "gamma": inst.gamma,
        "P_plus": _dist_to_dict(inst.P_plus),
        "P_minus": _dist_to_dict(inst.P_minus),
        "sep_lower": inst.sep_lower,
        "kl_exact": inst.kl_exact,
        "kl_bound": inst.kl_bound,
    }


def instance_from_dict(doc: dict) -> HardInstance:
    loss = loss_from_dict(doc["loss"])
    r = doc["radii"]
    radii = Radii(float(r["R"]), float(r["B"]), float(r["gamma"]), int(r["n"]))
    v, w = np.asarray(doc["v"], float), np.asarray(doc["w"], float)
    args = (doc["alpha"], doc["y0"], doc["y"], doc["q"], doc["epsilon"])
    p_plus = _three_point(v, w, *args, 1.0)
    p_minus = _three_point(v, w, *args, -1.0)
    fam = GlmFamily(loss.family, len(v), loss.label_set)
    inst = HardInstance(loss, radii, v, w, doc["t"], doc["delta"], doc["epsilon"], doc["q"],
                        doc["alpha"], doc["y"], doc["y0"], p_plus, p_minus,
                        PerturbedDistribution(p_plus, 1.0, fam), PerturbedDistribution(p_minus, 1.0, fam))
    return perturb_instance(inst, float(doc.get("gamma", 1.0)))


def certificate_to_dict(cert: SeparationCertificate) -> dict:
    out = {}
    for k, v in cert.__dict__.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, float) and math.isinf(v):
            v = None
        out[k] = v
    return out
