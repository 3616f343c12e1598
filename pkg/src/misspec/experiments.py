"""MLE versus AHA risk curves under controlled misspecification.

Two synthetic tasks are provided: linear regression with a hidden additive
confounder (``linreg_misspec``) and logistic regression contaminated by a
shifted sub-population with label noise unrelated to the covariates
(``logistic_mix``).  Each replication owns independent random streams for
the planted parameter, the training samples and the test sample, so the
results are reproducible and do not depend on execution order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .families import GlmFamily
from .learners import (
    LabeledDataset,
    MixturePredictor,
    SolverConfig,
    SolverError,
    aha_fit,
    fit_mle,
    risk_estimate,
)
from .losses import DomainError, LabelSet, softplus

TASKS = ("linreg_misspec", "logistic_mix", "two_point_demo")
SCHEDULE_FORMS = ("const", "log_n", "sqrt_n", "linear_n")
DEFAULT_SCHEDULES = tuple((form, c) for form in SCHEDULE_FORMS for c in (0.1, 0.2, 1.0))

# stream roles inside one replication
_PROBLEM, _TRAIN, _TEST, _AHA = range(4)


def schedule_radius(form: str, c: float, n: int) -> float:
    if form == "const":
        return c
    if form == "log_n":
        return c * math.log(n)
    if form == "sqrt_n":
        return c * math.sqrt(n)
    if form == "linear_n":
        return c * n
    raise DomainError(f"unknown schedule form {form!r}")


def _unit_vector(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def gen_linreg_misspec(n: int, d: int, tau: float, seed, theta_star=None) -> tuple[LabeledDataset, np.ndarray]:
    """y = x^T theta* + tau h + noise with (x, h, noise) standard normal.

    ``theta_star`` is drawn uniformly on the unit sphere from ``seed`` unless
    supplied.  Returns the dataset and the planted parameter.
    """
    if d < 1 or tau < 0:
        raise DomainError("need d >= 1 and tau >= 0")
    rng = np.random.default_rng(seed)
    if theta_star is None:
        theta_star = _unit_vector(d, rng)
    X = rng.standard_normal((n, d))
    h = rng.standard_normal(n)
    y = X @ theta_star + tau * h + rng.standard_normal(n)
    return LabeledDataset(X, y), np.asarray(theta_star, dtype=float)


@dataclass(frozen=True, eq=False)
class LogisticMixProblem:
    theta_star: np.ndarray
    shift: np.ndarray

    @classmethod
    def draw(cls, d: int, rng: np.random.Generator) -> "LogisticMixProblem":
        return cls(2.0 * _unit_vector(d, rng), _unit_vector(d, rng))


def gen_logistic_mix(n: int, d: int, tau_fraction: float, seed, problem: LogisticMixProblem | None = None):
    """Logistic data with a round(tau n)-row sub-population the model cannot fit.

    Sub-population rows have covariates shifted by ``2 u`` for a fixed unit
    vector ``u`` and labels +1 with probability 0.9 regardless of ``x``.
    Returns the dataset, the problem and a boolean mask of sub-population rows.
    """
    if not 0.0 <= tau_fraction <= 1.0:
        raise DomainError("tau_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    if problem is None:
        problem = LogisticMixProblem.draw(d, rng)
    X = rng.standard_normal((n, d))
    sub = np.zeros(n, dtype=bool)
    sub[rng.permutation(n)[: int(round(tau_fraction * n))]] = True
    X[sub] += 2.0 * problem.shift
    u = rng.random(n)
    p_plus = np.where(sub, 0.9, expit(X @ problem.theta_star))
    y = np.where(u < p_plus, 1.0, -1.0)
    return LabeledDataset(X, y), problem, sub


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "linreg_misspec"
    d: int = 10
    tau: float = 0.0
    n_grid: tuple = (50, 100, 200, 500, 1000)
    K: int = 20
    schedules: tuple = DEFAULT_SCHEDULES
    test_size: int = 5000
    replications: int = 20
    seed: int = 0
    threads: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.task not in ("linreg_misspec", "logistic_mix"):
            raise DomainError(f"run_experiment does not handle task {self.task!r}")
        if self.replications < 1 or self.K < 1 or self.test_size < 1:
            raise DomainError("replications, K and test_size must be positive")
        if self.tau < 0 or (self.task == "logistic_mix" and self.tau > 1):
            raise DomainError("tau out of range")
        for form, _ in self.schedules:
            if form not in SCHEDULE_FORMS:
                raise DomainError(f"unknown schedule form {form!r}")
        object.__setattr__(self, "n_grid", tuple(sorted(int(n) for n in self.n_grid)))
        object.__setattr__(self, "schedules", tuple((str(f), float(c)) for f, c in self.schedules))

    @property
    def family(self) -> GlmFamily:
        if self.task == "linreg_misspec":
            return GlmFamily("gaussian", self.d, LabelSet.interval(-math.inf, math.inf))
        return GlmFamily("logistic", self.d)


@dataclass(frozen=True)
class RiskRecord:
    task: str
    tau: float
    n: int
    schedule_form: str
    schedule_c: float
    estimator: str
    replication: int
    risk: float


@dataclass(frozen=True)
class CurveRow:
    n: int
    estimator: str
    schedule: tuple
    mean_risk: float
    std_err: float
    count: int


@dataclass
class RiskCurve:
    """Per-replication records, aggregated rows and the best-schedule table."""

    records: list
    rows: list
    best: list
    errors: list = field(default_factory=list)

    def summary(self, n: int, estimator: str, schedule=None) -> CurveRow | None:
        pool = self.best if schedule is None else self.rows
        for row in pool:
            if row.n == n and row.estimator == estimator and (schedule is None or row.schedule == schedule):
                return row
        return None


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _draw(cfg: ExperimentConfig, n: int, rng, problem):
    if cfg.task == "linreg_misspec":
        data, _ = gen_linreg_misspec(n, cfg.d, cfg.tau, rng, theta_star=problem)
    else:
        data, _, _ = gen_logistic_mix(n, cfg.d, cfg.tau, rng, problem=problem)
    return data


def _run_replication(cfg: ExperimentConfig, rep: int):
    family = cfg.family
    loss = family.loss()
    prng = _stream(cfg.seed, rep, _PROBLEM)
    if cfg.task == "linreg_misspec":
        problem = _unit_vector(cfg.d, prng)
    else:
        problem = LogisticMixProblem.draw(cfg.d, prng)
    test = _draw(cfg, cfg.test_size, _stream(cfg.seed, rep, _TEST), problem)
    records, errors = [], []
    for i, n in enumerate(cfg.n_grid):
        train = _draw(cfg, n, _stream(cfg.seed, rep, _TRAIN, i), problem)
        for j, (form, c) in enumerate(cfg.schedules):
            B = schedule_radius(form, c, n)
            base = (cfg.task, float(cfg.tau), n, form, c)
            try:
                mle = MixturePredictor.point(fit_mle(family, loss, train, B, cfg.solver))
                records.append(RiskRecord(*base, "mle", rep, risk_estimate(mle, family, "log", test)))
            except SolverError as err:
                errors.append({"replication": rep, "n": n, "schedule": [form, c], "estimator": "mle", "error": str(err)})
            try:
                mix = aha_fit(family, "log", train, B, cfg.K, _stream(cfg.seed, rep, _AHA, i, j), cfg.solver)
                records.append(RiskRecord(*base, "aha", rep, risk_estimate(mix, family, "log", test)))
            except SolverError as err:
                errors.append({"replication": rep, "n": n, "schedule": [form, c], "estimator": "aha", "error": str(err)})
    return records, errors


def _aggregate(records, n_grid, schedules):
    rows = []
    for n in n_grid:
        for est in ("mle", "aha"):
            for sched in schedules:
                vals = np.array([r.risk for r in records
                                 if r.n == n and r.estimator == est and (r.schedule_form, r.schedule_c) == sched])
                if len(vals) == 0:
                    continue
                se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
                rows.append(CurveRow(n, est, sched, float(vals.mean()), se, len(vals)))
    best = []
    for n in n_grid:
        mle_rows = [r for r in rows if r.n == n and r.estimator == "mle"]
        if not mle_rows:
            continue
        # ties resolved by schedule order
        top = min(mle_rows, key=lambda r: r.mean_risk)
        best.append(top)
        match = [r for r in rows if r.n == n and r.estimator == "aha" and r.schedule == top.schedule]
        best.extend(match)
    return rows, best


def run_experiment(cfg: ExperimentConfig) -> RiskCurve:
    """Fit MLE and AHA for every replication, sample size and radius schedule."""
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(lambda r: _run_replication(cfg, r), range(cfg.replications)))
    else:
        results = [_run_replication(cfg, r) for r in range(cfg.replications)]
    records = [rec for recs, _ in results for rec in recs]
    errors = [err for _, errs in results for err in errs]
    rows, best = _aggregate(records, cfg.n_grid, cfg.schedules)
    return RiskCurve(records, rows, best, errors)


def pooled_standard_error(a: CurveRow, b: CurveRow) -> float:
    return math.sqrt(a.std_err**2 + b.std_err**2)


# -- two-point demonstration -----------------------------------------------------

@dataclass(frozen=True)
class TwoPointRow:
    n: int
    risk_best_theta: float
    risk_mixture: float
    derivative_at_zero: float
    derivative_fd: float


def two_point_risk(n: int, theta: float) -> float:
    """Logistic log-loss risk under mass 1/(1+n) at (x=-n, y=1) and n/(1+n) at (x=1, y=1)."""
    # written as a correction to the heavy atom so theta = 0 gives log 2 without rounding
    heavy = float(softplus(-theta))
    return heavy + (float(softplus(n * theta)) - heavy) / (1.0 + n)


def two_point_risk_derivative(n: int, theta: float) -> float:
    return float((n * expit(n * theta) - n * expit(-theta)) / (1.0 + n))


def two_point_mixture_risk(n: int) -> float:
    """Log-loss risk of (1/n) p_0 + (1 - 1/n) p_{theta=n} under the same two atoms."""
    def log_p_plus(x):
        # log of (1/n)(1/2) + (1 - 1/n) sigmoid(n x), in log space
        a = math.log(0.5 / n)
        b = math.log1p(-1.0 / n) - float(softplus(-n * x))
        return float(np.logaddexp(a, b))

    return -(log_p_plus(-n) + n * log_p_plus(1.0)) / (1.0 + n)


def two_point_demo(n_list) -> list[TwoPointRow]:
    rows = []
    for n in n_list:
        n = int(n)
        if n < 2:
            raise DomainError("two-point demo needs n >= 2")
        h = 1e-6
        fd = (two_point_risk(n, h) - two_point_risk(n, -h)) / (2 * h)
        rows.append(TwoPointRow(n, two_point_risk(n, 0.0), two_point_mixture_risk(n),
                                two_point_risk_derivative(n, 0.0), fd))
    return rows
