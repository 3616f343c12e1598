import math

import numpy as np
import pytest
from scipy.special import expit

from misspec.experiments import (
    ExperimentConfig,
    gen_linreg_misspec,
    gen_logistic_mix,
    run_experiment,
    schedule_radius,
    two_point_demo,
    two_point_mixture_risk,
    two_point_risk,
)
from misspec.families import GlmFamily
from misspec.learners import fit_mle
from misspec.losses import DomainError


@pytest.mark.parametrize("tau,variance", [(0.0, 1.0), (5.0, 26.0)])
def test_linreg_residual_variance(tau, variance):
    data, theta = gen_linreg_misspec(100_000, 4, tau, 0)
    resid = data.y - data.X @ theta
    assert abs(resid.var() / variance - 1) <= 0.05


def test_linreg_deterministic():
    a, ta = gen_linreg_misspec(50, 3, 1.0, 42)
    b, tb = gen_linreg_misspec(50, 3, 1.0, 42)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(ta, tb)
    assert np.linalg.norm(ta) == pytest.approx(1.0)


@pytest.mark.parametrize("n,tau", [(10, 0.25), (101, 0.5), (7, 1.0), (30, 0.0)])
def test_logistic_mix_subpopulation_size(n, tau):
    _, _, sub = gen_logistic_mix(n, 3, tau, 1)
    assert sub.sum() == int(round(tau * n))


def test_logistic_mix_clean_data_recovers_direction():
    data, problem, _ = gen_logistic_mix(10_000, 3, 0.0, 5)
    fam = GlmFamily("logistic", 3)
    theta = fit_mle(fam, fam.loss(), data, 10.0)
    cos = theta @ problem.theta_star / (np.linalg.norm(theta) * np.linalg.norm(problem.theta_star))
    assert cos >= 0.95


def test_logistic_mix_full_contamination_uninformative():
    data, problem, _ = gen_logistic_mix(10_000, 3, 1.0, 5)
    corr = np.corrcoef(data.X @ problem.theta_star, data.y)[0, 1]
    assert abs(corr) <= 0.1


@pytest.mark.parametrize("form,expected", [("const", 0.2), ("log_n", 0.2 * math.log(100)),
                                           ("sqrt_n", 2.0), ("linear_n", 20.0)])
def test_schedule_radius(form, expected):
    assert schedule_radius(form, 0.2, 100) == pytest.approx(expected)


def test_config_validation():
    with pytest.raises(DomainError):
        ExperimentConfig(task="two_point_demo")
    with pytest.raises(DomainError):
        ExperimentConfig(task="logistic_mix", tau=1.5)
    with pytest.raises(DomainError):
        ExperimentConfig(schedules=(("cubic", 1.0),))


def test_two_point_risk_at_zero_is_log_two():
    for n in (10, 100, 1000):
        assert two_point_risk(n, 0.0) == pytest.approx(math.log(2), abs=1e-15)


def test_two_point_mixture_matches_direct_expectation():
    for n in (10, 100, 1000):
        def p_plus(x):
            return 0.5 / n + (1 - 1 / n) * expit(n * x)

        direct = -(math.log(p_plus(-n)) + n * math.log(p_plus(1.0))) / (1 + n)
        assert two_point_mixture_risk(n) == pytest.approx(direct, rel=1e-12)


def test_two_point_demo_table():
    rows = two_point_demo([10, 100, 1000])
    assert [r.n for r in rows] == [10, 100, 1000]
    assert all(abs(r.derivative_at_zero) <= 1e-10 and abs(r.derivative_fd) <= 1e-8 for r in rows)
    mix = [r.risk_mixture for r in rows]
    assert mix[0] > mix[1] > mix[2]
    assert mix[2] < 0.2
    np.testing.assert_allclose(mix, [0.3190, 0.05742, 0.008093], rtol=1e-3)


def test_two_point_demo_needs_n_two():
    with pytest.raises(DomainError):
        two_point_demo([1])


SMALL = dict(d=3, n_grid=(30, 60), K=3, schedules=(("const", 1.0), ("sqrt_n", 0.2)),
             test_size=200, replications=3, seed=11)


@pytest.mark.parametrize("task,tau", [("linreg_misspec", 2.0), ("logistic_mix", 0.3)])
def test_small_experiment_structure(task, tau):
    curve = run_experiment(ExperimentConfig(task=task, tau=tau, **SMALL))
    assert not curve.errors
    assert len(curve.records) == 3 * 2 * 2 * 2
    assert all(math.isfinite(r.risk) for r in curve.records)
    assert len(curve.rows) == 2 * 2 * 2
    assert all(r.count == 3 for r in curve.rows)
    for n in (30, 60):
        mle = curve.summary(n, "mle")
        aha = curve.summary(n, "aha")
        assert aha.schedule == mle.schedule
        assert mle.mean_risk == min(r.mean_risk for r in curve.rows if r.n == n and r.estimator == "mle")


def test_experiment_threads_do_not_change_results():
    a = run_experiment(ExperimentConfig(task="linreg_misspec", tau=1.0, threads=1, **SMALL))
    b = run_experiment(ExperimentConfig(task="linreg_misspec", tau=1.0, threads=3, **SMALL))
    assert a.records == b.records
