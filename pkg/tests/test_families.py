import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misspec.families import (
    GlmFamily,
    GlmPredictive,
    glm_predict,
    glm_sample,
    kl_conditional,
    kl_mixture_expansion_check,
    log_partition,
)
from misspec.losses import DomainError

FAMILY_IDS = ["logistic", "geometric", "poisson", "gaussian"]


def test_predict_at_zero():
    p = glm_predict(GlmFamily("logistic"), [0.0, 0.0], [1.0, 2.0])
    assert p.prob(1.0) == pytest.approx(0.5) and p.prob(-1.0) == pytest.approx(0.5)
    pois = GlmPredictive(GlmFamily("poisson"), 0.0)
    assert pois.mean() == 1.0
    assert pois.prob(3.0) == pytest.approx(math.exp(-1) / 6)
    geo = GlmPredictive(GlmFamily("geometric"), 0.0)
    ys = np.arange(6.0)
    np.testing.assert_allclose(geo.prob(ys), 2.0 ** -(ys + 1), rtol=1e-14)


@pytest.mark.parametrize("family", ["logistic", "geometric", "poisson"])
@pytest.mark.parametrize("t", [-1.5, 0.0, 1.0])
def test_masses_sum_to_one(family, t):
    _, p = GlmPredictive(GlmFamily(family), t).masses()
    assert abs(p.sum() - 1.0) <= 1e-9


def test_renormalized_truncation():
    fam = GlmFamily("geometric", renormalize=True)
    _, p = GlmPredictive(fam, 0.0).masses()
    assert len(p) == 11
    assert p.sum() == pytest.approx(1.0, abs=1e-14)


def test_sampling_examples():
    fam = GlmFamily("logistic", 1)
    draws = glm_sample(fam, [0.0], np.ones((100_000, 1)), np.random.default_rng(7))
    assert abs(np.mean(draws == 1.0) - 0.5) <= 0.01
    again = glm_sample(fam, [0.0], np.ones((100_000, 1)), np.random.default_rng(7))
    np.testing.assert_array_equal(draws, again)
    pois = glm_sample(GlmFamily("poisson", 1), [0.0], np.ones((100_000, 1)), np.random.default_rng(7))
    assert abs(pois.mean() - 1.0) <= 0.02


@pytest.mark.parametrize("family", FAMILY_IDS)
@pytest.mark.parametrize("t", [-0.7, 0.2, 1.1])
def test_sample_mean_within_four_standard_errors(family, t):
    fam = GlmFamily(family)
    draws = GlmPredictive(fam, t).sample(np.random.default_rng(11), 100_000)
    se = math.sqrt(float(fam.variance(t)) / len(draws))
    assert abs(draws.mean() - float(fam.mean(t))) <= 4 * se


@pytest.mark.parametrize("family", FAMILY_IDS)
def test_mean_matches_log_partition_gradient(family):
    lp = log_partition(family)
    fam = GlmFamily(family)
    t = 0.4
    if family == "geometric":
        # E[Y] = A'(c) in the natural parameter
        assert float(lp.A1(lp.natural(t))) == pytest.approx(float(fam.mean(t)), rel=1e-12)
    elif family == "logistic":
        # Bernoulli mean of y' = (y + 1) / 2
        assert float(lp.A1(t)) == pytest.approx((float(fam.mean(t)) + 1) / 2, rel=1e-12)
    else:
        assert float(lp.A1(t)) == pytest.approx(float(fam.mean(t)), rel=1e-12)


def test_log_partition_curvature():
    assert float(log_partition("logistic").A2(0.0)) == 0.25
    assert float(log_partition("poisson").A2(0.0)) == 1.0
    np.testing.assert_array_equal(log_partition("gaussian").A2(np.array([-2.0, 0.0, 5.0])), 1.0)


@pytest.mark.parametrize("family", FAMILY_IDS)
def test_log_partition_derivatives(family):
    lp = log_partition(family)
    u = np.array([-0.9, -0.3, 0.4]) if family != "geometric" else np.array([-2.0, -0.7, -0.2])
    h = 1e-6
    fd1 = (lp.A(u + h) - lp.A(u - h)) / (2 * h)
    fd2 = (lp.A1(u + h) - lp.A1(u - h)) / (2 * h)
    np.testing.assert_allclose(lp.A1(u), fd1, rtol=1e-6)
    np.testing.assert_allclose(lp.A2(u), fd2, rtol=1e-6)
    assert np.all(lp.A2(u) >= 0)


def test_kl_examples():
    assert kl_conditional("gaussian", 0.0, 1.0) == 0.5
    assert kl_conditional("poisson", 0.3, 0.3) == 0.0
    # direct two-point sum
    p = 0.5
    q = 1 / (1 + math.exp(-0.2))
    direct = p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))
    assert kl_conditional("logistic", 0.0, 0.2) == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("family", ["geometric", "poisson"])
def test_kl_matches_direct_sum(family):
    fam = GlmFamily(family)
    ys, a = GlmPredictive(fam, 0.3).masses()
    b = GlmPredictive(fam, -0.5).prob(ys)
    assert kl_conditional(family, 0.3, -0.5) == pytest.approx(float(np.sum(a * np.log(a / b))), rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(FAMILY_IDS), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_kl_nonnegative(family, t, u):
    kl = kl_conditional(family, t, u)
    assert kl >= -1e-14
    if abs(t - u) > 1e-3:
        assert kl > 0


def test_expansion_at_equal_arguments():
    out = kl_mixture_expansion_check("logistic", 0.3, 0.3)
    assert out["lhs"] == 0.0 and out["residual"] == 0.0


@pytest.mark.parametrize("family", ["geometric", "poisson"])
def test_expansion_residual_cubic(family):
    r = [kl_mixture_expansion_check(family, 0.0, h)["residual"] for h in (0.2, 0.1, 0.05)]
    assert 6 <= r[0] / r[1] <= 10
    assert 6 <= r[1] / r[2] <= 10


@pytest.mark.parametrize("family", ["logistic", "gaussian"])
def test_expansion_residual_quartic_for_symmetric_families(family):
    # the cubic coefficient vanishes at t = 0, so halving h divides the residual by ~16
    r = [kl_mixture_expansion_check(family, 0.0, h)["residual"] for h in (0.2, 0.1, 0.05)]
    assert 15 <= r[0] / r[1] <= 16.5
    assert 15 <= r[1] / r[2] <= 16.5


def test_logistic_residual_bounded_by_fitted_constant():
    hs = (0.1, 0.05, 0.025)
    res = [abs(kl_mixture_expansion_check("logistic", 0.0, h)["residual"]) for h in hs]
    c = res[0] / hs[0] ** 3
    assert all(r <= c * h**3 for r, h in zip(res[1:], hs[1:]))


def test_poisson_expansion_against_truncated_series():
    from scipy.stats import poisson

    ys = np.arange(61)
    a = poisson.pmf(ys, 1.0)
    b = poisson.pmf(ys, math.exp(0.1))
    lhs = float(np.sum(a * np.log(a / (0.5 * (a + b)))))
    out = kl_mixture_expansion_check("poisson", 0.0, 0.1)
    assert out["lhs"] == pytest.approx(lhs, rel=1e-10)
    assert abs(out["residual"]) / 0.1**3 < 1.0


def test_expansion_domain():
    with pytest.raises(DomainError):
        kl_mixture_expansion_check("poisson", 0.0, 1.5)
