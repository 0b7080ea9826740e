import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from bailout.levy_model import (
    JumpComponent,
    LevyModel,
    PayoffSpec,
    PiecewiseLinear,
    ProblemSpec,
    SizeDistribution,
    validate_model,
    validate_problem,
)

from conftest import regime_model


def codes(violations):
    return [v.code for v in violations]


def test_driftless_compound_poisson_rejected():
    m = LevyModel(0.0, 0.0, (JumpComponent(1.0, "down", SizeDistribution.exponential(1.0)),))
    assert codes(validate_model(m)) == ["DRIFTLESS_COMPOUND_POISSON"]


def test_experiment_model_valid():
    assert validate_model(regime_model(1.5)) == []


def test_brownian_valid():
    assert validate_model(LevyModel.brownian(0.0, 1.0)) == []


@pytest.mark.parametrize(
    "model, code",
    [
        (LevyModel(1.0, -0.1), "NEGATIVE_SIGMA"),
        (LevyModel(1.0, 0.0, (JumpComponent(0.0, "up", SizeDistribution.fixed(1.0)),)), "NONPOSITIVE_JUMP_RATE"),
        (LevyModel(1.0, 0.0, (JumpComponent(1.0, "sideways", SizeDistribution.fixed(1.0)),)), "BAD_JUMP_DIRECTION"),
        (LevyModel(1.0, 0.0, (JumpComponent(1.0, "up", SizeDistribution.exponential(-2.0)),)), "BAD_JUMP_PARAMETER"),
        (LevyModel(math.inf, 0.0), "NONFINITE_DRIFT"),
    ],
)
def test_model_violation_codes(model, code):
    assert code in codes(validate_model(model))


def test_validation_is_pure():
    m = LevyModel(0.0, 0.0, (JumpComponent(-1.0, "down", SizeDistribution.exponential(1.0)),))
    assert validate_model(m) == validate_model(m)


def test_bounded_variation_flag():
    assert LevyModel(1.0, 0.0).bounded_variation
    assert not LevyModel(1.0, 0.3).bounded_variation


def test_zero_payoff_problem_valid():
    spec = ProblemSpec(LevyModel.brownian(0, 1), 1.5, 0.05, 0.1, PayoffSpec.zero())
    assert validate_problem(spec) == []


def test_linear_payoff_within_bounds():
    # w' = 1 < alpha/r = 1.025 and w'(0) = 1 <= beta*alpha/r = 1.1275
    spec = ProblemSpec(LevyModel.brownian(0, 1), 1.1, 0.05, 2.0, PayoffSpec.linear(1.0))
    assert validate_problem(spec) == []


def test_linear_payoff_r3_within_bounds():
    spec = ProblemSpec(LevyModel.brownian(0, 1), 1.1, 0.05, 3.0, PayoffSpec.linear(1.0))
    assert validate_problem(spec) == []


def test_steep_payoff_violates_slope_at_infinity():
    spec = ProblemSpec(LevyModel.brownian(0, 1), 1.1, 0.05, 3.0, PayoffSpec.linear(2.0))
    assert "PAYOFF_SLOPE_AT_INFINITY" in codes(validate_problem(spec))


def test_slope_at_zero_violation():
    # w'(0) = 5 > beta*alpha/r = 1.2*1.5 = 1.8
    payoff = PayoffSpec.piecewise_linear([0.0, 0.1], [0.0, 0.5], 0.0)
    spec = ProblemSpec(LevyModel.brownian(0, 1), 1.2, 0.5, 1.0, payoff)
    assert "PAYOFF_SLOPE_AT_ZERO" in codes(validate_problem(spec))


def test_convex_payoff_rejected():
    payoff = PayoffSpec.piecewise_linear([0.0, 1.0, 2.0], [0.0, 0.1, 1.0], 0.0)
    spec = ProblemSpec(LevyModel.brownian(0, 1), 1.5, 0.5, 1.0, payoff)
    assert "PAYOFF_NOT_CONCAVE" in codes(validate_problem(spec))


def test_callable_payoff_tabulation():
    payoff = PayoffSpec.from_callables(np.log1p,
                                       lambda x: 1.0 / (1.0 + np.asarray(x)), 0.0)
    spec = ProblemSpec(LevyModel.brownian(0, 1), 1.5, 0.5, 1.0, payoff)
    assert validate_problem(spec) == []


@pytest.mark.parametrize(
    "beta, q, r, code",
    [(1.0, 0.1, 0.1, "BETA_NOT_ABOVE_ONE"), (1.5, 0.0, 0.1, "NONPOSITIVE_Q"), (1.5, 0.1, -1, "NONPOSITIVE_R")],
)
def test_problem_range_codes(beta, q, r, code):
    spec = ProblemSpec(LevyModel.brownian(0, 1), beta, q, r)
    assert code in codes(validate_problem(spec))


def test_weibull_scale_one_mean():
    assert SizeDistribution.weibull(2.0).mean() == pytest.approx(math.sqrt(math.pi) / 2, rel=1e-14)


@pytest.mark.parametrize(
    "dist",
    [
        SizeDistribution.exponential(0.7),
        SizeDistribution.weibull(2.0, 1.0),
        SizeDistribution.weibull(0.8, 1.5),
        SizeDistribution.half_normal(1.3),
        SizeDistribution.fixed(0.4),
    ],
)
def test_sampled_mean_matches_analytic(dist, rng):
    n = 100_000
    x = dist.sample(rng, n)
    assert np.all(x >= 0)
    se = math.sqrt(dist.variance() / n)
    assert abs(x.mean() - dist.mean()) <= 3 * se + 1e-12


def test_weibull_variance_formula():
    k, lam = 2.0, 1.0
    expect = lam**2 * (special.gamma(2.0) - special.gamma(1.5) ** 2)
    assert SizeDistribution.weibull(k, lam).variance() == pytest.approx(expect)


def test_size_ppf_inverts_cdf():
    u = np.linspace(0.01, 0.99, 9)
    for d in (SizeDistribution.exponential(2.0), SizeDistribution.half_normal(1.0), SizeDistribution.weibull(2.0)):
        x = d.ppf(u)
        assert np.all(np.diff(x) > 0)


def test_model_roundtrip_dict():
    m = regime_model(1.1)
    assert LevyModel.from_dict(m.to_dict()) == m


def test_model_from_dict_rejects_unknown():
    with pytest.raises(ValueError):
        LevyModel.from_dict({"drift": 1.0, "vol": 0.2})


def test_model_mean():
    m = regime_model(1.5)
    expect = 1.5 + 0.8 * special.gamma(1.5) - 0.2 * math.sqrt(2 / math.pi)
    assert m.mean() == pytest.approx(expect, rel=1e-14)


def test_piecewise_linear_eval_and_tail():
    pl = PiecewiseLinear(np.array([0.0, 1.0, 3.0]), np.array([0.0, 2.0, 3.0]), 0.25)
    assert pl(0.5) == pytest.approx(1.0)
    assert pl(2.0) == pytest.approx(2.5)
    assert pl(5.0) == pytest.approx(3.5)
    np.testing.assert_allclose(pl.right_derivative([0.0, 1.0, 2.0, 7.0]), [2.0, 0.5, 0.5, 0.25])


def test_piecewise_linear_rejects_bad_knots():
    with pytest.raises(ValueError):
        PiecewiseLinear(np.array([0.1, 1.0]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        PiecewiseLinear(np.array([0.0, 1.0, 1.0]), np.array([0.0, 1.0, 2.0]))


@given(
    slopes=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6),
    beta=st.floats(1.01, 3.0),
)
def test_concave_piecewise_payoffs_accepted(slopes, beta):
    s = np.sort(np.asarray(slopes))[::-1] * 0.9
    knots = np.concatenate([[0.0], np.cumsum(np.full(s.size, 0.7))])
    values = np.concatenate([[0.0], np.cumsum(s * 0.7)])
    payoff = PayoffSpec.piecewise_linear(knots, values, float(s[-1]))
    spec = ProblemSpec(LevyModel.brownian(0, 1), beta, 0.1, 0.1, payoff)
    assert validate_problem(spec) == []
