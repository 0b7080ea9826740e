import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bailout.diffusion_oracle import DiffusionSpec, oracle_bstar, oracle_g, solve_hjb_ode
from bailout.errors import HorizonTooShortWarning, NoUpperBracket, ZeroBarrierUnboundedVariation
from bailout.levy_model import JumpComponent, LevyModel, PayoffSpec, ProblemSpec, SizeDistribution
from bailout.path_engine import simulate_batch
from bailout.single_solver import (
    estimate_g,
    estimate_value,
    estimate_value_derivative,
    g_curve,
    optimality_scan,
    solve_bstar,
    truncation_bound,
    zero_barrier_criterion,
)

from conftest import regime_model

UNIT_MODEL = LevyModel.brownian(0.0, math.sqrt(2.0))


@pytest.fixture(scope="module")
def unit_batch():
    return simulate_batch(UNIT_MODEL, 0.01, 20.0, 4000, 31, bridge=True)


@pytest.fixture(scope="module")
def jump_batch():
    return simulate_batch(regime_model(1.1), 0.05, 50.0, 2000, 5)


def unit_spec(payoff=None, beta=2.0):
    return ProblemSpec(UNIT_MODEL, beta, 0.5, 0.5, payoff or PayoffSpec.zero())


def test_constant_payoff_g_bounded_by_beta(jump_batch):
    spec = ProblemSpec(regime_model(1.1), 1.7, 0.075, 0.1, PayoffSpec.linear(0.0, 3.0))
    est = g_curve(spec, [0.0, 0.5, 2.0, 40.0], jump_batch)
    assert all(e.value <= 1.7 for e in est)
    assert est[-1].value < 0.05


def test_unit_g_matches_closed_form(unit_batch):
    est = estimate_g(unit_spec(), 1.0, unit_batch)
    assert abs(est.value - 2.0 / math.cosh(1.0)) <= est.half_width


def test_g_monotone_exact_on_same_batch(jump_batch):
    spec = ProblemSpec(regime_model(1.1), 1.5, 0.075, 0.1, PayoffSpec.capped(2.0, 0.5))
    g = [e.value for e in g_curve(spec, np.linspace(0.0, 5.0, 20), jump_batch)]
    assert np.all(np.diff(g) <= 0.0)
    assert estimate_g(spec, 0.5, jump_batch).value >= estimate_g(spec, 1.0, jump_batch).value


@given(
    mu=st.floats(-0.5, 1.5), sigma=st.floats(0.1, 1.0), rate=st.floats(0.0, 1.0),
    beta=st.floats(1.1, 2.5), q=st.floats(0.05, 1.0), r=st.floats(0.05, 1.0), cap=st.floats(0.2, 3.0),
    seed=st.integers(0, 2**32),
)
def test_g_monotone_property(mu, sigma, rate, beta, q, r, cap, seed):
    jumps = (JumpComponent(rate, "down", SizeDistribution.exponential(0.5)),) if rate > 0 else ()
    model = LevyModel(mu, sigma, jumps)
    slope = min(1.0, 0.9 * (q + r) / r)
    spec = ProblemSpec(model, beta, q, r, PayoffSpec.capped(cap, slope))
    batch = simulate_batch(model, 0.05, 10.0, 50, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HorizonTooShortWarning)
        g = [e.value for e in g_curve(spec, np.linspace(0.0, 4.0, 20), batch)]
    assert np.all(np.diff(g) <= 0.0)


def test_bracket_straddles_level_one(jump_batch):
    spec = ProblemSpec(regime_model(1.1), 1.5, 0.075, 0.1)
    sol = solve_bstar(spec, jump_batch, tol_b=1e-6)
    lo, hi = sol.bracket
    assert hi - lo <= 1e-6 and sol.b_star == lo
    assert estimate_g(spec, lo, jump_batch).value >= 1.0 > estimate_g(spec, hi, jump_batch).value


def test_unit_bstar_matches_oracle(unit_batch):
    spec = unit_spec()
    sol = solve_bstar(spec, unit_batch, tol_b=1e-4)
    exact = math.acosh(2.0)
    assert exact == pytest.approx(oracle_bstar(DiffusionSpec(0.0, math.sqrt(2.0), 1.0), 2.0, 0.5), abs=1e-8)
    # propagate the CI of g through its slope at the root
    slope = 2.0 * math.sinh(exact) / math.cosh(exact) ** 2
    assert abs(sol.b_star - exact) <= max(1e-4 + 3 * sol.g_at_bstar.half_width / slope, 0.05)


def test_unbounded_variation_bstar_positive(unit_batch):
    spec = ProblemSpec(UNIT_MODEL, 1.01, 0.5, 3.0)
    sol = solve_bstar(spec, unit_batch, tol_b=1e-4)
    assert sol.b_star > 0 and sol.zero_barrier_reason is None


def bv_spec(beta, rate=0.5, q=0.2, r=0.2):
    model = LevyModel(1.0, 0.0, (JumpComponent(rate, "down", SizeDistribution.exponential(1.0)),))
    return ProblemSpec(model, beta, q, r)


def test_zero_barrier_criterion_values():
    assert zero_barrier_criterion(bv_spec(1.5)) == pytest.approx(0.5 * 0.5 - 0.4)
    assert zero_barrier_criterion(unit_spec()) is None
    assert zero_barrier_criterion(ProblemSpec(LevyModel(-1.0, 0.0), 1.5, 0.1, 0.1)) is None


def test_zero_barrier_returned():
    spec = bv_spec(1.5)
    batch = simulate_batch(spec.model, 0.05, 40.0, 4000, 9)
    sol = solve_bstar(spec, batch)
    assert sol.b_star == 0.0 and sol.zero_barrier_reason
    assert sol.g_at_bstar.value <= 1.0 + sol.g_at_bstar.half_width


def test_large_r_gives_small_g0():
    spec = bv_spec(3.0, rate=0.5, q=0.1, r=20.0)
    batch = simulate_batch(spec.model, 0.05, 10.0, 1000, 2)
    assert estimate_g(spec, 0.0, batch).value < 1.0
    assert solve_bstar(spec, batch).b_star == 0.0


def test_no_upper_bracket(unit_batch):
    with pytest.raises(NoUpperBracket):
        solve_bstar(unit_spec(), unit_batch, b_max=0.5, b_init=0.2)


def test_horizon_warning():
    spec = ProblemSpec(LevyModel(1.0, 0.1), 1.5, 0.01, 0.01)
    batch = simulate_batch(spec.model, 0.1, 5.0, 200, 1)
    with pytest.warns(HorizonTooShortWarning):
        estimate_g(spec, 1.0, batch)


def test_value_lump_dividend_and_injection(jump_batch):
    spec = ProblemSpec(regime_model(1.1), 1.5, 0.075, 0.1, PayoffSpec.capped(2.0, 0.5))
    b = 1.3
    est = estimate_value(spec, b, [-0.7, 0.0, b, b + 0.4, b + 2.0], jump_batch)
    v_neg, v0, vb, v1, v2 = est.value
    assert v_neg == pytest.approx(v0 - 1.5 * 0.7, abs=1e-9)
    assert v1 == pytest.approx(vb + 0.4, abs=1e-9)
    assert v2 == pytest.approx(vb + 2.0, abs=1e-9)


def test_value_decomposition_and_beta_linearity(jump_batch):
    payoff = PayoffSpec.capped(2.0, 0.5)
    a = ProblemSpec(regime_model(1.1), 1.5, 0.075, 0.1, payoff)
    b = ProblemSpec(regime_model(1.1), 3.0, 0.075, 0.1, payoff)
    xs = [0.0, 0.5, 1.0]
    ea = estimate_value(a, 1.2, xs, jump_batch, control_variate=False)
    eb = estimate_value(b, 1.2, xs, jump_batch, control_variate=False)
    np.testing.assert_array_equal(ea.dividends, eb.dividends)
    np.testing.assert_array_equal(ea.injections, eb.injections)
    np.testing.assert_array_equal(ea.running, eb.running)
    np.testing.assert_allclose(ea.value, ea.dividends - 1.5 * ea.injections + 0.1 * ea.running, rtol=1e-12)
    np.testing.assert_allclose(eb.value - ea.value, -1.5 * ea.injections, rtol=1e-10, atol=1e-12)


def test_control_variate_keeps_mean_and_narrows_ci(jump_batch):
    spec = ProblemSpec(regime_model(1.1), 1.5, 0.075, 0.1)
    raw = estimate_value(spec, 1.0, [0.0, 0.5], jump_batch, control_variate=False)
    cv = estimate_value(spec, 1.0, [0.0, 0.5], jump_batch)
    assert np.all(np.abs(cv.value - raw.value) <= raw.half_width)
    assert np.all(cv.half_width < raw.half_width)


def test_zero_barrier_value_requires_bounded_variation(unit_batch):
    with pytest.raises(ZeroBarrierUnboundedVariation):
        estimate_value(unit_spec(), 0.0, 0.0, unit_batch)


def test_unit_value_matches_bvp(unit_batch):
    spec = unit_spec(beta=1.5)
    d = DiffusionSpec(0.0, math.sqrt(2.0), 1.0)
    b = oracle_bstar(d, 1.5, 0.5)
    ref = solve_hjb_ode(d, 1.5, 0.5, PayoffSpec.zero(), b)
    xs = np.linspace(0.1, 0.9, 5) * b
    est = estimate_value(spec, b, xs, unit_batch)
    np.testing.assert_allclose(est.value, ref(xs), rtol=0.01)


def test_derivative_matches_finite_difference(unit_batch):
    spec = unit_spec(PayoffSpec.capped(1.0, 0.5), beta=1.8)
    b, h = 1.5, 0.05
    xs = np.linspace(0.3, 1.2, 5)
    der, der_hw = estimate_value_derivative(spec, b, xs, unit_batch)
    up = estimate_value(spec, b, xs + h, unit_batch)
    dn = estimate_value(spec, b, xs - h, unit_batch)
    fd = (up.value - dn.value) / (2 * h)
    fd_se = np.hypot(up.se, dn.se) / (2 * h)
    se = np.hypot(fd_se, der_hw / 1.959963984540054)
    assert np.all(np.abs(fd - der) <= 3 * se)


def test_derivative_bounds_and_limits(unit_batch):
    spec = unit_spec(beta=2.0)
    b = math.acosh(2.0)
    xs = np.array([0.01, 0.3, 0.6, 0.9, 1.2, b - 0.01])
    der, hw = estimate_value_derivative(spec, b, xs, unit_batch)
    se = hw / 1.959963984540054
    inner = slice(0, -1)
    assert np.all(der[inner] >= 1 - 3 * se[inner]) and np.all(der[inner] <= 2.0 + 3 * se[inner])
    assert der[0] == pytest.approx(2.0, abs=0.05)
    assert der[-1] == pytest.approx(1.0, abs=0.05)


def test_derivative_domain():
    batch = simulate_batch(UNIT_MODEL, 0.1, 1.0, 2, 1)
    with pytest.raises(ValueError):
        estimate_value_derivative(unit_spec(), 1.0, 1.0, batch)


def test_optimality_scan_argmax_and_shape(unit_batch):
    spec = unit_spec(beta=2.0)
    b_star = math.acosh(2.0)
    step = 0.1
    b_grid = b_star + step * np.arange(-5, 6)
    xs = np.array([0.2, 0.6, 1.0])
    res = optimality_scan(spec, unit_batch, b_grid, xs, b_star=b_star)
    assert np.all(np.abs(res.argmax_b - b_star) <= step + 1e-12)
    k = 5
    v = estimate_value(spec, b_grid[k], np.linspace(0.05, 2.5, 30), unit_batch)
    second = np.diff(v.value, 2)
    assert np.all(second <= 3 * v.half_width[1:-1].max())
    beyond = v.x > b_grid[k]
    np.testing.assert_allclose(np.diff(v.value[beyond]) / np.diff(v.x[beyond]), 1.0, atol=1e-9)
    assert res.max_violation <= 0.0


def test_truncation_bound_shrinks():
    spec = ProblemSpec(regime_model(1.5), 1.5, 0.05, 0.1)
    assert truncation_bound(spec, 50.0) < truncation_bound(spec, 20.0)
    assert truncation_bound(spec, 50.0, kind="g") == pytest.approx(1.5 * math.exp(-0.15 * 50))


def test_oracle_g_with_payoff_consistent_curve(unit_batch):
    payoff = PayoffSpec.capped(2.0)
    spec = ProblemSpec(UNIT_MODEL, 1.6, 0.5, 0.5, payoff)
    d = DiffusionSpec(0.0, math.sqrt(2.0), 1.0)
    # the running integral is still a grid Riemann sum; allow a small multiple of sigma*sqrt(dt)
    bias = 0.1 * math.sqrt(2.0) * math.sqrt(unit_batch.dt)
    for est in g_curve(spec, np.linspace(0.2, 3.0, 10), unit_batch):
        assert abs(est.value - oracle_g(d, est.b, 1.6, 0.5, payoff)) <= 1.5 * est.half_width + bias
