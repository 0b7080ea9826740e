import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import special

from bailout.errors import BatchTooLarge, ZeroBarrierUnboundedVariation
from bailout.levy_model import LevyModel
from bailout.path_engine import (
    first_passage,
    load_batch,
    reflect_double,
    reflect_upper,
    save_batch,
    simulate_batch,
)

from conftest import regime_model

skeletons = arrays(np.float64, st.integers(0, 40), elements=st.floats(-3, 3, allow_subnormal=False))


def test_deterministic_drift_increments():
    batch = simulate_batch(LevyModel(1.0, 0.0), 0.5, 1.0, 3, 7)
    np.testing.assert_array_equal(batch.increments, np.full((3, 2), 0.5))


def test_brownian_terminal_mean():
    m = 100_000
    batch = simulate_batch(LevyModel.brownian(0.0, 1.0), 0.1, 10.0, m, 1)
    xT = batch.increments.sum(axis=1)
    assert abs(xT.mean()) <= 3 * math.sqrt(10) / math.sqrt(m)
    assert xT.var() == pytest.approx(10.0, rel=0.02)


def test_regime_model_first_moment():
    model = regime_model(1.5)
    batch = simulate_batch(model, 0.05, 50.0, 10_000, 3)
    x1 = batch.increments[:, :20].sum(axis=1)
    expect = 1.5 + 0.8 * special.gamma(1.5) - 0.2 * math.sqrt(2 / math.pi)
    se = math.sqrt(model.variance() / x1.size)
    assert abs(x1.mean() - expect) <= 3 * se
    # per-step means over the whole horizon, a much tighter check
    assert abs(batch.increments.mean() / 0.05 - expect) <= 3 * math.sqrt(model.variance() / (50 * 10_000))


def test_reproducible_and_thread_independent():
    model = regime_model(1.1)
    a = simulate_batch(model, 0.05, 5.0, 64, 99, threads=1)
    b = simulate_batch(model, 0.05, 5.0, 64, 99, threads=4)
    np.testing.assert_array_equal(a.increments, b.increments)
    c = simulate_batch(model, 0.05, 5.0, 64, 100)
    assert not np.array_equal(a.increments, c.increments)


def test_path_depends_only_on_seed_and_index():
    model = regime_model(1.5)
    small = simulate_batch(model, 0.05, 5.0, 5, 42)
    big = simulate_batch(model, 0.05, 5.0, 50, 42)
    np.testing.assert_array_equal(small.increments, big.increments[:5])


def test_streams_are_distinct():
    model = LevyModel.brownian(0, 1)
    a = simulate_batch(model, 0.1, 1.0, 4, 1, stream=0)
    b = simulate_batch(model, 0.1, 1.0, 4, 1, stream=1)
    assert not np.array_equal(a.increments, b.increments)


def test_memory_guard():
    with pytest.raises(BatchTooLarge):
        simulate_batch(LevyModel.brownian(0, 1), 0.01, 100.0, 1000, 1, max_bytes=1_000_000)


def test_horizon_must_be_multiple_of_dt():
    with pytest.raises(ValueError):
        simulate_batch(LevyModel.brownian(0, 1), 0.3, 1.0, 2, 1)


def test_bridge_leaves_increments_unchanged():
    model = regime_model(1.5)
    plain = simulate_batch(model, 0.05, 2.0, 20, 8)
    bridged = simulate_batch(model, 0.05, 2.0, 20, 8, bridge=True)
    np.testing.assert_array_equal(plain.increments, bridged.increments)
    assert bridged.bridged and not plain.bridged


def test_bridge_extremes_bracket_endpoints():
    model = LevyModel.brownian(0.3, 0.8)
    batch = simulate_batch(model, 0.1, 2.0, 200, 4, bridge=True)
    g = batch.increments
    assert np.all(batch.bridge_max >= np.maximum(g, 0.0))
    assert np.all(batch.bridge_min <= np.minimum(g, 0.0))


def test_bridge_max_law():
    model = LevyModel.brownian(0.0, 1.0)
    batch = simulate_batch(model, 1.0, 200.0, 200, 5, bridge=True)
    g, top = batch.increments.ravel(), batch.bridge_max.ravel()
    # averaging bridge maxima over the endpoint gives the running max over [0, 1], E M = sqrt(2 / pi)
    assert top.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=4 * 0.6 / math.sqrt(g.size))


def test_save_load_roundtrip(tmp_path):
    batch = simulate_batch(regime_model(1.5), 0.05, 1.0, 7, 123, stream=2)
    save_batch(batch, tmp_path / "b.bin")
    back = load_batch(tmp_path / "b.bin")
    np.testing.assert_array_equal(back.increments, batch.increments)
    assert (back.master_seed, back.n_paths, back.dt, back.horizon, back.stream) == (123, 7, 0.05, 1.0, 2)


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"x" * 64)
    with pytest.raises(ValueError):
        load_batch(p)


def test_reflect_upper_hand_example():
    y = reflect_upper(np.array([1.0, -2.0, 3.0]), 0.5, 1.0).y
    np.testing.assert_array_equal(y, [0.5, 1.0, -1.0, 1.0])


def test_reflect_upper_initial_overshoot():
    assert reflect_upper(np.array([]), 2.0, 1.0).y[0] == 1.0


def test_reflect_upper_infinite_barrier():
    inc = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(reflect_upper(inc, 0.1, math.inf).y, 0.1 + np.concatenate([[0], np.cumsum(inc)]))


def test_reflect_double_hand_example():
    c = reflect_double(np.array([1.0, -2.0, 3.0]), 0.5, 1.0)
    np.testing.assert_array_equal(c.u, [0.5, 1.0, 0.0, 1.0])
    np.testing.assert_array_equal(c.l_cum, [0.0, 0.5, 0.5, 2.5])
    np.testing.assert_array_equal(c.r_cum, [0.0, 0.0, 1.0, 1.0])


def test_reflect_double_initial_lumps():
    c = reflect_double(np.array([]), 3.0, 1.0)
    assert (c.u[0], c.l_cum[0], c.r_cum[0]) == (1.0, 2.0, 0.0)
    c = reflect_double(np.array([]), -0.5, 1.0)
    assert (c.u[0], c.l_cum[0], c.r_cum[0]) == (0.0, 0.0, 0.5)


def test_zero_barrier_needs_bounded_variation():
    with pytest.raises(ZeroBarrierUnboundedVariation):
        reflect_double(np.array([0.1]), 0.0, 0.0, model=LevyModel.brownian(0, 1))
    reflect_double(np.array([0.1]), 0.0, 0.0, model=LevyModel(1.0, 0.0))


def test_first_passage_examples():
    y = np.array([0.5, 1.0, -1.0, 1.0])
    assert first_passage(y, 0.0) == 2
    assert first_passage(np.array([1.0, 2.0]), 0.0) is None
    touching = np.array([1.0, 0.0, 0.5])
    assert first_passage(touching, 0.0) is None
    assert first_passage(touching, 0.0, strict=False) == 1


@given(inc=skeletons, x0=st.floats(-2, 4), b=st.floats(0, 3))
def test_double_reflection_invariants(inc, x0, b):
    c = reflect_double(inc, x0, b)
    assert np.all(c.u >= 0) and np.all(c.u <= b)
    assert np.all(np.diff(c.l_cum) >= 0) and np.all(np.diff(c.r_cum) >= 0)
    assert c.l_cum[0] >= 0 and c.r_cum[0] >= 0
    x = x0 + np.concatenate([[0.0], np.cumsum(inc)])
    np.testing.assert_allclose(c.u, x - c.l_cum + c.r_cum, rtol=0, atol=1e-12 * (1 + np.abs(x).max() * len(x)))


@given(inc=skeletons, x0=st.floats(0, 3), b=st.floats(0, 3), eps=st.floats(1e-6, 1.0))
def test_epsilon_coupling(inc, x0, b, eps):
    lo = reflect_double(inc, x0, b).u
    hi = reflect_double(inc, x0, b + eps).u
    d = hi - lo
    slack = 1e-12 * (1 + len(inc))
    assert np.all(d >= -slack) and np.all(d <= eps + slack)


@given(inc=skeletons, x0=st.floats(-1, 3), dx=st.floats(0, 2), b=st.floats(0, 3))
def test_monotone_in_start(inc, x0, dx, b):
    a = reflect_double(inc, x0, b)
    c = reflect_double(inc, x0 + dx, b)
    assert np.all(c.u >= a.u - 1e-12)
    assert np.all(c.l_cum >= a.l_cum - 1e-12)
    assert np.all(c.r_cum <= a.r_cum + 1e-12)


@given(inc=skeletons, x0=st.floats(0, 3))
def test_lower_reflection_matches_running_min(inc, x0):
    c = reflect_double(inc, x0, math.inf)
    x = x0 + np.concatenate([[0.0], np.cumsum(inc)])
    expect = np.maximum.accumulate(np.maximum(-x, 0.0))
    np.testing.assert_allclose(c.r_cum, expect, atol=1e-9)
    assert np.all(c.l_cum == 0)


@given(inc=skeletons, x0=st.floats(-1, 3), b=st.floats(0, 3))
def test_upper_reflection_below_barrier(inc, x0, b):
    y = reflect_upper(inc, x0, b).y
    assert np.all(y <= b + 1e-12)
