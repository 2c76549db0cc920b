"""Incremental growth: Schur add-updates, IV caches, and reset policy.

The oracle for every chained state is a direct assembly of the same
coalition; cached integrated variance is checked against the cache-free
recomputation the module itself exposes.
"""

import numpy as np
import pytest

from gpdv import (
    InputError,
    KernelSpec,
    QuadratureSet,
    ResetPolicy,
    TrendBasis,
    add_point,
    assemble,
    condition_estimate,
    grid_quadrature,
    initial_state,
    integrated_variance,
    integrated_variance_of,
    iv_step,
    loo_residual_system,
    points_quadrature,
    rebuild,
)

QUAD = grid_quadrature(0.0, 6.0, 64)


def _chain(kernel, trend, X, order, quadrature=QUAD, policy=None):
    state = initial_state(kernel, trend, X, quadrature, policy)
    for i in order:
        state = add_point(state, i)
    return state


def test_quadrature_validation():
    with pytest.raises(InputError):
        QuadratureSet(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(InputError):
        QuadratureSet([[0.0], [1.0]], [0.5])
    with pytest.raises(InputError):
        QuadratureSet([[0.0], [1.0]], [0.9, 0.2])
    with pytest.raises(InputError):
        QuadratureSet([[0.0], [1.0]], [-0.5, 1.5])
    q = QuadratureSet([[0.0], [1.0]], [0.25, 0.75])
    assert q.size == 2


def test_grid_quadrature_shape_and_weights():
    q = grid_quadrature(-1.0, 3.0, 32)
    assert q.points.shape == (32, 1)
    assert q.points[0, 0] == -1.0 and q.points[-1, 0] == 3.0
    np.testing.assert_allclose(q.weights, np.full(32, 1.0 / 32))
    with pytest.raises(InputError):
        grid_quadrature(0.0, 0.0, 16)
    with pytest.raises(InputError):
        grid_quadrature(0.0, 1.0, 1)


def test_points_quadrature_uniform_weights():
    q = points_quadrature(np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]))
    assert q.points.shape == (3, 2)
    assert q.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_reset_policy_validation():
    ResetPolicy(max_condition=10.0, max_chained_updates=0)
    with pytest.raises(InputError):
        ResetPolicy(max_condition=0.0)
    with pytest.raises(InputError):
        ResetPolicy(max_chained_updates=-1)
    with pytest.raises(InputError):
        ResetPolicy(max_abs_iv_step=0.0)


def test_empty_state_carries_the_prior():
    kernel = KernelSpec(variance=2.0, nugget=0.01)
    state = initial_state(kernel, TrendBasis("simple"), [[0.0], [1.0]], QUAD)
    assert state.system.m == 0
    assert integrated_variance(state) == pytest.approx(2.0, abs=1e-12)
    assert condition_estimate(state) == 1.0
    assert state.updates_since_reset == 0


def test_initial_state_rejects_dimension_mismatch():
    with pytest.raises(InputError):
        initial_state(
            KernelSpec(), TrendBasis("simple"), np.zeros((3, 2)), QUAD
        )


def test_chained_adds_match_direct_assembly():
    rng = np.random.default_rng(101)
    for trend_name in ("simple", "ordinary", "linear"):
        kernel = KernelSpec("matern-3/2", lengthscale=1.0, variance=1.0, nugget=0.01)
        trend = TrendBasis(trend_name, 1)
        X = rng.uniform(0, 6, size=(18, 1))
        order = rng.permutation(18)
        state = _chain(kernel, trend, X, order)
        direct = assemble(kernel, trend, X, order)
        assert state.system.active == tuple(int(i) for i in order)
        assert np.max(np.abs(state.system.inverse - direct.inverse)) < 1e-8
        np.testing.assert_allclose(state.system.matrix, direct.matrix, atol=1e-12)


def test_iv_cache_tracks_recomputation():
    # spec'd drift bound between the cache and a fresh evaluation
    rng = np.random.default_rng(103)
    kernel = KernelSpec(lengthscale=1.5, variance=1.2, nugget=0.05)
    X = rng.uniform(0, 6, size=(25, 1))
    state = initial_state(kernel, TrendBasis("ordinary"), X, QUAD)
    for i in range(25):
        state = add_point(state, i)
        direct = integrated_variance_of(state.system, QUAD)
        assert abs(state.iv_cache - direct) <= 1e-6 * max(direct, 1e-30)


def test_iv_decreases_along_simple_trend_chains():
    rng = np.random.default_rng(107)
    for trial in range(5):
        kernel = KernelSpec(
            ("squared-exponential", "matern-3/2", "matern-5/2")[trial % 3],
            lengthscale=float(rng.uniform(0.5, 2.0)),
            variance=1.0,
            nugget=float(rng.uniform(0.005, 0.05)),
        )
        X = rng.uniform(0, 6, size=(20, 1))
        state = initial_state(kernel, TrendBasis("simple"), X, QUAD)
        prev = state.iv_cache
        for i in rng.permutation(20):
            state, iv = iv_step(state, int(i))
            assert iv <= prev + 1e-8
            prev = iv


def test_iv_decreases_after_the_border_appears():
    # monotone over the bordered stretch; the simple-to-bordered switch
    # itself is a model change and is exempt
    rng = np.random.default_rng(109)
    kernel = KernelSpec(nugget=0.01)
    trend = TrendBasis("linear", 1)
    X = rng.uniform(0, 6, size=(16, 1))
    state = initial_state(kernel, trend, X, QUAD)
    prev = state.iv_cache
    prev_border = state.system.border_dim
    for i in range(16):
        state, iv = iv_step(state, i)
        if prev_border > 0:  # skip the simple-to-bordered switch itself
            assert iv <= prev + 1e-8
        prev = iv
        prev_border = state.system.border_dim
    assert state.system.border_dim > 0  # the bordered stretch was exercised


def test_border_switches_on_at_trend_size():
    kernel = KernelSpec(nugget=0.01)
    trend = TrendBasis("linear", 1)  # p = 2
    X = np.array([[0.5], [2.0], [3.5], [5.0]])
    state = initial_state(kernel, trend, X, QUAD)
    state = add_point(state, 0)
    assert state.system.border_dim == 0  # one site cannot carry p = 2
    state = add_point(state, 1)
    assert state.system.border_dim == 2
    assert state.updates_since_reset == 0  # transition is a direct rebuild
    state = add_point(state, 2)
    assert state.system.border_dim == 2
    assert state.updates_since_reset == 1


def test_duplicate_sites_fall_back_to_simple_form_until_distinct():
    # two coincident sites cannot carry a linear border; the third,
    # distinct one brings it back
    kernel = KernelSpec(nugget=0.1)
    trend = TrendBasis("linear", 1)
    X = np.array([[0.0], [0.0], [4.0]])
    state = initial_state(kernel, trend, X, QUAD)
    state = add_point(state, 0)
    state = add_point(state, 1)
    assert state.system.border_dim == 0
    state = add_point(state, 2)
    assert state.system.border_dim == 2


def test_add_point_input_errors():
    state = initial_state(KernelSpec(), TrendBasis("simple"), [[0.0], [1.0]], QUAD)
    state = add_point(state, 0)
    with pytest.raises(InputError):
        add_point(state, 0)
    with pytest.raises(InputError):
        add_point(state, 5)


def test_degenerate_pivot_falls_back_to_direct_assembly():
    # a duplicate site with a sub-floor nugget makes the growth pivot
    # ~2e-14 <= 1e-12, yet the grown gram is still factorizable
    kernel = KernelSpec(nugget=1e-14)
    trend = TrendBasis("simple")
    X = [[0.0], [0.0], [3.0]]
    state = initial_state(kernel, trend, X, QUAD)
    state = add_point(state, 0)
    state = add_point(state, 1)
    assert state.system.active == (0, 1)
    assert state.updates_since_reset == 0  # completed by rebuild, not update
    direct = assemble(kernel, trend, X, [0, 1])
    assert np.max(np.abs(state.system.inverse - direct.inverse)) < 1e-10
    assert state.iv_cache == pytest.approx(
        integrated_variance_of(direct, QUAD), rel=1e-9
    )
    state = add_point(state, 2)
    assert state.system.active == (0, 1, 2)


def test_truly_singular_growth_still_breaks_down():
    from gpdv import NumericalBreakdownError

    state = initial_state(
        KernelSpec(nugget=0.0), TrendBasis("simple"), [[1.0], [1.0]], QUAD
    )
    state = add_point(state, 0)
    with pytest.raises(NumericalBreakdownError):
        add_point(state, 1)


def test_add_then_downdate_round_trip():
    rng = np.random.default_rng(113)
    kernel = KernelSpec(lengthscale=1.2, nugget=0.01)
    X = rng.uniform(0, 6, size=(12, 1))
    state = _chain(kernel, TrendBasis("ordinary"), X, range(10))
    parent = state.system
    grown = add_point(state, 11).system
    back = loo_residual_system(grown, 11)
    assert back.active == parent.active
    assert np.max(np.abs(back.inverse - parent.inverse)) < 1e-8


def test_rebuild_refreshes_counters_not_results():
    rng = np.random.default_rng(127)
    X = rng.uniform(0, 6, size=(10, 1))
    state = _chain(KernelSpec(nugget=0.01), TrendBasis("ordinary"), X, range(10))
    assert state.updates_since_reset > 0
    fresh = rebuild(state)
    assert fresh.updates_since_reset == 0
    assert fresh.system.active == state.system.active
    assert fresh.iv_cache == pytest.approx(state.iv_cache, rel=1e-9)
    assert np.max(np.abs(fresh.system.inverse - state.system.inverse)) < 1e-7


def test_update_counter_honors_the_chain_cap():
    rng = np.random.default_rng(131)
    X = rng.uniform(0, 6, size=(9, 1))
    policy = ResetPolicy(max_chained_updates=3)
    state = initial_state(KernelSpec(nugget=0.01), TrendBasis("simple"), X, QUAD, policy)
    for i in range(9):
        state = add_point(state, i)
        assert state.updates_since_reset <= 3


def test_condition_trigger_forces_rebuilds():
    rng = np.random.default_rng(137)
    X = rng.uniform(0, 6, size=(8, 1))
    tight = ResetPolicy(max_condition=1.0)  # any multi-site system trips it
    state = initial_state(KernelSpec(nugget=0.01), TrendBasis("simple"), X, QUAD, tight)
    loose_state = initial_state(KernelSpec(nugget=0.01), TrendBasis("simple"), X, QUAD)
    for i in range(8):
        state = add_point(state, i)
        loose_state = add_point(loose_state, i)
        if state.system.m >= 2:  # a 1-site system sits exactly at cond 1
            assert state.updates_since_reset == 0
    # forced rebuilds leave the numbers intact
    assert state.iv_cache == pytest.approx(loose_state.iv_cache, rel=1e-9)


def test_iv_step_trigger_forces_rebuilds():
    rng = np.random.default_rng(139)
    X = rng.uniform(0, 6, size=(8, 1))
    policy = ResetPolicy(max_abs_iv_step=1e-12)  # every real step exceeds this
    state = initial_state(KernelSpec(nugget=0.01), TrendBasis("simple"), X, QUAD, policy)
    for i in range(8):
        state = add_point(state, i)
        assert state.updates_since_reset == 0


def test_multidimensional_quadrature_from_points():
    rng = np.random.default_rng(149)
    X = rng.uniform(0, 4, size=(14, 3))
    quad = points_quadrature(rng.uniform(0, 4, size=(40, 3)))
    kernel = KernelSpec("matern-5/2", lengthscale=2.0, nugget=0.02)
    state = initial_state(kernel, TrendBasis("ordinary", 3), X, quad)
    for i in range(14):
        state = add_point(state, i)
    direct = assemble(kernel, TrendBasis("ordinary", 3), X, range(14))
    assert np.max(np.abs(state.system.inverse - direct.inverse)) < 1e-8
    assert state.iv_cache == pytest.approx(
        integrated_variance_of(direct, quad), rel=1e-9
    )


def test_condition_estimate_grows_with_near_duplicates():
    X = np.array([[0.0], [3.0], [3.0 + 1e-7]])
    state = initial_state(KernelSpec(nugget=1e-8), TrendBasis("simple"), X, QUAD)
    state = add_point(state, 0)
    state = add_point(state, 1)
    mild = condition_estimate(state)
    state = add_point(state, 2)
    assert condition_estimate(state) > 100 * mild
