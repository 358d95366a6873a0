import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guaranteed_control.bilinear import P_BAR, U_STAR, ExplicitBilinearFeedback
from guaranteed_control.core import (
    Box,
    ModelError,
    Partition,
    Signal,
    Trajectory,
    build_test_schedule,
    integrate,
)
from guaranteed_control.oracle import ValueGradientOracle, exact_projection_oracle
from guaranteed_control.strategies import (
    ConstantFeedback,
    EpsilonFeedback,
    EpsilonStrategyConfig,
    UStarConfig,
    UStarFeedback,
    epsilon_net,
    extremal_shift,
    initial_state,
    simulate_closed_loop,
    ue_feedback_block,
    ustar_feedback_block,
)

ZERO_SHIFT = exact_projection_oracle("zero")


def block_signal(values, steps):
    return Signal(np.linspace(0, 1, steps + 1), np.asarray(values, float))


# --- epsilon nets --------------------------------------------------------------


def test_epsilon_net_examples():
    np.testing.assert_array_equal(epsilon_net(Box([-1], [1]), 1.0)[:, 0], [-1, 0, 1])
    fs = np.array([[0.2, 0.1], [0.5, -0.3]])
    from guaranteed_control.core import FiniteSet
    np.testing.assert_array_equal(epsilon_net(FiniteSet(fs), 0.01), fs)
    np.testing.assert_array_equal(epsilon_net(Box([-1, -1], [1, 1]), 2.0), P_BAR)
    with pytest.raises(ModelError):
        epsilon_net(Box([0], [0]), 0.1)


@given(st.floats(0.05, 2.0), st.lists(st.floats(-1, 1), min_size=2, max_size=2))
def test_epsilon_net_covering_radius(eps, point):
    net = epsilon_net(Box([-1, -1], [1, 1]), eps)
    assert np.linalg.norm(net - np.asarray(point), axis=1).min() <= eps * np.sqrt(2) / 2 + 1e-12


# --- extremal shift ----------------------------------------------------------------


def test_extremal_shift_example(bilinear):
    u = extremal_shift(bilinear, 0.3, [0.5, 0.0], [0.0, 1.0], P_BAR, [1.0, 1.0])
    assert u[1] == -1.0


def test_extremal_shift_zero_vector_takes_first(bilinear):
    u = extremal_shift(bilinear, 0.3, [0.5, 0.0], [0.0, 0.0], P_BAR, [1.0, 1.0])
    np.testing.assert_array_equal(u, P_BAR[0])


# --- multi-test blocks ---------------------------------------------------------------


def test_ue_first_block_has_test_tail(bilinear):
    part = Partition.uniform(0, 1, 10)
    cfg = EpsilonStrategyConfig(bilinear, 0.2, [[1, 1]], P_BAR, ZERO_SHIFT, u_star=[0, 0])
    sched = build_test_schedule(part, cfg.eps, 1)
    sig, _ = ue_feedback_block(cfg, initial_state(cfg, [0, 0], 0.0), Trajectory.point(0, [0, 0]),
                               part, sched, 0)
    np.testing.assert_allclose(sig.breakpoints, [0.0, 0.08, 0.1])
    np.testing.assert_array_equal(sig.values, [[0, 0], [1, 1]])


def test_ue_test_instants_survive_equal_controls(bilinear):
    # u_* equals the test control: the window start must remain a breakpoint
    part = Partition.uniform(0, 1, 10)
    cfg = EpsilonStrategyConfig(bilinear, 0.2, [[1, 1]], P_BAR, ZERO_SHIFT, u_star=[1, 1])
    sched = build_test_schedule(part, cfg.eps, 1)
    sig, _ = ue_feedback_block(cfg, initial_state(cfg, [0, 0], 0.0), Trajectory.point(0, [0, 0]),
                               part, sched, 0)
    assert 0.08 == pytest.approx(sig.breakpoints[1])


def test_ue_zero_shift_takes_first_shift_point(bilinear):
    part = Partition.uniform(0, 1, 10)
    cfg = EpsilonStrategyConfig(bilinear, 0.2, [[1, 1]], P_BAR, ZERO_SHIFT, u_star=[1, 1])
    fb = EpsilonFeedback(cfg)
    run = simulate_closed_loop(bilinear, part, fb, Signal.constant([1, 1], 0, 1), [0.2, 0])
    for i, u in enumerate(fb.state.controls[1:], 1):
        np.testing.assert_array_equal(u, P_BAR[0])
    assert run.trajectory.t_end == 1.0


def test_ue_config_validation(bilinear):
    with pytest.raises(ModelError):
        EpsilonStrategyConfig(bilinear, 1.5, [[1, 1]], P_BAR, ZERO_SHIFT)
    with pytest.raises(ModelError):
        EpsilonStrategyConfig(bilinear, 0.1, [[2, 1]], P_BAR, ZERO_SHIFT)


# --- single-test blocks ----------------------------------------------------------------


def test_ustar_first_block_constant(bilinear):
    part = Partition.uniform(0, 1, 10)
    cfg = UStarConfig(bilinear, P_BAR, ZERO_SHIFT, u_star=[1, 1])
    sig, _ = ustar_feedback_block(cfg, initial_state(cfg, [0, 0], 0.0), Trajectory.point(0, [0, 0]), part, 0)
    np.testing.assert_array_equal(sig.breakpoints, [0.0, 0.1])
    np.testing.assert_array_equal(sig.values, [[1, 1]])


def test_ustar_identifies_from_previous_control(bilinear):
    part = Partition.uniform(0, 1, 10)
    cfg = UStarConfig(bilinear, P_BAR, ZERO_SHIFT, u_star=[1, 1])
    state = initial_state(cfg, [0.5, 0], 0.0)
    tr = integrate(bilinear, 0.0, [0.5, 0], Signal.constant([1, 1], 0, 0.1),
                   Signal.constant([1, 1], 0, 0.1), 8)
    sig, new = ustar_feedback_block(cfg, state, tr, part, 1)
    np.testing.assert_array_equal(new.v_bars[0][1], [1, 1])
    np.testing.assert_array_equal(sig.values[0], P_BAR[0])  # zero shift -> first of P_bar
    assert sig.breakpoints.size == 2  # no test tail


# --- closed loop ------------------------------------------------------------------------


def test_constant_feedback_matches_integrate(bilinear):
    part = Partition.uniform(0, 1, 7)
    v = Signal([0, 0.3, 1.0], [[1, -1], [-1, 1]])
    run = simulate_closed_loop(bilinear, part, ConstantFeedback([0.5, -1]), v, [0.6, 0.2], 6)
    ref = integrate(bilinear, 0.0, [0.6, 0.2], Signal.constant([0.5, -1], 0, 1), v, 6)
    np.testing.assert_allclose(run.trajectory.final, ref.final, atol=1e-12)
    assert run.control == Signal.constant([0.5, -1], 0, 1)


def test_explicit_feedback_against_constant_disturbance(bilinear):
    part = Partition.uniform(0, 1, 100)
    run = simulate_closed_loop(bilinear, part, ExplicitBilinearFeedback(), Signal.constant([1, 1], 0, 1), [0, 0])
    assert run.trajectory.final[1] <= -0.45


def test_closed_loop_is_deterministic(bilinear, coarse_table):
    part = Partition.uniform(0, 1, 20)
    cfg = UStarConfig(bilinear, P_BAR, ValueGradientOracle(coarse_table), 4, U_STAR)
    v = block_signal(P_BAR[[0, 3, 1, 2, 3] * 4], 20)
    a = simulate_closed_loop(bilinear, part, UStarFeedback(cfg), v, [0, 0], 4)
    b = simulate_closed_loop(bilinear, part, UStarFeedback(cfg), v, [0, 0], 4)
    assert a.trajectory.states.tobytes() == b.trajectory.states.tobytes()
    assert a.control == b.control


def test_feedback_must_cover_block(bilinear):
    class Short(ConstantFeedback):
        def block(self, i, history):
            return Signal.constant(self.u0, self.part.times[i], self.part.times[i + 1] - 0.01)

    with pytest.raises(ModelError):
        simulate_closed_loop(bilinear, Partition.uniform(0, 1, 5), Short([1, 1]),
                             Signal.constant([1, 1], 0, 1), [0, 0])


# --- properties --------------------------------------------------------------------------

blocks = st.lists(st.integers(0, 3), min_size=20, max_size=20)


def _feedbacks(bilinear, table, kind):
    oracle = ValueGradientOracle(table)
    if kind == "ustar":
        cfg = UStarConfig(bilinear, P_BAR, oracle, 4, U_STAR)
        return UStarFeedback(cfg), cfg
    cfg = EpsilonStrategyConfig(bilinear, 0.1, [[1, 1]], P_BAR, oracle, 4, U_STAR)
    return EpsilonFeedback(cfg), cfg


@settings(max_examples=15)
@given(blocks, blocks, st.integers(1, 18), st.sampled_from(["ustar", "ubar"]))
def test_nonanticipation(bilinear, coarse_table, first, second, cut, kind):
    part = Partition.uniform(0, 1, 20)
    v1 = block_signal(P_BAR[first], 20)
    v2 = block_signal(P_BAR[first[:cut] + second[cut:]], 20)
    fa, _ = _feedbacks(bilinear, coarse_table, kind)
    fb, _ = _feedbacks(bilinear, coarse_table, kind)
    a = simulate_closed_loop(bilinear, part, fa, v1, [0, 0], 4)
    b = simulate_closed_loop(bilinear, part, fb, v2, [0, 0], 4)
    tau = part.times[cut]
    ra, rb = a.trajectory.restrict(tau), b.trajectory.restrict(tau)
    assert ra == rb
    # controls through block `cut` depend only on the history up to tau_cut
    assert a.control.restrict(0, part.times[cut + 1]) == b.control.restrict(0, part.times[cut + 1])


@settings(max_examples=15)
@given(blocks, st.sampled_from(["ustar", "ubar"]))
def test_admissibility_and_model_replay(bilinear, coarse_table, idx, kind):
    part = Partition.uniform(0, 1, 20)
    fb, cfg = _feedbacks(bilinear, coarse_table, kind)
    run = simulate_closed_loop(bilinear, part, fb, block_signal(P_BAR[idx], 20), [0, 0], 4)
    allowed = [tuple(U_STAR)] + [tuple(u) for u in P_BAR]
    if kind == "ubar":
        allowed += [tuple(u) for u in cfg.test_controls]
    assert all(tuple(u) in allowed for u in run.control.values)
    # replaying the stored useful controls and surrogates reproduces the y-model
    state = fb.state
    us = np.array(state.controls)
    vs = np.array([cfg.v_star] + [vb for _, vb in state.v_bars])
    n = len(us) - 1  # y is defined up to tau_n
    u_sig = Signal(part.times[:n + 1], us[:n])
    v_sig = Signal(part.times[:n + 1], vs[:n])
    y = integrate(bilinear, 0.0, [0, 0], u_sig, v_sig, cfg.substeps)
    np.testing.assert_allclose(y.final, state.y_traj.final, atol=1e-10)
    assert y.t_end == pytest.approx(state.y_traj.t_end)


@settings(max_examples=15)
@given(st.lists(st.integers(0, 3), min_size=40, max_size=40))
def test_surrogate_fidelity_finite_tests(bilinear, coarse_table, idx):
    steps = 40
    part = Partition.uniform(0, 1, steps)
    fb, cfg = _feedbacks(bilinear, coarse_table, "ubar")
    run = simulate_closed_loop(bilinear, part, fb, block_signal(P_BAR[idx], steps), [0.3, 0], 4)
    P = bilinear.control_set.enumerate()
    for i, (t, vb) in enumerate(fb.v_bars, 1):
        x = run.trajectory.at(t)
        truth = P_BAR[idx[i - 1]]  # value on the block that just ended
        gap = np.abs(bilinear(t, x[None, :], P, vb[None, :]) - bilinear(t, x[None, :], P, truth[None, :]))
        assert gap.max() <= 4 * part.diam
