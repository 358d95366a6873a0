import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from guaranteed_control.bilinear import (
    P_BAR,
    ExplicitBilinearFeedback,
    analytic_quasi_value,
    analytic_value,
    explicit_feedback_block,
)
from guaranteed_control.core import Box, ModelError, Partition, Signal, Trajectory, integrate
from guaranteed_control.inversion import check_assumption1, check_saddle
from guaranteed_control.strategies import simulate_closed_loop

PART = Partition.uniform(0, 1, 10)


def history(dx):
    return Trajectory([0.0, 0.1], [[0.2, 0.1], np.add([0.2, 0.1], dx)])


@pytest.mark.parametrize("u_prev,dx,expected", [
    ((1, 1), (0.1, 0.02), (1, -1)),
    ((1, 1), (0.0, 0.0), (1, 1)),
    ((-1, 1), (0.1, -0.02), (-1, 1)),
])
def test_explicit_feedback_examples(u_prev, dx, expected):
    np.testing.assert_array_equal(explicit_feedback_block(history(dx), u_prev, PART, 1), expected)


def test_explicit_feedback_errors():
    with pytest.raises(ModelError):
        explicit_feedback_block(history((0, 0)), (1, 1), PART, 0)
    with pytest.raises(ModelError):
        explicit_feedback_block(history((0, 0)), (0, 1), PART, 1)


def test_analytic_value_constant():
    assert analytic_quasi_value() == -0.5
    assert analytic_value(0.0, [0.0, 0.0]) == -0.5


def test_optimal_steering_integral(bilinear):
    # dx1 = +1, dx2 = -x1: u = v componentwise for x1 and u2 = -v2
    v = Signal([0, 0.3, 0.6, 1.0], [[1, 1], [-1, -1], [1, -1]])
    u = Signal([0, 0.3, 0.6, 1.0], [[1, -1], [-1, 1], [1, 1]])
    tr = integrate(bilinear, 0.0, [0, 0], u, v, 8)
    assert tr.final[1] == pytest.approx(-0.5, abs=1e-12)


def test_explicit_first_block_uses_u_star(bilinear):
    fb = ExplicitBilinearFeedback()
    fb.reset([0, 0], PART)
    np.testing.assert_array_equal(fb.block(0, Trajectory.point(0, [0, 0])).values[0], [1, 1])


@given(st.lists(st.integers(0, 3), min_size=25, max_size=25))
def test_explicit_monotonicity_up_to_lag(idx):
    from guaranteed_control.bilinear import make_bilinear

    dyn = make_bilinear()
    steps = 25
    part = Partition.uniform(0, 1, steps)
    v = Signal(part.times, P_BAR[idx])
    run = simulate_closed_loop(dyn, part, ExplicitBilinearFeedback(), v, [0, 0], 4)
    x = np.array([run.trajectory.at(t) for t in part.times])
    for i in range(2, steps):
        same = P_BAR[idx[i]] == P_BAR[idx[i - 1]]
        dx = x[i + 1] - x[i]
        if same[0]:
            assert dx[0] >= -1e-12
        # v2 is only visible through x2 while x1 > 0 on the previous block
        if same[1] and x[i - 1, 0] > 0 and x[i, 0] > 0:
            assert dx[1] <= 1e-12


@given(st.floats(1e-3, 1.2), st.floats(-1, 1), st.floats(0, 1))
def test_saddle_fails_with_gap_x1(x1, x2, t):
    from guaranteed_control.bilinear import make_bilinear

    rep = check_saddle(make_bilinear(), [(t, np.array([x1, x2]), np.array([0.0, 1.0]))])
    assert not rep.passed
    assert rep.worst_gap == pytest.approx(x1, abs=1e-12)


def test_assumption1_on_listed_samples(bilinear):
    samples = [(t, np.array([a, b])) for t in (0.0, 0.5) for a in (0.0, 0.25, 0.5, 1.0) for b in (-1, 0, 1)]
    rep = check_assumption1(bilinear, [[1, 1]], samples, Box([-1, -1], [1, 1], 5).enumerate())
    assert rep.passed
