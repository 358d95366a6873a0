import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from guaranteed_control.bilinear import P_BAR, make_bilinear
from guaranteed_control.core import (
    Box,
    Dynamics,
    FiniteSet,
    ModelError,
    Partition,
    Signal,
    Trajectory,
    build_test_schedule,
    integrate,
)
from guaranteed_control.inversion import (
    CheckReport,
    check_assumption1,
    check_assumption2,
    check_saddle,
    divided_differences,
    identify_surrogate_multi,
    identify_surrogate_single,
    quotient_classes,
    state_samples,
    unit_directions,
)
from guaranteed_control.systems import get_system, make_cancel, make_normdiff

coord = st.floats(-1.2, 1.2, allow_nan=False)


def as_sets(qc):
    return {frozenset(map(tuple, qc.points[c])) for c in qc.classes}


# --- divided differences ------------------------------------------------------


def test_divided_differences_constant_and_linear():
    part = Partition.uniform(0, 1, 10)
    sched = build_test_schedule(part, 0.2, 3)
    t = np.unique(np.concatenate([part.times, sched.instants[1:-1].ravel()]))
    flat = Trajectory(t, np.ones((t.size, 2)))
    np.testing.assert_array_equal(divided_differences(flat, sched, 4), np.zeros((3, 2)))
    a = np.array([2.0, -3.0])
    lin = Trajectory(t, t[:, None] * a[None, :])
    np.testing.assert_allclose(divided_differences(lin, sched, 4), np.tile(a, (3, 1)), atol=1e-9)


def test_divided_differences_on_example_run(bilinear):
    part = Partition.uniform(0, 1, 10)
    sched = build_test_schedule(part, 0.1, 1)
    i = 6
    start = sched.window(i)[0]
    u = Signal.constant([1, 1], 0, 1)
    v = Signal([0, start, part.times[i], 1.0], [[1, 1], [1, 1], [1, 1]])
    tr = integrate(bilinear, 0.0, [0.5 - start, 0.0], u, v, 8)
    assert tr.at(start)[0] == pytest.approx(0.5)
    d = divided_differences(tr, sched, i)
    assert d.shape == (1, 2)
    np.testing.assert_allclose(d[0], [1.0, 0.5], atol=0.01)


def test_divided_differences_missing_sample():
    part = Partition.uniform(0, 1, 10)
    sched = build_test_schedule(part, 0.1, 1)
    tr = Trajectory(part.times, np.zeros((11, 1)))
    with pytest.raises(LookupError):
        divided_differences(tr, sched, 3)


# --- identification -------------------------------------------------------------


def single_q_system():
    def rhs(t, x, u, v):
        return np.asarray(u) * 0 + np.asarray(v) + np.asarray(x) * 0
    return Dynamics(1, 1, 1, rhs, Box([-1], [1], 3), FiniteSet([[0.7]]))


def test_identify_singleton_q():
    dyn = single_q_system()
    assert identify_surrogate_multi(dyn, 0.0, [0.0], [[1.0]], [[5.0]])[0] == 0.7
    assert identify_surrogate_single(dyn, 0.0, 0.1, [0.0], [3.0], [1.0])[0] == 0.7


def test_identify_multi_example(bilinear):
    x = np.array([0.5, 0.0])
    v = identify_surrogate_multi(bilinear, 0.3, x, [[1, 1]], [[1.0, -0.5]])
    np.testing.assert_array_equal(v, [1, -1])
    delta = np.array([6e-4, -8e-4])  # norm 1e-3
    v = identify_surrogate_multi(bilinear, 0.3, x, [[1, 1]], [[1.0, -0.5] + delta])
    np.testing.assert_array_equal(v, [1, -1])


def test_identify_single_example(bilinear):
    x_prev = np.array([0.4, 0.0])
    x = np.array([0.39, 0.01 * 0.395])  # x1 falls by 0.01, x2 rises at rate ~x1
    v = identify_surrogate_single(bilinear, 0.5, 0.51, x_prev, x, [1, 1])
    np.testing.assert_array_equal(v, [-1, 1])


def test_identify_single_zero_control_tie(bilinear):
    x = np.array([0.4, 0.2])
    v = identify_surrogate_single(bilinear, 0.5, 0.51, x, x, [0, 0])
    np.testing.assert_array_equal(v, bilinear.disturbance_set.enumerate()[0])


def test_identify_single_zero_step(bilinear):
    with pytest.raises(ModelError):
        identify_surrogate_single(bilinear, 0.5, 0.5, [0, 0], [0, 0], [1, 1])


def test_identify_needs_one_difference_per_test(bilinear):
    with pytest.raises(ModelError):
        identify_surrogate_multi(bilinear, 0.0, [0.5, 0], [[1, 1], [1, -1]], [[1, 0]])


@given(st.floats(0.05, 1.2), coord, st.integers(0, 3), st.floats(0, 1))
def test_identification_exact_on_separating_tests(x1, x2, k, t):
    dyn = make_bilinear()
    sign = 1.0 if k % 2 else -1.0
    x = np.array([x1, x2])
    v_true = P_BAR[k]
    d = dyn(t, x, np.array([1.0, 1.0]), v_true)[None, :]
    np.testing.assert_array_equal(identify_surrogate_multi(dyn, t, x, [[1, 1]], d), v_true)
    # the single-test variant sees the same slope under any nonzero control
    u = np.array([sign, -sign])
    slope = dyn(t, x, u, v_true)
    np.testing.assert_array_equal(
        identify_surrogate_single(dyn, t, t + 0.01, x, x + 0.01 * slope, u), v_true)


# --- quotient classes -------------------------------------------------------------


def test_quotient_classes_examples(bilinear):
    qc = quotient_classes(bilinear, 0.0, [0.5, 0], [1, 1])
    assert len(qc) == 4
    qc = quotient_classes(bilinear, 0.0, [0.0, 0], [1, 1])
    assert as_sets(qc) == {frozenset({(-1.0, -1.0), (-1.0, 1.0)}), frozenset({(1.0, -1.0), (1.0, 1.0)})}
    qc = quotient_classes(bilinear, 0.0, [0.7, 0.3], [0, 0])
    assert len(qc) == 1


@given(coord, coord, st.sampled_from([-1.0, -0.5, 0.0, 0.5, 1.0]), st.sampled_from([-1.0, 0.0, 1.0]),
       st.permutations(range(4)))
def test_quotient_classes_invariants(x1, x2, u1, u2, perm):
    dyn = make_bilinear()
    x, u = np.array([x1, x2]), np.array([u1, u2])
    qc = quotient_classes(dyn, 0.0, x, u)
    imgs = dyn(0.0, x[None, :], u[None, :], qc.points)
    cover = np.concatenate(qc.classes)
    assert sorted(cover.tolist()) == list(range(4))
    reps = []
    for c in qc.classes:
        spread = np.linalg.norm(imgs[c][:, None] - imgs[c][None, :], axis=-1).max()
        assert spread <= qc.tol_f
        reps.append(imgs[c[0]])
    for a in range(len(reps)):
        for b in range(a + 1, len(reps)):
            assert np.linalg.norm(reps[a] - reps[b]) > qc.tol_f
    shuffled = Dynamics(2, 2, 2, dyn.f, dyn.control_set, FiniteSet(P_BAR[list(perm)]))
    assert as_sets(quotient_classes(shuffled, 0.0, x, u)) == as_sets(qc)


# --- assumption 1 ----------------------------------------------------------------


def example_samples(x1_values=(0.0, 0.5, 1.0)):
    return [(t, np.array([a, b])) for t in (0.0, 0.5) for a in x1_values for b in (-0.5, 0.5)]


def test_assumption1_example_passes(bilinear):
    probes = Box([-1, -1], [1, 1], 5).enumerate()
    rep = check_assumption1(bilinear, [[1, 1]], example_samples(), probes)
    assert rep.passed and rep.n_violations == 0


def test_assumption1_additive_passes():
    dyn = make_cancel()
    rep = check_assumption1(dyn, [[0.5]], [(0.0, np.array([x])) for x in (-1, 0, 1)],
                            dyn.control_set.enumerate())
    assert rep.passed


def test_assumption1_normdiff_fails_at_unit_control():
    dyn = make_normdiff()
    rep = check_assumption1(dyn, [[0.0]], [(0.0, np.array([0.0]))], np.array([[1.0]]))
    assert not rep.passed
    np.testing.assert_array_equal(rep.witness["u"], [1.0])
    assert {rep.witness["v"][0], rep.witness["v_prime"][0]} == {-1.0, 1.0}


def test_assumption1_example_zero_test_fails(bilinear):
    rep = check_assumption1(bilinear, [[0, 0]], example_samples(), Box([-1, -1], [1, 1], 5).enumerate())
    assert not rep.passed


@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=4))
def test_assumption1_full_enumeration_always_passes(pts):
    dyn = make_bilinear(control_resolution=3)
    samples = [(0.0, np.array(p)) for p in pts]
    P = dyn.control_set.enumerate()
    assert check_assumption1(dyn, P, samples, P).passed


# --- assumption 2 ----------------------------------------------------------------


def a2_samples(n=2):
    xs = state_samples([-1, -1], [1, 1], 5, [0.0, 0.5])
    return [(t, x, s) for t, x in xs for s in unit_directions(n, 8)]


def test_assumption2_example_passes(bilinear):
    rep = check_assumption2(bilinear, P_BAR, a2_samples())
    assert rep.passed, rep.witness


def test_assumption2_u_independent_passes():
    dyn = get_system("zero")
    rep = check_assumption2(dyn, dyn.control_set.enumerate(), a2_samples())
    assert rep.passed


def test_assumption2_zero_control_fails(bilinear):
    rep = check_assumption2(bilinear, [[0, 0]], a2_samples())
    assert not rep.passed
    assert rep.witness["part"] == "a"
    # the failing direction includes s = (0, 1) at some x1 > 0
    hit = check_assumption2(bilinear, [[0, 0]], [(0.0, np.array([0.5, 0.0]), np.array([0.0, 1.0]))])
    assert not hit.passed and hit.worst_gap == pytest.approx(0.5)


# --- saddle ------------------------------------------------------------------------


def test_saddle_separable_passes():
    dyn = get_system("separable")
    rep = check_saddle(dyn, a2_samples())
    assert rep.passed and abs(rep.worst_gap) <= 1e-12


def test_saddle_example_fails(bilinear):
    rep = check_saddle(bilinear, [(0.0, np.array([0.5, 0.3]), np.array([0.0, 1.0]))])
    assert not rep.passed
    rec = rep.records[0]
    assert rec["minmax"] == pytest.approx(0.0) and rec["maxmin"] == pytest.approx(-0.5)
    assert rep.worst_gap == pytest.approx(0.5)


def test_saddle_example_negative_x1_passes(bilinear):
    rep = check_saddle(bilinear, [(0.0, np.array([-1.0, y]), np.array([0.0, 1.0])) for y in (-1, 0, 1)])
    assert rep.passed


@given(coord, coord, st.floats(-np.pi, np.pi))
def test_saddle_gap_nonnegative(x1, x2, ang):
    dyn = make_bilinear(control_resolution=5)
    s = np.array([np.cos(ang), np.sin(ang)])
    rep = check_saddle(dyn, [(0.0, np.array([x1, x2]), s)])
    assert rep.worst_gap >= -1e-9
    # analytic gap for the example: |s1| + |s2| max(0, x1)
    assert rep.worst_gap == pytest.approx(abs(s[0]) + abs(s[1]) * max(0.0, x1), abs=1e-12)


def test_report_text_roundtrip(bilinear):
    rep = check_saddle(bilinear, [(0.0, np.array([0.5, 0.3]), np.array([0.0, 1.0]))])
    text = rep.to_text()
    assert "result=fail" in text and "worst_gap=0.5" in text and "witness_x=0.5,0.29999999999999999" in text
    back = CheckReport.from_text(text)
    assert back.check == "saddle" and not back.passed and back.worst_gap == rep.worst_gap
