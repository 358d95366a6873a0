"""Full-memory feedbacks built on dynamic inversion and extremal shift.

Each feedback keeps an online copy of the plant (the y-model) driven by the
useful control and the surrogate disturbance identified from the real
motion. On every block it

1. extends the y-model over the previous block,
2. identifies a surrogate disturbance from the observed increments,
3. picks the useful control that pushes the y-model along the target
   direction fastest (extremal shift),

and, for the multi-test variants, appends a short tail of test controls at
the end of the block so the next identification has data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .core import (
    CompactSetSpec,
    Dynamics,
    ModelError,
    Partition,
    Signal,
    TestSchedule,
    Trajectory,
    build_test_schedule,
    grid_points,
    integrate,
)
from .inversion import divided_differences, identify_surrogate_multi, identify_surrogate_single
from .oracle import TargetOracle


class FullMemoryFeedback(Protocol):
    """Maps the observed history on [t0, tau_i] to the control on block i."""

    def reset(self, z0, part: Partition) -> None: ...

    def block(self, i: int, history: Trajectory) -> Signal: ...


def epsilon_net(s: CompactSetSpec, eps: float) -> np.ndarray:
    """Uniform grid with per-coordinate spacing <= eps (finite sets verbatim)."""
    if eps <= 0:
        raise ModelError("eps must be positive")
    if hasattr(s, "points"):
        return s.points
    lo, hi = s.lower, s.upper
    if (hi <= lo).any():
        raise ModelError("degenerate box has no eps-net")
    counts = [int(math.ceil((b - a) / eps - 1e-12)) + 1 for a, b in zip(lo, hi)]
    return grid_points([np.linspace(a, b, m) for a, b, m in zip(lo, hi, counts)])


def extremal_shift(dyn: Dynamics, t: float, y, shift, candidates, v_bar) -> np.ndarray:
    """argmin over candidates of <shift, f(t, y, u, v_bar)>; first index wins ties."""
    cands = np.atleast_2d(np.asarray(candidates, float))
    vel = dyn(t, np.asarray(y, float)[None, :], cands, np.asarray(v_bar, float)[None, :])
    return cands[int(np.argmin(vel @ np.asarray(shift, float)))]


# ---------------------------------------------------------------------------
# Configuration and per-run state
# ---------------------------------------------------------------------------


def _points(a) -> np.ndarray:
    return np.atleast_2d(np.asarray(a, float))


@dataclass(frozen=True, eq=False)
class EpsilonStrategyConfig:
    dynamics: Dynamics
    eps: float
    test_controls: np.ndarray
    shift_set: np.ndarray
    oracle: TargetOracle
    substeps: int = 8
    u_star: np.ndarray | None = None
    v_star: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ModelError("eps must lie in (0, 1)")
        tests = _points(self.test_controls)
        shifts = _points(self.shift_set)
        if shifts.shape[0] == 0 or tests.shape[0] == 0:
            raise ModelError("test controls and shift set must be nonempty")
        P = self.dynamics.control_set
        for u in np.vstack([tests, shifts]):
            if not P.contains(u, 1e-9):
                raise ModelError(f"control {u} is not in the control set")
        object.__setattr__(self, "test_controls", tests)
        object.__setattr__(self, "shift_set", shifts)
        object.__setattr__(self, "u_star", _default_u(self.dynamics, self.u_star))
        object.__setattr__(self, "v_star", _default_v(self.dynamics, self.v_star))


@dataclass(frozen=True, eq=False)
class UStarConfig:
    dynamics: Dynamics
    p_bar: np.ndarray
    oracle: TargetOracle
    substeps: int = 8
    u_star: np.ndarray | None = None
    v_star: np.ndarray | None = None

    def __post_init__(self):
        pb = _points(self.p_bar)
        for u in pb:
            if not self.dynamics.control_set.contains(u, 1e-9):
                raise ModelError(f"control {u} is not in the control set")
        object.__setattr__(self, "p_bar", pb)
        object.__setattr__(self, "u_star", _default_u(self.dynamics, self.u_star))
        object.__setattr__(self, "v_star", _default_v(self.dynamics, self.v_star))


def _default_u(dyn: Dynamics, u) -> np.ndarray:
    return dyn.control_set.enumerate()[0] if u is None else np.asarray(u, float)


def _default_v(dyn: Dynamics, v) -> np.ndarray:
    return dyn.disturbance_set.enumerate()[0] if v is None else np.asarray(v, float)


@dataclass(frozen=True, eq=False)
class StrategyState:
    y_traj: Trajectory
    v_bar_prev: np.ndarray
    u_prev: np.ndarray
    u_star: np.ndarray
    v_star: np.ndarray
    v_bars: tuple = ()       # (tau_i, v_bar_i) for i >= 1
    controls: tuple = ()     # useful control per block


def initial_state(cfg, z0, t0: float) -> StrategyState:
    return StrategyState(Trajectory.point(t0, z0), cfg.v_star, cfg.u_star, cfg.u_star, cfg.v_star,
                         (), (cfg.u_star,))


def _extend_model(cfg, state: StrategyState, a: float, b: float) -> Trajectory:
    dyn = cfg.dynamics
    piece = integrate(dyn, a, state.y_traj.at(a), Signal.constant(state.u_prev, a, b),
                      Signal.constant(state.v_bar_prev, a, b), cfg.substeps)
    return state.y_traj.extend(piece)


def _with_tests(u_main, tests: np.ndarray, a: float, b: float,
                sched: TestSchedule | None, nxt: int) -> Signal:
    """u_main on [a, tau'_nxt) followed by the test controls up to b."""
    if sched is None or nxt not in sched.blocks:
        return Signal.constant(u_main, a, b)
    # kept unmerged: the test instants must stay breakpoints even when a test
    # control equals its neighbour, so the motion is sampled there
    inst = sched.window(nxt)
    bps = np.concatenate([[a], inst[:-1], [b]])
    return Signal(bps, np.vstack([np.asarray(u_main, float)[None, :], tests]))


def ue_feedback_block(cfg: EpsilonStrategyConfig, state: StrategyState, history: Trajectory,
                      part: Partition, sched: TestSchedule, i: int) -> tuple[Signal, StrategyState]:
    """One block of the multi-test strategy (general or finite-test variant)."""
    a, b = float(part.times[i]), float(part.times[i + 1])
    if i == 0:
        return _with_tests(state.u_star, cfg.test_controls, a, b, sched, 1), state
    dyn = cfg.dynamics
    y = _extend_model(cfg, state, float(part.times[i - 1]), a)
    d = divided_differences(history, sched, i)
    v_bar = identify_surrogate_multi(dyn, a, history.at(a), cfg.test_controls, d)
    model = replace(state, y_traj=y)
    shift = cfg.oracle.shift_vector(a, y)
    u = extremal_shift(dyn, a, y.at(a), shift, cfg.shift_set, v_bar)
    new = replace(model, v_bar_prev=v_bar, u_prev=u, v_bars=state.v_bars + ((a, v_bar),),
                  controls=state.controls + (u,))
    return _with_tests(u, cfg.test_controls, a, b, sched, i + 1), new


def ustar_feedback_block(cfg: UStarConfig, state: StrategyState, history: Trajectory,
                         part: Partition, i: int) -> tuple[Signal, StrategyState]:
    """One block of the single-test strategy: the previous useful control is
    the only probe, so there is no test tail."""
    a, b = float(part.times[i]), float(part.times[i + 1])
    if i == 0:
        return Signal.constant(state.u_star, a, b), state
    dyn = cfg.dynamics
    prev = float(part.times[i - 1])
    y = _extend_model(cfg, state, prev, a)
    v_bar = identify_surrogate_single(dyn, prev, a, history.at(prev), history.at(a), state.u_prev)
    shift = cfg.oracle.shift_vector(a, y)
    u = extremal_shift(dyn, a, y.at(a), shift, cfg.p_bar, v_bar)
    new = replace(state, y_traj=y, v_bar_prev=v_bar, u_prev=u,
                  v_bars=state.v_bars + ((a, v_bar),), controls=state.controls + (u,))
    return Signal.constant(u, a, b), new


# ---------------------------------------------------------------------------
# Stateful wrappers used by the closed-loop driver
# ---------------------------------------------------------------------------


class EpsilonFeedback:
    """Multi-test strategy; with a fixed finite test set it is the finite-test
    variant, with an eps-net of P the general one."""

    name = "ue"

    def __init__(self, cfg: EpsilonStrategyConfig):
        self.cfg = cfg
        self.state: StrategyState | None = None
        self.part: Partition | None = None
        self.sched: TestSchedule | None = None

    def reset(self, z0, part: Partition) -> None:
        self.part = part
        self.sched = build_test_schedule(part, self.cfg.eps, self.cfg.test_controls.shape[0])
        self.state = initial_state(self.cfg, z0, part.t0)

    def block(self, i: int, history: Trajectory) -> Signal:
        sig, self.state = ue_feedback_block(self.cfg, self.state, history, self.part, self.sched, i)
        return sig

    @property
    def v_bars(self):
        return self.state.v_bars


class UStarFeedback:
    name = "ustar"

    def __init__(self, cfg: UStarConfig):
        self.cfg = cfg
        self.state: StrategyState | None = None
        self.part: Partition | None = None

    def reset(self, z0, part: Partition) -> None:
        self.part = part
        self.state = initial_state(self.cfg, z0, part.t0)

    def block(self, i: int, history: Trajectory) -> Signal:
        sig, self.state = ustar_feedback_block(self.cfg, self.state, history, self.part, i)
        return sig

    @property
    def v_bars(self):
        return self.state.v_bars


class ConstantFeedback:
    name = "constant"

    def __init__(self, u0):
        self.u0 = np.atleast_1d(np.asarray(u0, float))
        self.part: Partition | None = None

    def reset(self, z0, part: Partition) -> None:
        self.part = part

    def block(self, i: int, history: Trajectory) -> Signal:
        return Signal.constant(self.u0, self.part.times[i], self.part.times[i + 1])


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------


class ReactiveDisturbance(Protocol):
    """A disturbance that picks its value at its own decision instants from
    the realised history (used for adversarial ensemble members)."""

    def reset(self, part: Partition) -> None: ...

    def decision_times(self) -> np.ndarray: ...

    def decide(self, t: float, history: Trajectory, u_last: np.ndarray | None) -> np.ndarray: ...


@dataclass
class ClosedLoopRun:
    trajectory: Trajectory
    control: Signal
    disturbance: Signal
    v_bars: tuple = ()
    feedback: object = field(default=None, repr=False)

    def __iter__(self):
        yield self.trajectory
        yield self.control


def simulate_closed_loop(dyn: Dynamics, part: Partition, feedback: FullMemoryFeedback, v,
                         z0, substeps: int = 8) -> ClosedLoopRun:
    """Alternate feedback blocks and integration.

    ``v`` is a Signal covering the horizon or a ReactiveDisturbance. The
    feedback only ever sees the motion up to the current node.
    """
    z0 = np.asarray(z0, float)
    feedback.reset(z0, part)
    reactive = not isinstance(v, Signal)
    if reactive:
        v.reset(part)
        decisions = np.asarray(v.decision_times(), float)
    else:
        if v.t_start > part.t0 + 1e-12 or v.t_end < part.theta - 1e-12:
            raise ModelError("disturbance does not cover the horizon")
    history = Trajectory.point(part.t0, z0)
    control: Signal | None = None
    ctrl_pieces: list[tuple[float, float, np.ndarray]] = []
    dist_pieces: list[tuple[float, float, np.ndarray]] = []
    v_now = None
    for i in range(part.n_steps):
        a, b = float(part.times[i]), float(part.times[i + 1])
        u_sig = feedback.block(i, history)
        if abs(u_sig.t_start - a) > 1e-12 or abs(u_sig.t_end - b) > 1e-12:
            raise ModelError(f"feedback block {i} does not cover [{a}, {b})")
        if not reactive:
            piece = integrate(dyn, a, history.final, u_sig, v, substeps, t_end=b)
            history = history.extend(piece)
        else:
            cuts = [a] + [float(t) for t in decisions if a < t < b] + [b]
            for c0, c1 in zip(cuts[:-1], cuts[1:]):
                if v_now is None or np.any(np.isclose(decisions, c0, rtol=0, atol=1e-12)):
                    u_last = None if control is None and c0 == a else _last_control(control, u_sig, c0)
                    v_now = np.asarray(v.decide(c0, history, u_last), float)
                vs = Signal.constant(v_now, c0, c1)
                piece = integrate(dyn, c0, history.final, u_sig.restrict(c0, c1), vs, substeps)
                history = history.extend(piece)
                dist_pieces.append((c0, c1, v_now))
        ctrl_pieces.extend(u_sig.pieces())
        control = u_sig
    realised = v if not reactive else Signal.from_pieces(dist_pieces)
    return ClosedLoopRun(history, Signal.from_pieces(ctrl_pieces), realised, tuple(getattr(feedback, "v_bars", ())), feedback)


def _last_control(previous: Signal | None, current: Signal, t: float) -> np.ndarray | None:
    """Control value in force just before t."""
    if t > current.t_start:
        k = int(np.searchsorted(current.breakpoints, t, side="left") - 1)
        return current.values[max(k, 0)]
    if previous is None:
        return None
    return previous.values[-1]
