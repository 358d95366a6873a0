"""System model, time partitions, piecewise-constant signals and the integrator.

Everything here is immutable after construction. Arrays handed to the
constructors are copied and marked read-only.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

# Breakpoints closer than this (relative to the horizon) are treated as one.
TIME_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model data (sets, partitions, signals)."""


class NumericalError(RuntimeError):
    """Non-finite values or a state escaping the working box G."""


class StateEscapeError(NumericalError):
    pass


class MissingSampleError(LookupError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Compact sets
# ---------------------------------------------------------------------------


class CompactSetSpec:
    """Common interface of the control/disturbance set descriptions."""

    dim: int

    def enumerate(self) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def vertices(self) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def contains(self, point, tol: float = 1e-12) -> bool:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class FiniteSet(CompactSetSpec):
    """An explicit list of points; enumeration order is the given order."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0 or pts.shape[0] == 0:
            raise ModelError("FiniteSet must be nonempty")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def enumerate(self) -> np.ndarray:
        return self.points

    def vertices(self) -> np.ndarray:
        return self.points

    def contains(self, point, tol: float = 1e-12) -> bool:
        d = np.abs(self.points - np.asarray(point, dtype=float)).max(axis=1)
        return bool((d <= tol).any())

    def __repr__(self) -> str:
        return f"FiniteSet({self.points.tolist()})"


@dataclass(frozen=True, eq=False)
class Box(CompactSetSpec):
    """Axis-aligned box, enumerated as a uniform grid of ``resolution`` points
    per coordinate (lexicographic order, first coordinate slowest)."""

    lower: np.ndarray
    upper: np.ndarray
    resolution: int = 2

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ModelError("Box bounds must be 1-D and of equal length")
        if (lo > hi).any():
            raise ModelError(f"Box has lower > upper: {lo} vs {hi}")
        if int(self.resolution) < 2:
            raise ModelError("Box resolution must be >= 2 points per coordinate")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def axes(self, resolution: int | None = None) -> list[np.ndarray]:
        m = self.resolution if resolution is None else resolution
        return [np.linspace(a, b, m) for a, b in zip(self.lower, self.upper)]

    def enumerate(self) -> np.ndarray:
        return grid_points(self.axes())

    def vertices(self) -> np.ndarray:
        return grid_points([np.array([a, b]) if a < b else np.array([a])
                            for a, b in zip(self.lower, self.upper)])

    def contains(self, point, tol: float = 1e-12) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(((p >= self.lower - tol) & (p <= self.upper + tol)).all())

    def __repr__(self) -> str:
        return f"Box({self.lower.tolist()}, {self.upper.tolist()}, resolution={self.resolution})"


def grid_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    """Cartesian product of 1-D axes in lexicographic order."""
    pts = np.array(list(itertools.product(*axes)), dtype=float)
    return _frozen(pts.reshape(-1, len(axes)))


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

RHS = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Dynamics:
    """Right-hand side ``f(t, x, u, v)`` with its sets and constants.

    ``f`` must broadcast over leading axes: ``x[..., n]``, ``u[..., p]`` and
    ``v[..., q]`` give a result of shape ``(..., n)``. The grid solvers rely
    on this; the integrator only ever passes 1-D arrays.

    ``state_box`` is the working compact G as ``(lower, upper)``; motions are
    checked against it with a 10% margin of its width.
    """

    n: int
    p: int
    q: int
    f: RHS
    control_set: CompactSetSpec
    disturbance_set: CompactSetSpec
    horizon: tuple[float, float] = (0.0, 1.0)
    growth_K: float = 0.0
    lipschitz_L: float = 0.0
    state_box: tuple[np.ndarray, np.ndarray] | None = None
    name: str = "system"

    def __post_init__(self):
        if self.control_set.dim != self.p:
            raise ModelError(f"control set has dim {self.control_set.dim}, expected {self.p}")
        if self.disturbance_set.dim != self.q:
            raise ModelError(f"disturbance set has dim {self.disturbance_set.dim}, expected {self.q}")
        t0, t1 = map(float, self.horizon)
        if not t0 < t1:
            raise ModelError("horizon must satisfy t0 < theta")
        object.__setattr__(self, "horizon", (t0, t1))
        if self.state_box is not None:
            lo, hi = (_frozen(np.broadcast_to(np.asarray(b, float), (self.n,)))
                      for b in self.state_box)
            if (lo > hi).any():
                raise ModelError("state_box has lower > upper")
            object.__setattr__(self, "state_box", (lo, hi))

    @property
    def t0(self) -> float:
        return self.horizon[0]

    @property
    def theta(self) -> float:
        return self.horizon[1]

    def __call__(self, t, x, u, v) -> np.ndarray:
        return np.asarray(self.f(t, x, u, v), dtype=float)

    def escape_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        if self.state_box is None:
            return None
        lo, hi = self.state_box
        margin = 0.1 * (hi - lo)
        return lo - margin, hi + margin

    def check_bounds(self, samples: list[tuple[float, np.ndarray]] | None = None,
                     controls: np.ndarray | None = None,
                     disturbances: np.ndarray | None = None) -> dict:
        """Sample the growth and Lipschitz bounds on G x P x Q.

        Returns the worst observed ratios; ``ok`` is true when both stay
        within the declared constants (up to rounding).
        """
        if self.state_box is None and samples is None:
            raise ModelError("need samples or a state_box to check bounds")
        if samples is None:
            lo, hi = self.state_box
            pts = grid_points([np.linspace(a, b, 5) for a, b in zip(lo, hi)])
            samples = [(t, x) for t in np.linspace(self.t0, self.theta, 3) for x in pts]
        us = self.control_set.enumerate() if controls is None else controls
        vs = self.disturbance_set.enumerate() if disturbances is None else disturbances
        worst_growth = 0.0
        worst_lip = 0.0
        xs = np.array([x for _, x in samples])
        for t, x in samples:
            fx = self(t, x[None, None, :], us[:, None, :], vs[None, :, :])
            g = np.linalg.norm(fx, axis=-1).max() / (1.0 + np.linalg.norm(x))
            worst_growth = max(worst_growth, float(g))
            others = xs[np.any(xs != x, axis=1)]
            if len(others):
                fo = self(t, others[:, None, None, :], us[None, :, None, :], vs[None, None, :, :])
                df = np.linalg.norm(fo - fx[None], axis=-1).max(axis=(1, 2))
                dx = np.linalg.norm(others - x, axis=-1)
                worst_lip = max(worst_lip, float((df / dx).max()))
        slack = 1e-9
        return {
            "growth_ratio": worst_growth,
            "lipschitz_ratio": worst_lip,
            "ok": worst_growth <= self.growth_K + slack and worst_lip <= self.lipschitz_L + slack,
        }


# ---------------------------------------------------------------------------
# Partitions and test schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Partition:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ModelError("partition needs at least two nodes")
        if not (np.diff(t) > 0).all():
            raise ModelError("partition nodes must be strictly increasing")
        object.__setattr__(self, "times", _frozen(t))

    @classmethod
    def uniform(cls, t0: float, theta: float, steps: int) -> "Partition":
        if steps < 1:
            raise ModelError("steps must be positive")
        return cls(np.linspace(t0, theta, steps + 1))

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def diam(self) -> float:
        return float(np.diff(self.times).max())

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def theta(self) -> float:
        return float(self.times[-1])

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        h = np.diff(self.times)
        return bool(np.abs(h - h.mean()).max() <= rtol * max(h.mean(), 1e-300))


def locate_index(part: Partition, t: float) -> int:
    """``max{i : tau_i <= t}``."""
    if t < part.t0 or t > part.theta:
        raise ModelError(f"t={t} outside horizon [{part.t0}, {part.theta}]")
    return int(np.searchsorted(part.times, t, side="right") - 1)


@dataclass(frozen=True, eq=False)
class TestSchedule:
    """Test windows ``[tau'_i, tau_i)`` split into ``n_tests`` equal pieces.

    ``starts[i]`` and ``instants[i]`` are defined for i = 1 .. n_steps-1;
    index 0 and the last block are unused (NaN rows).
    """

    eps: float
    n_tests: int
    starts: np.ndarray
    instants: np.ndarray

    __test__ = False  # not a pytest class

    def window(self, i: int) -> np.ndarray:
        row = self.instants[i]
        if np.isnan(row).any():
            raise ModelError(f"no test window for block index {i}")
        return row

    @property
    def blocks(self) -> range:
        return range(1, self.instants.shape[0] - 1)


def build_test_schedule(part: Partition, eps: float, n_tests: int) -> TestSchedule:
    if not 0.0 < eps < 1.0:
        raise ModelError("eps must lie in (0, 1)")
    if n_tests < 1:
        raise ModelError("n_tests must be positive")
    if not part.is_uniform():
        raise ModelError("test schedules are defined for uniform partitions only")
    nd = part.n_steps
    starts = np.full(nd + 1, np.nan)
    inst = np.full((nd + 1, n_tests + 1), np.nan)
    width = eps * part.diam
    for i in range(1, nd):
        tau = part.times[i]
        start = tau - width
        starts[i] = start
        j = np.arange(n_tests + 1)
        inst[i] = start + j * (tau - start) / n_tests
        inst[i, -1] = tau
    return TestSchedule(eps, n_tests, _frozen(starts), _frozen(inst))


# ---------------------------------------------------------------------------
# Signals and trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Signal:
    """Piecewise-constant signal: ``values[k]`` holds on
    ``[breakpoints[k], breakpoints[k+1])``; the last value also holds at the
    final breakpoint."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if b.ndim != 1 or b.size != v.shape[0] + 1 or v.shape[0] == 0:
            raise ModelError("signal needs len(breakpoints) == len(values) + 1 >= 2")
        if not (np.diff(b) > 0).all():
            raise ModelError("signal breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", _frozen(b))
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def constant(cls, value, t_start: float, t_end: float) -> "Signal":
        return cls([t_start, t_end], [np.atleast_1d(np.asarray(value, float))])

    @classmethod
    def from_pieces(cls, pieces: Iterable[tuple[float, float, np.ndarray]]) -> "Signal":
        """Build from ``(start, end, value)`` triples; empty pieces are dropped
        and equal neighbours merged."""
        bps: list[float] = []
        vals: list[np.ndarray] = []
        for a, b, val in pieces:
            if b - a <= 0:
                continue
            val = np.atleast_1d(np.asarray(val, float))
            if bps and abs(bps[-1] - a) > TIME_TOL * max(1.0, abs(a)):
                raise ModelError("signal pieces must be contiguous")
            if vals and np.array_equal(vals[-1], val):
                bps[-1] = b
                continue
            if not bps:
                bps.append(a)
            bps.append(b)
            vals.append(val)
        return cls(bps, vals)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def t_start(self) -> float:
        return float(self.breakpoints[0])

    @property
    def t_end(self) -> float:
        return float(self.breakpoints[-1])

    def value_at(self, t: float) -> np.ndarray:
        if t < self.t_start or t > self.t_end:
            raise ModelError(f"t={t} outside signal support")
        k = int(np.searchsorted(self.breakpoints, t, side="right") - 1)
        return self.values[min(k, self.values.shape[0] - 1)]

    def restrict(self, a: float, b: float) -> "Signal":
        if a < self.t_start - TIME_TOL or b > self.t_end + TIME_TOL or not a < b:
            raise ModelError(f"cannot restrict [{self.t_start}, {self.t_end}] to [{a}, {b}]")
        inner = self.breakpoints[(self.breakpoints > a) & (self.breakpoints < b)]
        bps = np.concatenate([[a], inner, [b]])
        vals = [self.value_at(min(max(s, self.t_start), self.t_end)) for s in bps[:-1]]
        return Signal(bps, vals)

    def concat(self, other: "Signal") -> "Signal":
        if abs(other.t_start - self.t_end) > TIME_TOL * max(1.0, abs(self.t_end)):
            raise ModelError("signals are not contiguous")
        pieces = list(self.pieces()) + list(other.pieces())
        return Signal.from_pieces(pieces)

    def pieces(self):
        for k in range(self.values.shape[0]):
            yield float(self.breakpoints[k]), float(self.breakpoints[k + 1]), self.values[k]

    def members_of(self, s: CompactSetSpec, tol: float = 1e-9) -> bool:
        return all(s.contains(v, tol) for v in self.values)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Signal)
                and np.array_equal(self.breakpoints, other.breakpoints)
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled state path, linear interpolation between samples."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or x.shape[0] != t.size or t.size == 0:
            raise ModelError("trajectory needs one state per sample time")
        if t.size > 1 and not (np.diff(t) > 0).all():
            raise ModelError("trajectory sample times must be increasing")
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "states", _frozen(x))

    @classmethod
    def point(cls, t: float, x) -> "Trajectory":
        return cls([t], [np.atleast_1d(np.asarray(x, float))])

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __call__(self, t: float) -> np.ndarray:
        if t < self.t_start - TIME_TOL or t > self.t_end + TIME_TOL:
            raise ModelError(f"t={t} outside trajectory [{self.t_start}, {self.t_end}]")
        return np.array([np.interp(t, self.times, self.states[:, k]) for k in range(self.dim)])

    def sample_index(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t))
        tol = TIME_TOL * max(1.0, abs(t))
        for j in (k - 1, k):
            if 0 <= j < self.times.size and abs(self.times[j] - t) <= tol:
                return j
        raise MissingSampleError(f"no sample at t={t}")

    def at(self, t: float) -> np.ndarray:
        """State at an exact sample instant; raises MissingSampleError otherwise."""
        return self.states[self.sample_index(t)]

    def restrict(self, t_end: float) -> "Trajectory":
        keep = self.times <= t_end + TIME_TOL * max(1.0, abs(t_end))
        return Trajectory(self.times[keep], self.states[keep])

    def extend(self, other: "Trajectory") -> "Trajectory":
        """Append ``other``, whose first sample must coincide with our last."""
        if abs(other.t_start - self.t_end) > TIME_TOL * max(1.0, abs(self.t_end)):
            raise ModelError("trajectories are not contiguous")
        return Trajectory(np.concatenate([self.times, other.times[1:]]),
                          np.concatenate([self.states, other.states[1:]]))

    def __eq__(self, other) -> bool:
        return (isinstance(other, Trajectory)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.states, other.states))

    __hash__ = None


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    """Sup-norm distance over the union of both sample grids."""
    if a.dim != b.dim:
        raise ModelError("trajectories have different dimensions")
    lo = max(a.t_start, b.t_start)
    hi = min(a.t_end, b.t_end)
    grid = np.union1d(a.times, b.times)
    grid = grid[(grid >= lo) & (grid <= hi)]
    ia = np.stack([np.interp(grid, a.times, a.states[:, k]) for k in range(a.dim)], axis=1)
    ib = np.stack([np.interp(grid, b.times, b.states[:, k]) for k in range(b.dim)], axis=1)
    return float(np.linalg.norm(ia - ib, axis=1).max())


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------


def _rk4_interval(dyn: Dynamics, t_a: float, t_b: float, x: np.ndarray,
                  u: np.ndarray, v: np.ndarray, substeps: int):
    ts = np.linspace(t_a, t_b, substeps + 1)
    out = np.empty((substeps + 1, x.size))
    out[0] = x
    f = dyn.f
    for k in range(substeps):
        t = ts[k]
        h = ts[k + 1] - t
        k1 = f(t, x, u, v)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1, u, v)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2, u, v)
        k4 = f(t + h, x + h * k3, u, v)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return ts, out


def merged_breakpoints(t_start: float, t_end: float, *signals: Signal) -> np.ndarray:
    pts = [np.array([t_start, t_end])]
    for s in signals:
        pts.append(s.breakpoints[(s.breakpoints > t_start) & (s.breakpoints < t_end)])
    bps = np.unique(np.concatenate(pts))
    tol = TIME_TOL * max(1.0, abs(t_end))
    keep = np.concatenate([[True], np.diff(bps) > tol])
    bps = bps[keep]
    bps[-1] = t_end
    return bps


def integrate(dyn: Dynamics, t_start: float, x_start, u: Signal, v: Signal,
              substeps: int = 8, t_end: float | None = None) -> Trajectory:
    """Fixed-step RK4 over every interval on which both signals are constant.

    Integrates from ``t_start`` to ``t_end`` (default: end of ``u``). The
    returned samples contain every signal breakpoint and every RK4 node.
    """
    if substeps < 1:
        raise ModelError("substeps must be positive")
    x = np.array(x_start, dtype=float).reshape(-1)
    if x.size != dyn.n or not np.isfinite(x).all():
        raise NumericalError(f"bad initial state {x_start!r}")
    t_end = u.t_end if t_end is None else t_end
    if not t_start < t_end:
        raise ModelError("integration interval is empty")
    for s, name in ((u, "control"), (v, "disturbance")):
        tol = TIME_TOL * max(1.0, abs(t_end))
        if s.t_start > t_start + tol or s.t_end < t_end - tol:
            raise ModelError(f"{name} signal does not cover [{t_start}, {t_end}]")
    bounds = dyn.escape_bounds()
    bps = merged_breakpoints(t_start, t_end, u, v)
    times = [np.array([t_start])]
    states = [x[None, :]]
    for a, b in zip(bps[:-1], bps[1:]):
        ua = u.value_at(min(max(a, u.t_start), u.t_end))
        va = v.value_at(min(max(a, v.t_start), v.t_end))
        ts, xs = _rk4_interval(dyn, a, b, x, ua, va, substeps)
        if not np.isfinite(xs).all():
            raise NumericalError(f"non-finite state on [{a}, {b}]")
        if bounds is not None and ((xs < bounds[0]).any() or (xs > bounds[1]).any()):
            raise StateEscapeError(f"state left the working box G on [{a}, {b}]")
        times.append(ts[1:])
        states.append(xs[1:])
        x = xs[-1]
    return Trajectory(np.concatenate(times), np.concatenate(states))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "%.17g" % x


def _write_rows(path, header: list[str], rows, comments: Sequence[str] = ()) -> None:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(float(x)) for x in r])
    Path(path).write_text(buf.getvalue())


def _read_rows(path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    r = csv.reader(lines)
    header = next(r)
    data = np.array([[float(c) for c in row] for row in r], dtype=float)
    return header, data.reshape(-1, len(header))


def write_trajectory_csv(traj: Trajectory, path, prefix: str = "x",
                         comments: Sequence[str] = ()) -> None:
    header = ["t"] + [f"{prefix}{k + 1}" for k in range(traj.dim)]
    _write_rows(path, header, np.column_stack([traj.times, traj.states]), comments)


def read_trajectory_csv(path) -> Trajectory:
    _, data = _read_rows(path)
    return Trajectory(data[:, 0], data[:, 1:])


def write_signal_csv(sig: Signal, path, prefix: str = "u",
                     comments: Sequence[str] = ()) -> None:
    """One row per interval start plus a closing row at the end time."""
    header = ["t"] + [f"{prefix}{k + 1}" for k in range(sig.dim)]
    rows = np.column_stack([sig.breakpoints, np.vstack([sig.values, sig.values[-1:]])])
    _write_rows(path, header, rows, comments)


def read_signal_csv(path) -> Signal:
    _, data = _read_rows(path)
    return Signal(data[:, 0], data[:-1, 1:])


def finite_or_raise(x: float, what: str) -> float:
    if not math.isfinite(x):
        raise NumericalError(f"non-finite {what}")
    return x
