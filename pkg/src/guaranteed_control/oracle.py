"""Target-direction oracles for the extremal shift.

The exact target set (limits of motions under near-optimal quasi-strategies)
is not computable in general. Two substitutes are provided:

* closed-form projections for systems where the target motions are known;
* the gradient of a grid approximation of the lower (max-min) game value.

The grid recursion reveals the disturbance first at each time step and lets
the control answer, i.e. ``V_k(x) = max_v min_u V_{k+1}(x + dt f)``. This is
the discrete analogue of a controller that sees the current disturbance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .core import Dynamics, ModelError, NumericalError, Trajectory, grid_points

SNAP = 1e-9


class OracleError(RuntimeError):
    pass


class GridError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Value tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridGeometry:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    nodes: int = 41
    n_t: int = 100

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, self.nodes) for a, b in zip(self.lower, self.upper)]


def _fractional_index(ax: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = ax.size
    s = (np.clip(c, ax[0], ax[-1]) - ax[0]) / (ax[-1] - ax[0]) * (m - 1)
    r = np.rint(s)
    return np.where(np.abs(s - r) < SNAP, r, s)


def _split(s: np.ndarray, m: int):
    i0 = np.clip(np.floor(s).astype(int), 0, m - 2)
    return i0, s - i0


def interp_index(values: np.ndarray, s: list[np.ndarray]) -> np.ndarray:
    """Multilinear interpolation at fractional node indices ``s[d]``."""
    parts = [_split(sd, values.shape[d]) for d, sd in enumerate(s)]
    out = 0.0
    for corner in itertools.product((0, 1), repeat=len(s)):
        w = 1.0
        idx = []
        for (i0, fr), c in zip(parts, corner):
            w = w * (fr if c else 1.0 - fr)
            idx.append(i0 + c)
        out = out + w * values[tuple(idx)]
    return out


def interp_grid(values: np.ndarray, axes: list[np.ndarray], pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation on a uniform grid, clamped to the box."""
    pts = np.asarray(pts, float)
    return interp_index(values, [_fractional_index(ax, pts[..., d]) for d, ax in enumerate(axes)])


def _axis_coord(ax: np.ndarray, s: float) -> float:
    i0, fr = _split(np.asarray(s, float), ax.size)
    return float(ax[i0] * (1.0 - fr) + ax[i0 + 1] * fr)


@dataclass(frozen=True, eq=False)
class ValueTable:
    times: np.ndarray
    axes: tuple[np.ndarray, ...]
    values: np.ndarray  # shape (len(times), *node counts)
    order: str = "maxmin"

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def lower(self) -> np.ndarray:
        return np.array([ax[0] for ax in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([ax[-1] for ax in self.axes])

    def nodes(self) -> np.ndarray:
        return grid_points(self.axes)

    def _time_bracket(self, t: float) -> tuple[int, float]:
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise OracleError(f"t={t} outside table horizon")
        s = float(_fractional_index(ts, np.asarray(t)))
        k = min(int(np.floor(s)), ts.size - 2)
        return k, s - k

    def value(self, t: float, x) -> float:
        k, w = self._time_bracket(t)
        a = interp_grid(self.values[k], list(self.axes), np.asarray(x, float))
        b = interp_grid(self.values[k + 1], list(self.axes), np.asarray(x, float))
        return float(a + w * (b - a))

    def inside(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, float)
        return bool(((x >= self.lower - tol) & (x <= self.upper + tol)).all())

    # -- persistence -----------------------------------------------------

    def save_csv(self, path, comments: tuple[str, ...] = ()) -> None:
        """Header lines carry the geometry; then one row per time level with
        the node values in row-major (C) order."""
        lines = [f"# {c}" for c in comments]
        lines.append(f"# order={self.order}")
        lines.append(f"# times={self.times[0]:.17g},{self.times[-1]:.17g},{self.times.size}")
        for d, ax in enumerate(self.axes):
            lines.append(f"# axis{d + 1}={ax[0]:.17g},{ax[-1]:.17g},{ax.size}")
        flat = self.values.reshape(self.times.size, -1)
        lines += [",".join("%.17g" % v for v in row) for row in flat]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load_csv(cls, path) -> "ValueTable":
        meta: dict[str, str] = {}
        rows = []
        for ln in Path(path).read_text().splitlines():
            if ln.startswith("#"):
                if "=" in ln:
                    k, v = ln[1:].strip().split("=", 1)
                    meta[k] = v
            elif ln:
                rows.append([float(c) for c in ln.split(",")])

        def lin(spec: str) -> np.ndarray:
            a, b, m = spec.split(",")
            return np.linspace(float(a), float(b), int(m))

        times = lin(meta["times"])
        axes = []
        d = 1
        while f"axis{d}" in meta:
            axes.append(lin(meta[f"axis{d}"]))
            d += 1
        vals = np.array(rows).reshape((times.size,) + tuple(ax.size for ax in axes))
        return cls(times, tuple(axes), vals, meta.get("order", "maxmin"))


def dp_quasi_value(dyn: Dynamics, terminal_cost: Callable[[np.ndarray], np.ndarray],
                   geometry: GridGeometry, order: str = "maxmin") -> ValueTable:
    """Backward Euler recursion of the lower game value on a state grid.

    ``order="minmax"`` swaps the optimisation order (upper value); it exists to
    check that the lower value never exceeds it.
    """
    if dyn.n > 3:
        raise GridError("grid dynamic programming is limited to n <= 3")
    if order not in ("maxmin", "minmax"):
        raise ModelError("order must be 'maxmin' or 'minmax'")
    axes = geometry.axes()
    if len(axes) != dyn.n:
        raise GridError("grid dimension does not match the state dimension")
    times = np.linspace(dyn.t0, dyn.theta, geometry.n_t + 1)
    X = grid_points(axes)
    shape = tuple(ax.size for ax in axes)
    us = dyn.control_set.enumerate()
    vs = dyn.disturbance_set.enumerate()
    lo = np.array([ax[0] for ax in axes])
    hi = np.array([ax[-1] for ax in axes])
    cell = (hi - lo) / (geometry.nodes - 1)

    vals = np.empty((times.size,) + shape)
    vals[-1] = np.asarray(terminal_cost(X), float).reshape(shape)
    if not np.isfinite(vals[-1]).all():
        raise NumericalError("terminal cost is not finite on the grid")
    for k in range(geometry.n_t - 1, -1, -1):
        dt = times[k + 1] - times[k]
        nxt = X[None, None] + dt * dyn(times[k], X[None, None], us[None, :, None], vs[:, None, None])
        over = np.maximum(lo - nxt, nxt - hi).max(axis=(0, 1, 2)) if nxt.size else 0.0
        if (over > cell * (1 + 1e-9)).any():
            raise GridError("one Euler step leaves the grid box by more than a cell; "
                            "enlarge the box or refine the time grid")
        w = interp_grid(vals[k + 1], axes, nxt)  # (nv, nu, M)
        if order == "maxmin":
            v_k = w.min(axis=1).max(axis=0)
        else:
            v_k = w.max(axis=0).min(axis=0)
        if not np.isfinite(v_k).all():
            raise NumericalError(f"non-finite value at level {k}")
        vals[k] = v_k.reshape(shape)
    return ValueTable(times, tuple(axes), vals, order)


def _gradient_at_level(values: np.ndarray, axes, y: np.ndarray) -> np.ndarray:
    s = [float(_fractional_index(ax, np.asarray(c))) for ax, c in zip(axes, y)]
    g = np.empty(len(axes))
    for d, ax in enumerate(axes):
        sp = list(s)
        sm = list(s)
        sp[d] = min(s[d] + 1.0, ax.size - 1.0)
        sm[d] = max(s[d] - 1.0, 0.0)
        vp = interp_index(values, [np.asarray(v) for v in sp])
        vm = interp_index(values, [np.asarray(v) for v in sm])
        g[d] = (vp - vm) / (_axis_coord(ax, sp[d]) - _axis_coord(ax, sm[d]))
    return g


def value_shift_vector(table: ValueTable, t: float, y) -> np.ndarray:
    """Central-difference gradient of V(t, .) at y with one-cell spacing."""
    y = np.asarray(y, float)
    if not table.inside(y):
        raise OracleError(f"point {y} outside the value table box")
    k, w = table._time_bracket(t)
    a = _gradient_at_level(table.values[k], table.axes, y)
    if w == 0.0:
        return a
    b = _gradient_at_level(table.values[k + 1], table.axes, y)
    return a + w * (b - a)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


class TargetOracle(Protocol):
    explicit: bool

    def shift_vector(self, t: float, y: Trajectory) -> np.ndarray: ...


class ValueGradientOracle:
    """Shift direction = gradient of the grid lower value at the model state."""

    explicit = False

    def __init__(self, table: ValueTable):
        self.table = table

    def shift_vector(self, t: float, y: Trajectory) -> np.ndarray:
        g = value_shift_vector(self.table, t, y.at(t))
        if not np.isfinite(g).all():
            raise OracleError("non-finite shift vector")
        return g


class ProjectionOracle:
    """Wraps a projection rule ``project(t, y) -> w`` returning the projected
    history on [t0, t] as a Trajectory; shift = y(t) - w(t)."""

    explicit = False

    def __init__(self, project: Callable[[float, Trajectory], Trajectory], note: str = ""):
        self.project = project
        self.note = note

    def shift_vector(self, t: float, y: Trajectory) -> np.ndarray:
        w = self.project(t, y)
        s = y.at(t) - w(t)
        if not np.isfinite(s).all():
            raise OracleError("non-finite shift vector")
        return s


class ExplicitFeedbackOracle:
    """Marker for systems driven by a closed-form feedback; never queried."""

    explicit = True

    def __init__(self, system_id: str):
        self.system_id = system_id
        self.note = "explicit-feedback; projection unused"

    def shift_vector(self, t: float, y: Trajectory) -> np.ndarray:
        raise OracleError(f"{self.system_id}: {self.note}")


def _identity_projection(t: float, y: Trajectory) -> Trajectory:
    return y.restrict(t)


def _line_projection(velocity):
    vel = np.asarray(velocity, float)

    def project(t: float, y: Trajectory) -> Trajectory:
        z0 = y.states[0]
        ts = np.array([y.t_start, t]) if t > y.t_start else np.array([y.t_start])
        return Trajectory(ts, z0[None, :] + (ts - y.t_start)[:, None] * vel[None, :])

    return project


def exact_projection_oracle(spec) -> TargetOracle:
    """Closed-form oracles.

    ``"bilinear-2x2"``: explicit feedback, projection unused.
    ``"zero"``: every motion is optimal, so w = y.
    ``{"kind": "line", "velocity": [...]}``: the target set is the single
    straight-line motion from y(t0) with the given velocity.
    """
    from .bilinear import SYSTEM_ID

    if spec == SYSTEM_ID:
        return ExplicitFeedbackOracle(SYSTEM_ID)
    if spec == "zero":
        return ProjectionOracle(_identity_projection, "identity")
    if isinstance(spec, dict) and spec.get("kind") == "line":
        return ProjectionOracle(_line_projection(spec["velocity"]), "line")
    raise OracleError(f"no closed-form target set for {spec!r}")
