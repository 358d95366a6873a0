"""The 2x2 bilinear reference game.

    x1' = u1 v1
    x2' = max(0, x1) u2 v2,     u in [-1, 1]^2,  v in {-1, 1}^2,  t in [0, 1]

with cost x2(1) from z0 = (0, 0). A controller that sees v steers x1 up at
unit speed and makes x2 fall at rate x1, so the quasi-strategy value is
-int_0^1 t dt = -0.5.
"""

from __future__ import annotations

import numpy as np

from .core import Box, Dynamics, FiniteSet, ModelError, Partition, Signal, Trajectory

SYSTEM_ID = "bilinear-2x2"
U_STAR = np.array([1.0, 1.0])
P_BAR = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])


def bilinear_rhs(t, x, u, v):
    if np.ndim(x) == 1 and np.ndim(u) == 1 and np.ndim(v) == 1:
        return np.array([u[0] * v[0], max(0.0, x[0]) * u[1] * v[1]])
    x = np.asarray(x)
    u = np.asarray(u)
    v = np.asarray(v)
    a = u[..., 0] * v[..., 0]
    b = np.maximum(0.0, x[..., 0]) * u[..., 1] * v[..., 1]
    return np.stack(np.broadcast_arrays(a, b), axis=-1)


def make_bilinear(control_resolution: int = 9, box: float = 2.0) -> Dynamics:
    return Dynamics(
        n=2, p=2, q=2,
        f=bilinear_rhs,
        control_set=Box([-1.0, -1.0], [1.0, 1.0], control_resolution),
        disturbance_set=FiniteSet(P_BAR.copy()),
        horizon=(0.0, 1.0),
        growth_K=1.0,
        lipschitz_L=1.0,
        state_box=([-box, -box], [box, box]),
        name=SYSTEM_ID,
    )


def terminal_x2(x: np.ndarray) -> np.ndarray:
    return np.asarray(x)[..., 1]


def cost_x2(traj: Trajectory) -> float:
    return float(traj.final[1])


def analytic_quasi_value() -> float:
    return -0.5


def analytic_value(t: float, x) -> float:
    """Quasi-strategy value from (t, x): x2 - int_t^1 max(0, x1 + s - t) ds."""
    r = 1.0 - t
    a = float(x[0])
    if a >= 0.0:
        grow = a * r + 0.5 * r * r
    elif a > -r:
        grow = 0.5 * (r + a) ** 2
    else:
        grow = 0.0
    return float(x[1]) - grow


def explicit_feedback_block(history: Trajectory, u_prev, part: Partition, i: int) -> np.ndarray:
    """Closed-form extremal-shift control for block ``i >= 1``.

    u1 maximises u1 * dx1 / u1_prev and u2 minimises u2 * dx2 / u2_prev over
    {-1, 1}, where dx is the increment over the previous block; ties go to +1.
    """
    if i < 1:
        raise ModelError("explicit feedback needs a previous block")
    u_prev = np.asarray(u_prev, float)
    if (u_prev == 0).any():
        raise ModelError("explicit feedback needs nonzero previous control components")
    dx = history.at(part.times[i]) - history.at(part.times[i - 1])
    q1 = dx[0] / u_prev[0]
    q2 = dx[1] / u_prev[1]
    u1 = -1.0 if q1 < 0 else 1.0   # argmax of u1 * q1, tie -> +1
    u2 = -1.0 if q2 > 0 else 1.0   # argmin of u2 * q2, tie -> +1
    return np.array([u1, u2])


class ExplicitBilinearFeedback:
    """Full-memory feedback for the bilinear game that needs no target oracle."""

    name = "explicit"

    def __init__(self, u_star=U_STAR):
        self.u_star = np.asarray(u_star, float)
        self.u_prev = self.u_star
        self.part: Partition | None = None

    def reset(self, z0, part: Partition) -> None:
        self.part = part
        self.u_prev = self.u_star

    def block(self, i: int, history: Trajectory) -> Signal:
        a, b = self.part.times[i], self.part.times[i + 1]
        u = self.u_star if i == 0 else explicit_feedback_block(history, self.u_prev, self.part, i)
        self.u_prev = u
        return Signal.constant(u, a, b)
