"""Registry of built-in systems addressed by id from configs."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .bilinear import SYSTEM_ID as BILINEAR_ID
from .bilinear import make_bilinear
from .core import Box, Dynamics, FiniteSet


def _lead(x, u, v) -> tuple:
    return np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1], np.shape(v)[:-1])


def _fit(out: np.ndarray, x, u, v) -> np.ndarray:
    return np.broadcast_to(out, _lead(x, u, v) + (np.shape(x)[-1],)).copy()


def zero_rhs(t, x, u, v):
    return np.zeros(_lead(x, u, v) + (np.shape(x)[-1],))


def cancel_rhs(t, x, u, v):
    return _fit(np.asarray(u) + np.asarray(v), x, u, v)


def separable_rhs(t, x, u, v):
    u, v = np.asarray(u), np.asarray(v)
    a = u[..., 0] + 0.5 * v[..., 0]
    b = -u[..., 1] * u[..., 1] + v[..., 1]
    return _fit(np.stack(np.broadcast_arrays(a, b), axis=-1), x, u, v)


def normdiff_rhs(t, x, u, v):
    return _fit(np.abs(np.asarray(u) - np.asarray(v)), x, u, v)


def make_zero() -> Dynamics:
    return Dynamics(2, 2, 2, zero_rhs, Box([-1, -1], [1, 1], 9),
                    FiniteSet([[-1, -1], [-1, 1], [1, -1], [1, 1]]),
                    (0.0, 1.0), 0.0, 0.0, ([-4, -4], [4, 4]), "zero")


def make_cancel() -> Dynamics:
    """Scalar x' = u + v; a controller that sees v cancels it exactly."""
    return Dynamics(1, 1, 1, cancel_rhs, Box([-1], [1], 9), FiniteSet([[-1], [1]]),
                    (0.0, 1.0), 2.0, 0.0, ([-2], [2]), "cancel")


def make_separable() -> Dynamics:
    return Dynamics(2, 2, 2, separable_rhs, Box([-1, -1], [1, 1], 9),
                    FiniteSet([[-1, -1], [-1, 1], [1, -1], [1, 1]]),
                    (0.0, 1.0), 3.0, 0.0, ([-4, -4], [4, 4]), "separable")


def make_normdiff() -> Dynamics:
    """Scalar x' = |u - v|, Q = {-1, 1}: the test control 0 cannot tell v apart."""
    return Dynamics(1, 1, 1, normdiff_rhs, Box([-1], [1], 9), FiniteSet([[-1], [1]]),
                    (0.0, 1.0), 2.0, 0.0, ([-3], [3]), "normdiff")


REGISTRY: dict[str, Callable[[], Dynamics]] = {
    BILINEAR_ID: make_bilinear,
    "zero": make_zero,
    "cancel": make_cancel,
    "separable": make_separable,
    "normdiff": make_normdiff,
}


def get_system(system_id: str) -> Dynamics:
    try:
        return REGISTRY[system_id]()
    except KeyError:
        raise KeyError(f"unknown system id {system_id!r}; known: {sorted(REGISTRY)}") from None
