"""Dynamic inversion: recovering a surrogate disturbance from state increments,
plus sampled checks of the structural conditions that make it work.

Every argmin below is a finite search over the enumerated disturbance set with
ties going to the lowest enumeration index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import Dynamics, ModelError, TestSchedule, Trajectory, grid_points


def default_tol(images: np.ndarray) -> float:
    """Scale-aware equality threshold for f-images."""
    scale = float(np.linalg.norm(images, axis=-1).max()) if images.size else 0.0
    return 1e-9 * (1.0 + scale)


def _q_points(dyn: Dynamics) -> np.ndarray:
    vs = dyn.disturbance_set.enumerate()
    if vs.shape[0] == 0:
        raise ModelError("disturbance set enumerates to nothing")
    return vs


# ---------------------------------------------------------------------------
# Divided differences and surrogate identification
# ---------------------------------------------------------------------------


def divided_differences(x: Trajectory, sched: TestSchedule, i: int) -> np.ndarray:
    """Slopes of ``x`` over the test sub-windows of block ``i``.

    Row ``j-1`` is ``(x(t'_ij) - x(t'_i(j-1))) / (t'_ij - t'_i(j-1))``.
    """
    inst = sched.window(i)
    xs = np.array([x.at(t) for t in inst])
    d = np.diff(xs, axis=0) / np.diff(inst)[:, None]
    if not np.isfinite(d).all():
        raise ModelError("non-finite divided difference")
    return d


def identify_surrogate_multi(dyn: Dynamics, t: float, x, test_controls, d) -> np.ndarray:
    """argmin over v of max_j ||d_j - f(t, x, u_j, v)||."""
    vs = _q_points(dyn)
    us = np.atleast_2d(np.asarray(test_controls, float))
    d = np.atleast_2d(np.asarray(d, float))
    if us.shape[0] != d.shape[0]:
        raise ModelError("need one divided difference per test control")
    x = np.asarray(x, float)
    imgs = dyn(t, x[None, None, :], us[None, :, :], vs[:, None, :])  # (nv, nt, n)
    err = np.linalg.norm(d[None] - imgs, axis=-1).max(axis=1)
    return vs[int(np.argmin(err))]


def identify_surrogate_single(dyn: Dynamics, t_prev: float, t: float, x_prev, x,
                              u_prev) -> np.ndarray:
    """Surrogate from one increment under the previously applied control."""
    if not t > t_prev:
        raise ModelError("identification needs t > t_prev")
    slope = (np.asarray(x, float) - np.asarray(x_prev, float)) / (t - t_prev)
    return identify_surrogate_multi(dyn, t, x, [u_prev], [slope])


# ---------------------------------------------------------------------------
# Quotient classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuotientClasses:
    """Partition of the enumerated Q into classes of equal f-image at (t, x, u)."""

    t: float
    x: np.ndarray
    u: np.ndarray
    points: np.ndarray
    labels: np.ndarray
    tol_f: float

    @property
    def classes(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(int(self.labels.max()) + 1)]

    def __len__(self) -> int:
        return int(self.labels.max()) + 1

    def class_of(self, index: int) -> np.ndarray:
        return np.flatnonzero(self.labels == self.labels[index])

    def same_class(self) -> np.ndarray:
        return self.labels[:, None] == self.labels[None, :]


def _cluster(images: np.ndarray, tol: float) -> np.ndarray:
    # complete linkage, first fit in enumeration order
    labels = np.full(images.shape[0], -1, dtype=int)
    members: list[list[int]] = []
    for k, img in enumerate(images):
        for c, idx in enumerate(members):
            if np.linalg.norm(images[idx] - img, axis=-1).max() <= tol:
                idx.append(k)
                labels[k] = c
                break
        else:
            labels[k] = len(members)
            members.append([k])
    return labels


def quotient_classes(dyn: Dynamics, t: float, x, u, tol_f: float | None = None) -> QuotientClasses:
    vs = _q_points(dyn)
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    imgs = dyn(t, x[None, :], u[None, :], vs)
    tol = default_tol(imgs) if tol_f is None else tol_f
    return QuotientClasses(t, x, u, vs, _cluster(imgs, tol), tol)


# ---------------------------------------------------------------------------
# Sampled checkers
# ---------------------------------------------------------------------------


@dataclass
class CheckReport:
    check: str
    passed: bool
    worst_gap: float | None = None
    witness: dict = field(default_factory=dict)
    n_samples: int = 0
    n_violations: int = 0
    records: list[dict] = field(default_factory=list)

    @property
    def result(self) -> str:
        return "pass" if self.passed else "fail"

    def to_text(self) -> str:
        lines = [f"check={self.check}", f"result={self.result}"]
        if self.worst_gap is not None:
            lines.append(f"worst_gap={self.worst_gap:.17g}")
        lines.append(f"samples={self.n_samples}")
        lines.append(f"violations={self.n_violations}")
        for k, v in self.witness.items():
            lines.append(f"witness_{k}={_fmt_value(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CheckReport":
        kv = dict(ln.split("=", 1) for ln in text.splitlines() if "=" in ln)
        witness = {k[len("witness_"):]: v for k, v in kv.items() if k.startswith("witness_")}
        gap = kv.get("worst_gap")
        return cls(kv["check"], kv["result"] == "pass",
                   None if gap is None else float(gap), witness,
                   int(kv.get("samples", 0)), int(kv.get("violations", 0)))


def _fmt_value(v) -> str:
    if isinstance(v, (str, int)):
        return str(v)
    arr = np.atleast_1d(np.asarray(v, float))
    return ",".join("%.17g" % a for a in arr)


def state_samples(lower, upper, per_axis: int, times: Iterable[float]) -> list[tuple[float, np.ndarray]]:
    axes = [np.linspace(a, b, per_axis) for a, b in zip(np.atleast_1d(lower), np.atleast_1d(upper))]
    pts = grid_points(axes)
    return [(float(t), x) for t in times for x in pts]


def unit_directions(n: int, count: int = 8) -> np.ndarray:
    """Shift directions on the unit sphere; always includes the signed axes."""
    dirs = [s * e for e in np.eye(n) for s in (1.0, -1.0)]
    if n == 1:
        return np.array(dirs)
    rng = np.random.default_rng(12345)
    if n == 2:
        ang = np.linspace(0, 2 * np.pi, count, endpoint=False) + np.pi / count
        dirs += list(np.column_stack([np.cos(ang), np.sin(ang)]))
    else:
        extra = rng.normal(size=(count, n))
        dirs += list(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    return np.array(dirs)


def check_assumption1(dyn: Dynamics, test_set, samples: Sequence[tuple[float, np.ndarray]],
                      probe_controls, tol_f: float | None = None) -> CheckReport:
    """For every sampled (t, x), probe u and v: the intersection of the classes
    of v under the test controls must lie inside the class of v under u."""
    tests = np.atleast_2d(np.asarray(test_set, float))
    probes = np.atleast_2d(np.asarray(probe_controls, float))
    rep = CheckReport("assumption1", True, n_samples=len(samples))
    for t, x in samples:
        finest = None
        for ub in tests:
            same = quotient_classes(dyn, t, x, ub, tol_f).same_class()
            finest = same if finest is None else finest & same
        for u in probes:
            qc = quotient_classes(dyn, t, x, u, tol_f)
            bad = finest & ~qc.same_class()
            if bad.any():
                rep.n_violations += 1
                if rep.passed:
                    a, b = np.argwhere(bad)[0]
                    rep.passed = False
                    rep.witness = {"t": t, "x": x, "u": u, "v": qc.points[a], "v_prime": qc.points[b]}
    return rep


def check_assumption2(dyn: Dynamics, p_bar, samples: Sequence[tuple[float, np.ndarray, np.ndarray]],
                      tol_f: float | None = None) -> CheckReport:
    """(a) some point of p_bar attains min over P of <s, f> for every v;
    (b) the quotient classes agree for all pairs of p_bar points."""
    pb = np.atleast_2d(np.asarray(p_bar, float))
    us = dyn.control_set.enumerate()
    vs = _q_points(dyn)
    rep = CheckReport("assumption2", True, worst_gap=0.0, n_samples=len(samples))
    seen_tx: set = set()
    for t, x, s in samples:
        x = np.asarray(x, float)
        s = np.asarray(s, float)
        full = dyn(t, x[None, None, :], us[:, None, :], vs[None, :, :]) @ s  # (nu, nv)
        sub = dyn(t, x[None, None, :], pb[:, None, :], vs[None, :, :]) @ s
        tol = default_tol(full[..., None]) if tol_f is None else tol_f
        gaps = sub.min(axis=0) - full.min(axis=0)
        k = int(np.argmax(gaps))
        if gaps[k] > rep.worst_gap:
            rep.worst_gap = float(gaps[k])
        if gaps[k] > tol:
            rep.n_violations += 1
            if rep.passed:
                rep.passed = False
                rep.witness = {"part": "a", "t": t, "x": x, "s": s, "v": vs[k], "gap": float(gaps[k])}
        key = (t, x.tobytes())
        if key in seen_tx:
            continue
        seen_tx.add(key)
        labels = [quotient_classes(dyn, t, x, u, tol_f).same_class() for u in pb]
        for a in range(len(pb)):
            for b in range(a + 1, len(pb)):
                if not np.array_equal(labels[a], labels[b]):
                    rep.n_violations += 1
                    if rep.passed:
                        rep.passed = False
                        rep.witness = {"part": "b", "t": t, "x": x, "u": pb[a], "u_prime": pb[b]}
    return rep


def check_saddle(dyn: Dynamics, samples: Sequence[tuple[float, np.ndarray, np.ndarray]],
                 tol: float = 1e-9) -> CheckReport:
    """Compare min_u max_v and max_v min_u of <s, f> over the enumerations."""
    us = dyn.control_set.enumerate()
    vs = _q_points(dyn)
    rep = CheckReport("saddle", True, worst_gap=-np.inf, n_samples=len(samples))
    for t, x, s in samples:
        x = np.asarray(x, float)
        s = np.asarray(s, float)
        pay = dyn(t, x[None, None, :], us[:, None, :], vs[None, :, :]) @ s
        minmax = float(pay.max(axis=1).min())
        maxmin = float(pay.min(axis=0).max())
        gap = minmax - maxmin
        rep.records.append({"t": t, "x": x, "s": s, "minmax": minmax, "maxmin": maxmin, "gap": gap})
        if gap > tol:
            rep.n_violations += 1
            rep.passed = False
        if gap > rep.worst_gap:
            rep.worst_gap = gap
            rep.witness = {"t": t, "x": x, "s": s, "minmax": minmax, "maxmin": maxmin}
    if not samples:
        rep.worst_gap = 0.0
    return rep
