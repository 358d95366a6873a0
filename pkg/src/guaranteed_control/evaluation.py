"""Disturbance ensembles and simulated estimates of guaranteed results.

An estimate is the largest cost a strategy incurs over a finite family of
disturbances, so it is a lower estimate of the true supremum. Finite signal
banks are compact in every Lp, which is how compactly constrained
disturbance classes are represented here. Adversarial members react to the
realised motion; when they decide on the controller's own partition they
leave every fixed compact family and probe the arbitrary-disturbance case.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import Dynamics, ModelError, NumericalError, Partition, Signal, Trajectory
from .oracle import OracleError, ValueTable
from .strategies import simulate_closed_loop

log = logging.getLogger(__name__)

LP_EXPONENT = 2  # metadata only; finite banks are compact for every p


# ---------------------------------------------------------------------------
# Ensemble components
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OpenLoopBank:
    signals: tuple
    name: str = "bank"

    def resolve(self, dyn: Dynamics) -> list:
        return list(self.signals)


def constant_bank(dyn: Dynamics, name: str = "const") -> OpenLoopBank:
    """One constant signal per enumerated disturbance point."""
    return OpenLoopBank(tuple(Signal.constant(v, dyn.t0, dyn.theta)
                              for v in dyn.disturbance_set.enumerate()), name)


@dataclass(frozen=True)
class RandomBangBang:
    """Signals switching between extreme disturbance values at Poisson times."""

    count: int
    rate: float
    seed: int
    name: str = "bangbang"

    def resolve(self, dyn: Dynamics) -> list[Signal]:
        if self.seed is None:
            raise ModelError("RandomBangBang needs an explicit seed")
        rng = np.random.default_rng(self.seed)
        vals = dyn.disturbance_set.vertices()
        m = vals.shape[0]
        out = []
        for _ in range(self.count):
            t = dyn.t0
            cur = int(rng.integers(m))
            bps = [t]
            seq = [vals[cur]]
            while True:
                t = t + rng.exponential(1.0 / self.rate) if self.rate > 0 else math.inf
                if t >= dyn.theta - 1e-9:
                    break
                if m > 1:
                    nxt = int(rng.integers(m - 1))
                    cur = nxt if nxt < cur else nxt + 1
                bps.append(t)
                seq.append(vals[cur])
            bps.append(dyn.theta)
            out.append(Signal(bps, seq))
        return out


@dataclass(frozen=True)
class BlockRandom:
    """Independent uniform disturbance value on each of ``blocks`` equal pieces."""

    count: int
    blocks: int
    seed: int
    name: str = "blockrandom"

    def resolve(self, dyn: Dynamics) -> list[Signal]:
        rng = np.random.default_rng(self.seed)
        vals = dyn.disturbance_set.enumerate()
        bps = np.linspace(dyn.t0, dyn.theta, self.blocks + 1)
        return [Signal(bps, vals[rng.integers(vals.shape[0], size=self.blocks)])
                for _ in range(self.count)]


class GreedyAdversary:
    """Reactive disturbance maximising the interpolated lower value one
    decision step ahead.

    At each decision instant it reads the current state and the control that
    was in force just before, assumes that control persists, and picks the
    disturbance whose Euler prediction lands on the largest value. Before any
    control has been seen it assumes the best reply (max over v of min over
    u). A heuristic opponent, not a worst case.
    """

    def __init__(self, dyn: Dynamics, table: ValueTable, blocks: int | None):
        self.dyn = dyn
        self.table = table
        self.blocks = blocks
        self._times = None

    def reset(self, part: Partition) -> None:
        if self.blocks is None:
            self._times = np.asarray(part.times[:-1], float)
        else:
            self._times = np.linspace(self.dyn.t0, self.dyn.theta, self.blocks + 1)[:-1]

    def decision_times(self) -> np.ndarray:
        return self._times

    def _next_time(self, t: float) -> float:
        later = self._times[self._times > t + 1e-12]
        return float(later[0]) if later.size else self.dyn.theta

    def decide(self, t: float, history: Trajectory, u_last) -> np.ndarray:
        dyn = self.dyn
        x = history.final
        t1 = self._next_time(t)
        vs = dyn.disturbance_set.enumerate()
        lo, hi = self.table.lower, self.table.upper
        if u_last is None:
            us = dyn.control_set.enumerate()
            nxt = x + (t1 - t) * dyn(t, x[None, None, :], us[None, :, :], vs[:, None, :])
            score = np.array([[self.table.value(t1, np.clip(p, lo, hi)) for p in row] for row in nxt])
            score = score.min(axis=1)
        else:
            nxt = x + (t1 - t) * dyn(t, x[None, :], np.asarray(u_last)[None, :], vs)
            score = np.array([self.table.value(t1, np.clip(p, lo, hi)) for p in nxt])
        return vs[int(np.argmax(score))]


@dataclass(frozen=True, eq=False)
class AdversarialFeedback:
    """``blocks=None`` decides on the controller's partition; an integer fixes
    a partition of its own, independent of the controller's."""

    table: ValueTable
    blocks: int | None = None
    name: str = "adversary"

    def resolve(self, dyn: Dynamics) -> list:
        return [_AdversaryFactory(dyn, self.table, self.blocks)]


@dataclass(frozen=True, eq=False)
class _AdversaryFactory:
    dyn: Dynamics
    table: ValueTable
    blocks: int | None

    def __call__(self) -> GreedyAdversary:
        return GreedyAdversary(self.dyn, self.table, self.blocks)


@dataclass(frozen=True, eq=False)
class DisturbanceEnsemble:
    components: tuple
    name: str = "ensemble"

    def members(self, dyn: Dynamics) -> list[tuple[str, object]]:
        out = []
        seen = set()
        for comp in self.components:
            for k, m in enumerate(comp.resolve(dyn)):
                mid = f"{comp.name}/{k}"
                if mid in seen:
                    raise ModelError(f"duplicate ensemble member id {mid}")
                seen.add(mid)
                out.append((mid, m))
        return out

    def union(self, *others: "DisturbanceEnsemble", name: str | None = None) -> "DisturbanceEnsemble":
        comps = list(self.components)
        for o in others:
            comps += [c for c in o.components if c not in comps]
        return DisturbanceEnsemble(tuple(comps), name or "+".join([self.name] + [o.name for o in others]))


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------


@dataclass
class ResultEstimate:
    strategy: str
    ensemble: str
    diam: float
    eps: float | None
    sup_cost: float
    argmax_member: str
    costs: dict
    failures: dict = field(default_factory=dict)
    warning: bool = False

    def restrict(self, member_ids: Iterable[str], ensemble: str) -> "ResultEstimate":
        """Estimate over a sub-family of already evaluated members."""
        ids = [m for m in self.costs if m in set(member_ids)]
        if not ids:
            raise ModelError("restriction leaves no evaluated member")
        best = _argmax(ids, self.costs)
        fails = {m: e for m, e in self.failures.items() if m in set(member_ids)}
        return ResultEstimate(self.strategy, ensemble, self.diam, self.eps, self.costs[best], best,
                              {m: self.costs[m] for m in ids}, fails, bool(fails))


def _argmax(ids: Sequence[str], costs: dict) -> str:
    best = ids[0]
    for m in ids[1:]:
        if costs[m] > costs[best]:
            best = m
    return best


def _run_member(args):
    dyn, cost, factory, member, part, z0, substeps = args
    dist = member if isinstance(member, Signal) else member()
    try:
        run = simulate_closed_loop(dyn, part, factory(), dist, z0, substeps)
        c = float(cost(run.trajectory))
        if not math.isfinite(c):
            raise NumericalError("non-finite cost")
        return c, None
    except (NumericalError, ModelError, OracleError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def estimate_guaranteed_result(dyn: Dynamics, cost: Callable[[Trajectory], float], feedback_factory,
                               ensemble: DisturbanceEnsemble, part: Partition, z0,
                               substeps: int = 8, strategy: str = "", eps: float | None = None,
                               jobs: int = 1) -> ResultEstimate:
    """Simulate every member with a fresh feedback and take the largest cost.

    Members whose simulation fails are reported in ``failures`` and left out
    of the supremum.
    """
    members = ensemble.members(dyn)
    if not members:
        raise ModelError("empty ensemble")
    tasks = [(dyn, cost, feedback_factory, m, part, np.asarray(z0, float), substeps) for _, m in members]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_member, tasks))
    else:
        results = [_run_member(t) for t in tasks]
    costs, failures = {}, {}
    for (mid, _), (c, err) in zip(members, results):
        if err is None:
            costs[mid] = c
        else:
            failures[mid] = err
            log.warning("member %s failed: %s", mid, err)
    if not costs:
        raise NumericalError("every ensemble member failed")
    best = _argmax(list(costs), costs)
    return ResultEstimate(strategy, ensemble.name, part.diam, eps, costs[best], best, costs,
                          failures, bool(failures))


@dataclass
class ChainReport:
    passed: bool
    values: dict
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "values": self.values,
                "violations": [{"link": a, "magnitude": m} for a, m in self.violations]}


def chain_check(gq: float, gp: float, gc: float, gs: float, tol: float) -> ChainReport:
    """Check q <= p <= c <= s up to ``tol`` on every link."""
    names = ["q", "p", "c", "s"]
    vals = [gq, gp, gc, gs]
    viol = []
    for k in range(3):
        excess = vals[k] - vals[k + 1]
        if excess > tol:
            viol.append((f"{names[k]}<={names[k + 1]}", excess))
    return ChainReport(not viol, dict(zip(names, vals)), viol)


def guaranteed_results(dyn: Dynamics, cost, feedback_factory, part: Partition, z0,
                       open_loop: DisturbanceEnsemble, compact: Sequence[DisturbanceEnsemble],
                       adversarial: DisturbanceEnsemble, gq: float, tol: float,
                       substeps: int = 8, strategy: str = "", jobs: int = 1):
    """Estimates for the open-loop, compact and arbitrary disturbance classes
    on nested ensembles, plus the ordering check against the grid value."""
    c_ens = open_loop.union(*compact, name="compact")
    s_ens = c_ens.union(adversarial, name="arbitrary")
    full = estimate_guaranteed_result(dyn, cost, feedback_factory, s_ens, part, z0, substeps,
                                      strategy, jobs=jobs)
    ids = lambda ens: [m for m, _ in ens.members(dyn)]  # noqa: E731
    est = {
        "p": full.restrict(ids(open_loop), open_loop.name),
        "c": full.restrict(ids(c_ens), c_ens.name),
        "s": full,
    }
    report = chain_check(gq, est["p"].sup_cost, est["c"].sup_cost, est["s"].sup_cost, tol)
    return est, report


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------


@dataclass
class StudyTable:
    strategy: str
    estimates: list
    reference: float | None
    tol: float
    lower_bound: float | None
    lower_tol: float

    def matrix(self) -> dict:
        return {(e.eps, e.diam): e.sup_cost for e in self.estimates}

    def series(self, eps=None) -> list[ResultEstimate]:
        rows = [e for e in self.estimates if eps is None or e.eps == eps]
        return sorted(rows, key=lambda e: -e.diam)

    def running_minima(self) -> list[float]:
        out, best = [], math.inf
        for e in self.series():
            best = min(best, e.sup_cost)
            out.append(best)
        return out

    def nonincreasing(self, slack: float = 0.0) -> bool:
        s = [e.sup_cost for e in self.series()]
        return all(b <= a + slack for a, b in zip(s, s[1:]))

    @property
    def final(self) -> float:
        return self.series()[-1].sup_cost

    def trend_to_reference(self) -> bool:
        if self.reference is None:
            return False
        return self.nonincreasing() and self.final <= self.reference + self.tol

    def lower_bound_ok(self) -> bool:
        if self.lower_bound is None:
            return True
        return all(e.sup_cost >= self.lower_bound - self.lower_tol for e in self.estimates)

    def summary(self) -> dict:
        return {
            "type": "summary",
            "strategy": self.strategy,
            "diams": [e.diam for e in self.series()],
            "eps": [e.eps for e in self.series()],
            "sup_costs": [e.sup_cost for e in self.series()],
            "running_min": self.running_minima(),
            "nonincreasing": self.nonincreasing(),
            "reference": self.reference,
            "trend_to_reference": self.trend_to_reference(),
            "lower_bound": self.lower_bound,
            "lower_bound_ok": self.lower_bound_ok(),
        }

    def records(self) -> list[dict]:
        recs = []
        for e in self.series():
            for mid, c in e.costs.items():
                recs.append({"type": "member", "strategy": e.strategy, "eps": e.eps, "diam": e.diam,
                             "member": mid, "cost": c})
            for mid, err in e.failures.items():
                recs.append({"type": "failure", "strategy": e.strategy, "eps": e.eps, "diam": e.diam,
                             "member": mid, "error": err})
        return recs


def convergence_study(dyn: Dynamics, cost, family: Callable, ensemble: DisturbanceEnsemble,
                      diams: Sequence[float], z0, eps_values: Sequence | None = None,
                      coupled: bool = False, reference: float | None = None, tol: float = 0.1,
                      lower_bound: float | None = None, lower_tol: float = 0.02,
                      substeps: int = 8, strategy: str = "", jobs: int = 1) -> StudyTable:
    """Sup-cost over a grid of (eps, diam).

    ``family(eps, diam)`` returns a zero-argument feedback factory. With
    ``coupled`` the k-th eps is paired with the k-th diam instead of taking
    the product.
    """
    eps_values = [None] if eps_values is None else list(eps_values)
    if coupled:
        if len(eps_values) != len(diams):
            raise ModelError("coupled study needs one eps per diam")
        pairs = list(zip(eps_values, diams))
    else:
        pairs = [(e, d) for e in eps_values for d in diams]
    ests = []
    for eps, diam in pairs:
        steps = int(round((dyn.theta - dyn.t0) / diam))
        part = Partition.uniform(dyn.t0, dyn.theta, steps)
        est = estimate_guaranteed_result(dyn, cost, family(eps, diam), ensemble, part, z0, substeps,
                                         strategy, eps, jobs)
        log.info("%s eps=%s diam=%.5g sup=%.6f (%s)", strategy, eps, diam, est.sup_cost, est.argmax_member)
        ests.append(est)
    table = StudyTable(strategy, ests, reference, tol, lower_bound, lower_tol)
    if not table.lower_bound_ok():
        log.warning("study %s dropped below the grid lower value", strategy)
    return table


def write_jsonl(records: Iterable[dict], path, digest: str | None = None) -> None:
    with open(path, "w") as fh:
        for r in records:
            if digest is not None:
                r = {**r, "config_digest": digest}
            fh.write(json.dumps(r, sort_keys=True, default=_json_default) + "\n")


def write_study_csv(table: StudyTable, path, digest: str | None = None) -> None:
    lines = [] if digest is None else [f"# config_digest={digest}"]
    lines.append("strategy,eps,diam,member,cost")
    for r in table.records():
        if r["type"] == "member":
            eps = "" if r["eps"] is None else "%.17g" % r["eps"]
            lines.append(f"{r['strategy']},{eps},{r['diam']:.17g},{r['member']},{r['cost']:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
