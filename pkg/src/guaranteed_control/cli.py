"""Command-line runner: ``guarctl {simulate,value,check,study} --config FILE``.

Exit status: 0 on success, 1 on invalid configuration or model errors, 2 on
numerical failures (escape from the working box, non-finite values).
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bilinear
from .config import ConfigError, ExperimentConfig, load_config, require_ensemble_seed
from .core import (
    Box,
    Dynamics,
    FiniteSet,
    NumericalError,
    Partition,
    Signal,
    write_signal_csv,
    write_trajectory_csv,
)
from .evaluation import (
    AdversarialFeedback,
    BlockRandom,
    DisturbanceEnsemble,
    GreedyAdversary,
    RandomBangBang,
    constant_bank,
    convergence_study,
    guaranteed_results,
    write_jsonl,
)
from .expr import InlineRHS, TerminalExpression
from .inversion import (
    check_assumption1,
    check_assumption2,
    check_saddle,
    state_samples,
    unit_directions,
)
from .oracle import (
    GridGeometry,
    OracleError,
    ValueGradientOracle,
    dp_quasi_value,
    exact_projection_oracle,
)
from .strategies import (
    ConstantFeedback,
    EpsilonFeedback,
    EpsilonStrategyConfig,
    UStarConfig,
    UStarFeedback,
    epsilon_net,
    simulate_closed_loop,
)
from .systems import get_system

log = logging.getLogger("guaranteed_control")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

DEFAULT_GRID = {bilinear.SYSTEM_ID: ([-1.2, -1.2], [1.2, 1.2])}


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _set_spec(sv: dict, prefix: str, default_res: int):
    if f"{prefix}_points" in sv:
        return FiniteSet(sv[f"{prefix}_points"])
    return Box(sv[f"{prefix}_lower"], sv[f"{prefix}_upper"], sv.get(f"{prefix}_resolution", default_res))


def build_dynamics(cfg: ExperimentConfig) -> Dynamics:
    sv = cfg["system"]
    if sv["id"] == bilinear.SYSTEM_ID:
        return bilinear.make_bilinear(sv["control_resolution"])
    if sv["id"] != "inline":
        return get_system(sv["id"])
    n, p, q = sv["state_dim"], sv["control_dim"], sv["disturbance_dim"]
    try:
        rhs = InlineRHS([sv[f"f{k}"] for k in range(1, n + 1)], n, p, q)
    except ValueError as exc:
        raise cfg.error("system", "f1", str(exc)) from None
    box = None
    if "state_lower" in sv or "state_upper" in sv:
        box = (sv.get("state_lower", [-np.inf] * n), sv.get("state_upper", [np.inf] * n))
    return Dynamics(n, p, q, rhs, _set_spec(sv, "control", 9), _set_spec(sv, "disturbance", 3),
                    tuple(sv["horizon"]), sv["growth_k"], sv["lipschitz_l"], box, "inline")


def build_cost(cfg: ExperimentConfig, dyn: Dynamics) -> TerminalExpression:
    text = cfg["cost"].get("terminal", f"x{dyn.n}")
    try:
        return TerminalExpression(text, dyn.n)
    except ValueError as exc:
        raise cfg.error("cost", "terminal", str(exc)) from None


def initial_state(cfg: ExperimentConfig, dyn: Dynamics) -> np.ndarray:
    z0 = np.asarray(cfg["system"].get("z0", [0.0] * dyn.n), float)
    if z0.shape != (dyn.n,):
        raise cfg.error("system", "z0", f"expected {dyn.n} components")
    return z0


def grid_geometry(cfg: ExperimentConfig, dyn: Dynamics) -> GridGeometry:
    g = cfg["grid"]
    lo, hi = DEFAULT_GRID.get(cfg["system"]["id"], (None, None))
    if lo is None and dyn.state_box is not None:
        lo, hi = dyn.state_box[0].tolist(), dyn.state_box[1].tolist()
    lo, hi = g.get("lower", lo), g.get("upper", hi)
    if lo is None or hi is None:
        raise cfg.error("grid", "lower", "grid box needed (no state box declared)")
    if len(lo) != dyn.n or len(hi) != dyn.n:
        raise cfg.error("grid", "lower", f"grid box must have {dyn.n} components")
    return GridGeometry(tuple(lo), tuple(hi), g["nodes"], g["time_steps"])


class Context:
    """Lazily built objects shared by the subcommands."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dyn = build_dynamics(cfg)
        self.cost = build_cost(cfg, self.dyn)
        self.z0 = initial_state(cfg, self.dyn)
        self._table = None

    @property
    def table(self):
        if self._table is None:
            self._table = dp_quasi_value(self.dyn, self.cost, grid_geometry(self.cfg, self.dyn),
                                         self.cfg["grid"]["order"])
        return self._table

    def oracle(self):
        o = self.cfg["oracle"]
        if o["kind"] == "dp":
            return ValueGradientOracle(self.table)
        spec = ({"kind": "line", "velocity": o["line_velocity"]} if "line_velocity" in o
                else self.cfg["system"]["id"])
        try:
            return exact_projection_oracle(spec)
        except OracleError as exc:
            raise self.cfg.error("oracle", "kind", str(exc)) from None

    def partition(self, steps: int) -> Partition:
        return Partition.uniform(self.dyn.t0, self.dyn.theta, steps)

    def _control_points(self, key: str, section: str = "strategy"):
        pts = self.cfg[section].get(key)
        if pts is None:
            return None
        arr = np.asarray(pts, float)
        if arr.shape[-1] != self.dyn.p:
            raise self.cfg.error(section, key, f"controls must have {self.dyn.p} components")
        return arr

    def p_bar(self, section: str = "strategy"):
        pb = self._control_points("p_bar", section)
        if pb is None and section != "strategy":
            pb = self._control_points("p_bar")
        if pb is not None:
            return pb
        if self.dyn.name == bilinear.SYSTEM_ID:
            return bilinear.P_BAR
        return self.dyn.control_set.vertices()

    def test_set(self, section: str = "strategy"):
        ts = self._control_points("test_set", section)
        if ts is None and section != "strategy":
            ts = self._control_points("test_set")
        return ts

    def u_star(self):
        st = self.cfg["strategy"]
        if "u_star" in st:
            return np.asarray(st["u_star"], float)
        return bilinear.U_STAR if self.dyn.name == bilinear.SYSTEM_ID else None

    def feedback_factory(self, strategy: str, eps: float | None):
        """Zero-argument picklable callable returning a fresh feedback."""
        st = self.cfg["strategy"]
        v_star = None if "v_star" not in st else np.asarray(st["v_star"], float)
        try:
            if strategy == "constant":
                return functools.partial(ConstantFeedback, np.asarray(st["control"], float))
            if strategy == "explicit":
                if self.dyn.name != bilinear.SYSTEM_ID:
                    raise self.cfg.error("strategy", "id", "explicit feedback exists only for "
                                         + bilinear.SYSTEM_ID)
                return functools.partial(bilinear.ExplicitBilinearFeedback, self.u_star())
            oracle = self.oracle()
            if strategy == "ustar":
                ucfg = UStarConfig(self.dyn, self.p_bar(), oracle, st["substeps"], self.u_star(), v_star)
                return functools.partial(UStarFeedback, ucfg)
            eps = st["eps"] if eps is None else eps
            if strategy == "ubar":
                tests = self.test_set()
                if tests is None:
                    raise self.cfg.error("strategy", "test_set", "the finite-test strategy needs 'test_set'")
            else:
                tests = epsilon_net(self.dyn.control_set, st.get("net_eps", eps))
            if st["shift_set"].strip().upper() == "P":
                shifts = self.dyn.control_set.enumerate()
            else:
                from .config import _points
                try:
                    shifts = np.asarray(_points(st["shift_set"]), float)
                except ValueError as exc:
                    raise self.cfg.error("strategy", "shift_set", str(exc)) from None
            ecfg = EpsilonStrategyConfig(self.dyn, eps, tests, shifts, oracle, st["substeps"],
                                         self.u_star(), v_star)
            return functools.partial(EpsilonFeedback, ecfg)
        except ConfigError:
            raise
        except ValueError as exc:
            raise self.cfg.error("strategy", "id", str(exc)) from None

    def disturbance(self):
        d = self.cfg["disturbance"]
        kind = d["kind"]
        if kind == "constant":
            if "value" in d:
                val = np.asarray(d["value"], float)
                if val.shape != (self.dyn.q,) or not self.dyn.disturbance_set.contains(val, 1e-9):
                    raise self.cfg.error("disturbance", "value", "value is not in the disturbance set")
            else:
                pts = self.dyn.disturbance_set.enumerate()
                if not 0 <= d["index"] < len(pts):
                    raise self.cfg.error("disturbance", "index", "index out of range")
                val = pts[d["index"]]
            return Signal.constant(val, self.dyn.t0, self.dyn.theta)
        if kind == "bangbang":
            return RandomBangBang(1, d["rate"], d["seed"]).resolve(self.dyn)[0]
        if kind == "blockrandom":
            return BlockRandom(1, d["blocks"], d["seed"]).resolve(self.dyn)[0]
        return GreedyAdversary(self.dyn, self.table, d.get("blocks"))

    def ensemble_components(self) -> dict:
        e = self.cfg["ensemble"]
        comps = {}
        for kind in e["kind"]:
            if kind == "constants":
                comps[kind] = constant_bank(self.dyn)
            elif kind == "bangbang":
                comps[kind] = RandomBangBang(e["count"], e["rate"], require_ensemble_seed(self.cfg))
            elif kind == "blockrandom":
                comps[kind] = BlockRandom(e["count"], e["blocks"], require_ensemble_seed(self.cfg))
            elif kind == "adversary":
                blocks = e["adversary_blocks"] or None
                comps[kind] = AdversarialFeedback(self.table, blocks, "adversary")
            elif kind == "probe":
                comps[kind] = AdversarialFeedback(self.table, None, "probe")
        return comps


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _digest_lines(cfg: ExperimentConfig) -> tuple[str, ...]:
    return (f"config_digest={cfg.digest}",)


def cmd_simulate(ctx: Context, out: Path, jobs: int = 1) -> dict:
    cfg = ctx.cfg
    steps = cfg["partition"]["steps"]
    if len(steps) != 1:
        raise cfg.error("partition", "steps", "simulate takes a single partition")
    part = ctx.partition(steps[0])
    strategy = cfg["strategy"]["id"]
    run = simulate_closed_loop(ctx.dyn, part, ctx.feedback_factory(strategy, None)(),
                               ctx.disturbance(), ctx.z0, cfg["strategy"]["substeps"])
    comments = _digest_lines(cfg)
    write_trajectory_csv(run.trajectory, out / "trajectory.csv", "x", comments)
    write_signal_csv(run.control, out / "control.csv", "u", comments)
    write_signal_csv(run.disturbance, out / "disturbance.csv", "v", comments)
    if run.v_bars:
        rows = ["t," + ",".join(f"vbar{k + 1}" for k in range(ctx.dyn.q))]
        rows += [",".join("%.17g" % c for c in (t, *vb)) for t, vb in run.v_bars]
        (out / "surrogate.csv").write_text("".join(f"# {c}\n" for c in comments) + "\n".join(rows) + "\n")
    cost = float(ctx.cost.of_trajectory(run.trajectory))
    print(f"cost={cost:.6f}")
    return {"cost": cost}


def cmd_value(ctx: Context, out: Path, jobs: int = 1) -> float:
    table = ctx.table
    table.save_csv(out / "value_table.csv", _digest_lines(ctx.cfg))
    if not table.inside(ctx.z0):
        raise ctx.cfg.error("system", "z0", "z0 lies outside the grid box")
    v = table.value(ctx.dyn.t0, ctx.z0)
    if not np.isfinite(v):
        raise NumericalError("non-finite value at z0")
    print(f"{v:.6f}")
    return v


def _check_box(ctx: Context):
    c = ctx.cfg["check"]
    geo = None
    if "lower" not in c or "upper" not in c:
        geo = grid_geometry(ctx.cfg, ctx.dyn)
    lo = c.get("lower", None if geo is None else list(geo.lower))
    hi = c.get("upper", None if geo is None else list(geo.upper))
    return lo, hi


def cmd_check(ctx: Context, out: Path, jobs: int = 1):
    cfg = ctx.cfg
    c = cfg["check"]
    kind = c["kind"]
    dyn = ctx.dyn
    if kind == "bounds":
        res = dyn.check_bounds()
        text = "check=bounds\nresult={}\ngrowth_ratio={:.17g}\nlipschitz_ratio={:.17g}\n".format(
            "pass" if res["ok"] else "fail", res["growth_ratio"], res["lipschitz_ratio"])
    else:
        lo, hi = _check_box(ctx)
        samples = state_samples(lo, hi, c["per_axis"], c["times"])
        if "shifts" in c:
            dirs = np.asarray(c["shifts"], float)
            if dirs.shape[1] != dyn.n:
                raise cfg.error("check", "shifts", f"shift vectors must have {dyn.n} components")
        else:
            dirs = unit_directions(dyn.n, c["directions"])
        if kind == "assumption1":
            tests = ctx.test_set("check")
            if tests is None:
                raise cfg.error("check", "test_set", "assumption1 needs a test set")
            rep = check_assumption1(dyn, tests, samples, dyn.control_set.enumerate())
        elif kind == "assumption2":
            rep = check_assumption2(dyn, ctx.p_bar("check"), [(t, x, s) for t, x in samples for s in dirs])
        else:
            rep = check_saddle(dyn, [(t, x, s) for t, x in samples for s in dirs], c["tol"])
        text = rep.to_text()
    body = f"# config_digest={cfg.digest}\n" + text
    (out / f"check_{kind}.txt").write_text(body)
    sys.stdout.write(text)
    return text


def cmd_study(ctx: Context, out: Path, jobs: int = 1) -> dict:
    cfg = ctx.cfg
    st = cfg["strategy"]
    tol = cfg["tolerances"]
    strategies = cfg["study"].get("strategies") or [st["id"]]
    steps = sorted(cfg["partition"]["steps"])
    diams = [(ctx.dyn.theta - ctx.dyn.t0) / s for s in steps]
    comps = ctx.ensemble_components()
    if not comps:
        raise cfg.error("ensemble", "kind", "empty ensemble")
    ensemble = DisturbanceEnsemble(tuple(comps.values()), "ensemble")
    gq = None
    if cfg["oracle"]["kind"] == "dp" or cfg["study"]["chain"] or "adversary" in comps or "probe" in comps:
        gq = float(ctx.table.value(ctx.dyn.t0, ctx.z0))
    reference = tol.get("reference", gq)
    records, summaries = [], []
    for s in strategies:
        eps_values = (cfg["study"].get("eps") or [st["eps"]]) if s in ("ue", "ubar") else None
        family = functools.partial(_family, ctx, s)
        table = convergence_study(ctx.dyn, ctx.cost.of_trajectory, family, ensemble, diams, ctx.z0,
                                  eps_values, False, reference, tol["trend"], gq, tol["lower"],
                                  st["substeps"], s, jobs)
        records += table.records()
        summaries.append(table.summary())
    summary = {"type": "study", "grid_value": gq, "reference": reference, "strategies": summaries}
    if cfg["study"]["chain"]:
        open_loop = [comps[k] for k in ("constants", "bangbang", "blockrandom") if k in comps]
        if not open_loop:
            open_loop = [constant_bank(ctx.dyn)]
        blocks = cfg["ensemble"]["adversary_blocks"] or 10
        est, rep = guaranteed_results(
            ctx.dyn, ctx.cost.of_trajectory, ctx.feedback_factory(strategies[0], None),
            ctx.partition(steps[-1]), ctx.z0, DisturbanceEnsemble(tuple(open_loop), "open_loop"),
            [DisturbanceEnsemble((AdversarialFeedback(ctx.table, blocks, "adversary"),), "compact")],
            DisturbanceEnsemble((AdversarialFeedback(ctx.table, None, "probe"),), "arbitrary"),
            gq, tol["chain"], st["substeps"], strategies[0], jobs)
        summary["chain_check"] = rep.to_dict()
        summary["chain_members"] = {k: e.argmax_member for k, e in est.items()}
    write_jsonl(records + summaries + [summary], out / "study.jsonl", cfg.digest)
    lines = [f"# config_digest={cfg.digest}", "strategy,eps,diam,member,cost"]
    for r in records:
        if r["type"] == "member":
            eps = "" if r["eps"] is None else "%.17g" % r["eps"]
            lines.append(f"{r['strategy']},{eps},{r['diam']:.17g},{r['member']},{r['cost']:.17g}")
    (out / "study.csv").write_text("\n".join(lines) + "\n")
    summary_out = {**summary, "config_digest": cfg.digest}
    (out / "summary.json").write_text(json.dumps(summary_out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary_out, sort_keys=True))
    return summary_out


def _family(ctx: Context, strategy: str, eps, diam):
    return ctx.feedback_factory(strategy, eps)


COMMANDS = {"simulate": cmd_simulate, "value": cmd_value, "check": cmd_check, "study": cmd_study}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="guarctl", description="Guaranteed-control experiments.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI experiment config")
    ap.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for ensemble runs")
    ap.add_argument("--seed-override", type=int, default=None,
                    help="replace the ensemble and disturbance seeds")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1", "<args>")
        if args.seed_override is not None and not 0 <= args.seed_override < 2 ** 64:
            raise ConfigError("--seed-override must be an unsigned 64-bit integer", "<args>")
        cfg = load_config(args.config)
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
        out = Path(args.out if args.out is not None else cfg["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg)
        COMMANDS[args.command](ctx, out, args.jobs)
    except (NumericalError, OracleError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
