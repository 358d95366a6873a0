"""Typed INI experiment configs.

A config is an INI file with the sections below; every key is typed and
unknown sections or keys are rejected so typos surface as errors. The
resolved values (defaults filled in) are hashed into a digest that is
embedded in every output file.

[system]     id, z0, and for ``id = inline``: state_dim, control_dim,
             disturbance_dim, f1..fn, control_lower/upper/resolution or
             control_points, disturbance_points or disturbance_lower/upper/
             resolution, horizon, state_lower/upper, growth_k, lipschitz_l
[cost]       terminal
[partition]  steps
[strategy]   id, eps, net_eps, test_set, shift_set, p_bar, u_star, v_star,
             control, substeps
[oracle]     kind, line_velocity
[grid]       lower, upper, nodes, time_steps, order
[disturbance] kind, value, seed, rate, count, blocks
[ensemble]   kind, count, seed, rate, blocks, adversary_blocks
[study]      strategies, eps, chain
[check]      kind, per_axis, times, lower, upper, directions, shifts, tol, test_set,
             p_bar
[tolerances] trend, chain, lower, reference
[output]     dir
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "<config>", line: int | None = None,
                 section: str | None = None, key: str | None = None):
        self.path, self.line, self.section, self.key = path, line, section, key
        where = path if line is None else f"{path}:{line}"
        field = "" if section is None else f" [{section}]" + ("" if key is None else f" {key}")
        super().__init__(f"{where}:{field}{':' if field else ''} {message}")


# --- value parsers ---------------------------------------------------------


def _float(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        return float(Fraction(s.strip()))


def _int(s: str) -> int:
    v = int(s.strip())
    return v


def _vec(s: str) -> list[float]:
    parts = [p for p in re.split(r"[,\s]+", s.strip()) if p]
    if not parts:
        raise ValueError("empty vector")
    return [_float(p) for p in parts]


def _points(s: str) -> list[list[float]]:
    pts = [_vec(p) for p in s.split(";") if p.strip()]
    if not pts:
        raise ValueError("empty point list")
    if len({len(p) for p in pts}) != 1:
        raise ValueError("points have different dimensions")
    return pts


def _ints(s: str) -> list[int]:
    return [_int(p) for p in re.split(r"[,\s]+", s.strip()) if p]


def _floats(s: str) -> list[float]:
    return [_float(p) for p in re.split(r"[,\s]+", s.strip()) if p]


def _words(s: str) -> list[str]:
    return [p for p in re.split(r"[,\s]+", s.strip()) if p]


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _choice(*options):
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _str(s: str) -> str:
    return s.strip()


STRATEGIES = ("ue", "ubar", "ustar", "explicit", "constant")
ENSEMBLE_KINDS = ("constants", "bangbang", "blockrandom", "adversary", "probe")

# section -> key -> (parser, default); None default means "absent"
SCHEMA: dict[str, dict[str, tuple]] = {
    "system": {
        "id": (_str, "bilinear-2x2"), "z0": (_vec, None),
        "state_dim": (_int, None), "control_dim": (_int, None), "disturbance_dim": (_int, None),
        "control_lower": (_vec, None), "control_upper": (_vec, None),
        "control_resolution": (_int, 9), "control_points": (_points, None),
        "disturbance_lower": (_vec, None), "disturbance_upper": (_vec, None),
        "disturbance_resolution": (_int, 3), "disturbance_points": (_points, None),
        "horizon": (_vec, [0.0, 1.0]), "state_lower": (_vec, None), "state_upper": (_vec, None),
        "growth_k": (_float, 0.0), "lipschitz_l": (_float, 0.0),
    },
    "cost": {"terminal": (_str, None)},
    "partition": {"steps": (_ints, [100])},
    "strategy": {
        "id": (_choice(*STRATEGIES), "ustar"), "eps": (_float, 0.05), "net_eps": (_float, None),
        "test_set": (_points, None), "shift_set": (_str, "P"), "p_bar": (_points, None),
        "u_star": (_vec, None), "v_star": (_vec, None), "control": (_vec, None),
        "substeps": (_int, 8),
    },
    "oracle": {"kind": (_choice("dp", "exact"), "dp"), "line_velocity": (_vec, None)},
    "grid": {
        "lower": (_vec, None), "upper": (_vec, None), "nodes": (_int, 41),
        "time_steps": (_int, 100), "order": (_choice("maxmin", "minmax"), "maxmin"),
    },
    "disturbance": {
        "kind": (_choice("constant", "bangbang", "blockrandom", "adversary"), "constant"),
        "value": (_vec, None), "seed": (_int, None), "rate": (_float, 5.0),
        "blocks": (_int, None), "index": (_int, 0),
    },
    "ensemble": {
        "kind": (_words, ["bangbang", "adversary"]), "count": (_int, 100), "seed": (_int, None),
        "rate": (_float, 5.0), "blocks": (_int, 10), "adversary_blocks": (_int, 10),
    },
    "study": {"strategies": (_words, None), "eps": (_floats, None), "chain": (_bool, False)},
    "check": {
        "kind": (_choice("assumption1", "assumption2", "saddle", "bounds"), "saddle"),
        "per_axis": (_int, 5), "times": (_floats, [0.0, 0.5]), "lower": (_vec, None),
        "upper": (_vec, None), "directions": (_int, 8), "tol": (_float, 1e-9),
        "test_set": (_points, None), "p_bar": (_points, None), "shifts": (_points, None),
    },
    "tolerances": {
        "trend": (_float, 0.1), "chain": (_float, 0.02), "lower": (_float, 0.02),
        "reference": (_float, None),
    },
    "output": {"dir": (_str, "out")},
}

_INLINE_F = re.compile(r"^f[1-9][0-9]*$")


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number, plus (section, None) for headers."""
    idx = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        ln = raw.strip()
        if not ln or ln[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", ln)
        if m:
            section = m.group(1).strip().lower()
            idx.setdefault((section, None), no)
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", ln)
        if m and section is not None:
            idx.setdefault((section, m.group(1).strip().lower()), no)
    return idx


@dataclass
class ExperimentConfig:
    path: str
    values: dict
    lines: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section].get(key)

    def error(self, section: str, key: str | None, message: str) -> ConfigError:
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        return ConfigError(message, self.path, line, section, key)

    def resolved(self) -> dict:
        """Canonical view used for the digest; the output location is left
        out so the same experiment written elsewhere keeps its digest."""
        return {s: dict(sorted(v.items())) for s, v in sorted(self.values.items()) if s != "output"}

    @property
    def digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        vals["ensemble"]["seed"] = int(seed)
        vals["disturbance"]["seed"] = int(seed)
        return ExperimentConfig(self.path, vals, self.lines)


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    lines = _line_index(text)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"syntax error: {exc.message.splitlines()[0]}", path, line) from None
    values: dict = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section; known: {', '.join(SCHEMA)}", path,
                              lines.get((sec, None)), sec)
    for sec, schema in SCHEMA.items():
        got = dict(parser.items(sec)) if parser.has_section(sec) else {}
        out = {}
        for key, raw in got.items():
            if sec == "system" and _INLINE_F.match(key):
                out[key] = raw.strip()
                continue
            if key not in schema:
                raise ConfigError("unknown key", path, lines.get((sec, key)), sec, key)
            fn = schema[key][0]
            try:
                out[key] = fn(raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"bad value {raw.strip()!r}: {exc}", path,
                                  lines.get((sec, key)), sec, key) from None
        for key, (_, default) in schema.items():
            if key not in out and default is not None:
                out[key] = default
        values[sec] = out
    cfg = ExperimentConfig(path, values, lines)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))


def _validate(cfg: ExperimentConfig) -> None:
    from .systems import REGISTRY

    sysv = cfg["system"]
    if sysv["id"] != "inline" and sysv["id"] not in REGISTRY:
        raise cfg.error("system", "id", f"unknown system {sysv['id']!r}; known: inline, "
                        + ", ".join(sorted(REGISTRY)))
    if sysv["id"] == "inline":
        for k in ("state_dim", "control_dim", "disturbance_dim"):
            if k not in sysv:
                raise cfg.error("system", k, "required for inline systems")
        n = sysv["state_dim"]
        for k in range(1, n + 1):
            if f"f{k}" not in sysv:
                raise cfg.error("system", f"f{k}", f"missing component f{k}")
        extra = [k for k in sysv if _INLINE_F.match(k) and int(k[1:]) > n]
        if extra:
            raise cfg.error("system", extra[0], f"component beyond state_dim={n}")
        if "control_points" not in sysv and not {"control_lower", "control_upper"} <= set(sysv):
            raise cfg.error("system", "control_lower", "give control_points or control_lower/upper")
        if "disturbance_points" not in sysv and not {"disturbance_lower", "disturbance_upper"} <= set(sysv):
            raise cfg.error("system", "disturbance_points",
                            "give disturbance_points or disturbance_lower/upper")
        if "terminal" not in cfg["cost"]:
            raise cfg.error("cost", "terminal", "required for inline systems")
    else:
        if any(_INLINE_F.match(k) for k in sysv):
            raise cfg.error("system", next(k for k in sysv if _INLINE_F.match(k)),
                            "component expressions are only allowed for id = inline")
    if len(sysv["horizon"]) != 2 or not sysv["horizon"][0] < sysv["horizon"][1]:
        raise cfg.error("system", "horizon", "expected 't0, theta' with t0 < theta")
    steps = cfg["partition"]["steps"]
    if not steps or min(steps) < 1:
        raise cfg.error("partition", "steps", "steps must be positive integers")
    st = cfg["strategy"]
    if not 0.0 < st["eps"] < 1.0:
        raise cfg.error("strategy", "eps", "eps must lie in (0, 1)")
    if st["substeps"] < 1:
        raise cfg.error("strategy", "substeps", "substeps must be >= 1")
    if st["id"] == "constant" and "control" not in st:
        raise cfg.error("strategy", "control", "the constant strategy needs 'control'")
    if st["id"] == "ubar" and "test_set" not in st:
        raise cfg.error("strategy", "test_set", "the finite-test strategy needs 'test_set'")
    for s in cfg["study"].get("strategies") or []:
        if s not in STRATEGIES:
            raise cfg.error("study", "strategies", f"unknown strategy {s!r}")
    g = cfg["grid"]
    if g["nodes"] < 2 or g["time_steps"] < 1:
        raise cfg.error("grid", "nodes", "need nodes >= 2 and time_steps >= 1")
    ens = cfg["ensemble"]
    for k in ens["kind"]:
        if k not in ENSEMBLE_KINDS:
            raise cfg.error("ensemble", "kind", f"unknown component {k!r}; known: "
                            + ", ".join(ENSEMBLE_KINDS))
    if ens["count"] < 1:
        raise cfg.error("ensemble", "count", "count must be >= 1")
    d = cfg["disturbance"]
    if d["kind"] in ("bangbang", "blockrandom") and "seed" not in d:
        raise cfg.error("disturbance", "seed", "random disturbances need an explicit seed")
    if d["kind"] == "blockrandom" and "blocks" not in d:
        raise cfg.error("disturbance", "blocks", "blockrandom needs 'blocks'")


def require_ensemble_seed(cfg: ExperimentConfig) -> int:
    ens = cfg["ensemble"]
    if "seed" not in ens:
        raise cfg.error("ensemble", "seed", "random ensemble components need an explicit seed")
    return ens["seed"]
