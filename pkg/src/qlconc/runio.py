"""Run configuration, manifests, CSV and gnuplot emission."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .closed_form import critical_exponent
from .dsl import DSLError, as_point_function, parse, validate_assumptions
from .energy import ConcentrationSet, Region

CSV_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration or assumption violation (exit code 1)."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_region = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["ball", "box"]},
        "center": {"type": "array", "items": _num},
        "radius": _pos,
        "lo": {"type": "array", "items": _num},
        "hi": {"type": "array", "items": _num},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "p": _pos,
                "m": _pos,
                "gamma": {"type": "number", "minimum": 0},
                "alpha": _pos,
                "zeta": {"type": "number", "minimum": 0},
                "hbar": _pos,
            },
            "required": ["N"],
            "additionalProperties": False,
        },
        "potentials": {
            "type": "object",
            "properties": {
                "V": {"type": "string"},
                "K": {"type": "string"},
                "constants": {"type": "object", "additionalProperties": _num},
                "V0": _pos,
                "K0": _pos,
                "region_O": _region,
                "M": {
                    "type": "object",
                    "properties": {"center": {"type": "array", "items": _num},
                                   "radius": {"type": "number", "minimum": 0}},
                    "additionalProperties": False,
                },
                "samples": {"type": "integer", "minimum": 9},
            },
            "required": ["V", "K", "region_O"],
            "additionalProperties": False,
        },
        "penalization": {
            "type": "object",
            "properties": {"tau": _pos, "beta": _pos,
                           "t0": {"oneOf": [{"const": "auto"}, _pos]}},
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {
                "type": {"enum": ["radial", "tensor"]},
                "n": {"type": "integer", "minimum": 8},
                "r_min": _pos,
                "extent": _pos,
                "r_max": _pos,
                "half_width": _pos,
            },
            "required": ["type"],
            "additionalProperties": False,
        },
        "solver": {"type": "object"},
        "shoot": {"type": "object"},
        "sweep": {
            "type": "object",
            "properties": {
                "hbar": {"type": "array", "items": _pos},
                "log_range": {
                    "type": "object",
                    "properties": {"start": _pos, "stop": _pos,
                                   "num": {"type": "integer", "minimum": 2}},
                    "required": ["start", "stop", "num"],
                    "additionalProperties": False,
                },
                "warm_start": {"type": "boolean"},
                "v_variants": {"type": "object", "additionalProperties": {"type": "string"}},
                "control_K": {"type": "string"},
                "control_M": {
                    "type": "object",
                    "properties": {"center": {"type": "array", "items": _num},
                                   "radius": {"type": "number", "minimum": 0}},
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array",
                            "items": {"enum": ["csv", "json", "gnuplot"]}},
            },
            "additionalProperties": False,
        },
    },
    "required": ["model"],
    "additionalProperties": False,
}

DEFAULTS = {
    "model": {"p": 4.0, "m": 1.0, "gamma": 1.0, "zeta": 1.0},
    "penalization": {"tau": 1.0, "beta": 5.0, "t0": "auto"},
    "grid": {"type": "radial", "n": 4000, "r_min": 1e-4, "extent": 20.0},
    "solver": {},
    "shoot": {},
    "sweep": {"warm_start": True},
    "outputs": {"directory": "out", "formats": ["csv", "json", "gnuplot"]},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    """A schema-validated configuration with defaults filled in."""

    raw: dict
    resolved: dict

    @property
    def model(self) -> dict:
        return self.resolved["model"]

    @property
    def N(self) -> int:
        return int(self.model["N"])

    @property
    def p(self) -> float:
        return float(self.model["p"])

    def section(self, name: str) -> dict:
        return self.resolved.get(name, {})

    def hbars(self) -> list:
        sw = self.section("sweep")
        if "hbar" in sw:
            return [float(h) for h in sw["hbar"]]
        if "log_range" in sw:
            lr = sw["log_range"]
            return [float(h) for h in np.geomspace(lr["start"], lr["stop"], lr["num"])]
        return []


def validate_config(raw: dict, command: str | None = None) -> RunConfig:
    """Schema plus range checks; raises ``ConfigError`` with the exact violation."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    res = _merge(DEFAULTS, raw)
    if "p" not in raw.get("model", {}) and "alpha" in raw.get("model", {}):
        res["model"]["p"] = critical_exponent(res["model"]["N"])
    mdl = res["model"]
    N, p = int(mdl["N"]), float(mdl["p"])
    if N >= 3:
        lo, hi = critical_exponent(N), 2 * critical_exponent(N)
        if "alpha" in mdl:
            if abs(p - lo) > 1e-12:
                raise ConfigError(f"critical runs need p = 2N/(N-2) = {lo:g}, got p = {p:g}")
        elif not (lo - 1e-12 <= p < hi):
            raise ConfigError(f"p must lie in [{lo:g}, {hi:g}) for N = {N}, got p = {p:g}")
    elif not p > 2:
        raise ConfigError(f"p must exceed 2, got {p:g}")
    if "alpha" in mdl:
        a, g = float(mdl["alpha"]), float(mdl["gamma"])
        if not (0 < a < g):
            raise ConfigError(
                f"alpha must satisfy 0 < alpha < gamma (alpha = {a:g}, gamma = {g:g}); "
                "alpha = gamma is not allowed because the critical zero-mass quasilinear "
                "equation has no fast-decaying solution")
    if command in ("sweep", "critical-sweep"):
        sw = res["sweep"]
        if "hbar" in sw and len(sw["hbar"]) == 0:
            raise ConfigError("sweep.hbar is empty: a sweep needs at least 2 hbar values")
        cfg = RunConfig(raw, res)
        if len(cfg.hbars()) < 2:
            raise ConfigError("a sweep needs at least 2 hbar values (sweep.hbar or sweep.log_range)")
    if command in ("solve",) and "hbar" not in mdl:
        raise ConfigError("solve needs model.hbar")
    if res["grid"]["type"] == "tensor" and N not in (2, 3):
        raise ConfigError(f"tensor grids support N = 2 or 3, got N = {N}")
    if res["grid"]["type"] == "tensor" and "half_width" not in res["grid"]:
        raise ConfigError("tensor grids need grid.half_width")
    if "potentials" in res:
        pots = res["potentials"]
        try:
            consts = pots.get("constants", {})
            parse(pots["V"], consts)
            parse(pots["K"], consts)
            for name, src in res["sweep"].get("v_variants", {}).items():
                parse(src, consts)
            if "control_K" in res["sweep"]:
                parse(res["sweep"]["control_K"], consts)
        except DSLError as exc:
            raise ConfigError(f"potential expression invalid: {exc}") from None
        if res["grid"]["type"] == "radial" and command != "validate":
            for key in ("V", "K"):
                fv = parse(pots[key], pots.get("constants", {})).free_variables()
                if fv - {"r"}:
                    raise ConfigError(f"radial grids need potentials of r only; {key} uses "
                                      f"{sorted(fv - {'r'})}")
        beta = float(res["penalization"]["beta"])
        region = region_from_dict(pots["region_O"])
        M = pots.get("M")
        if M is not None:
            Ms = ConcentrationSet(tuple(M.get("center", [0.0])), float(M.get("radius", 0.0)))
            d = max(N, 2)
            dist = min(region.distance_to_complement(x) for x in Ms.samples(d))
            if not beta < dist / 100.0:
                raise ConfigError(f"penalization.beta = {beta:g} must be below "
                                  f"dist(M, complement of O)/100 = {dist / 100:g}")
    return RunConfig(raw, res)


def load_config(path, command: str | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return validate_config(raw, command)


def region_from_dict(d: dict) -> Region:
    if d["kind"] == "ball":
        if "radius" not in d:
            raise ConfigError("ball regions need a radius")
        return Region.ball(d["radius"], tuple(d.get("center", [0.0])))
    if "lo" not in d or "hi" not in d:
        raise ConfigError("box regions need lo and hi")
    return Region.box(d["lo"], d["hi"])


@dataclass
class ResolvedPotentials:
    """DSL potentials with the sampled constants of the assumption check."""

    V: object
    K: object
    V_expr: object
    K_expr: object
    V0: float
    m: float
    K0: float
    M: ConcentrationSet
    region: Region
    autonomous: bool
    report: object


def resolve_potentials(cfg: RunConfig, dim: int | None = None, K_src: str | None = None,
                       V_src: str | None = None, M_override=None) -> ResolvedPotentials:
    """Parse ``V``, ``K``, check the assumptions and fill ``V0``, ``m``, ``K0``, ``M``."""
    pots = cfg.section("potentials")
    if not pots:
        raise ConfigError("config has no potentials section")
    consts = pots.get("constants", {})
    Ve = parse(V_src or pots["V"], consts)
    Ke = parse(K_src or pots["K"], consts)
    region = region_from_dict(pots["region_O"])
    d = dim or max(min(cfg.N, 3), 2)
    rep = validate_assumptions(Ve, Ke, region, samples=pots.get("samples", 81), dim=d,
                               K0=pots.get("K0"))
    violations = list(rep.violations)
    if not Ke.free_variables():
        # constant K: no boundary gap exists, but then the penalization never acts
        # and the run is the autonomous limit problem, which is allowed
        violations = [v for v in violations if not (v.assumption == "K" and "boundary" in v.message)]
    if violations:
        msgs = "; ".join(f"({v.assumption}) {v.message} at {v.witness}" for v in violations)
        raise ConfigError(f"assumption violated: {msgs}")
    V0 = float(pots.get("V0", rep.V0))
    m = rep.m
    K0 = float(pots.get("K0", 2.0 * m))
    if M_override is not None:
        M = M_override
    elif "M" in pots:
        M = ConcentrationSet(tuple(pots["M"].get("center", [0.0])), float(pots["M"].get("radius", 0.0)))
    else:
        M = ConcentrationSet(tuple(rep.M_center), rep.M_radius)
    autonomous = not (Ve.free_variables() or Ke.free_variables())
    return ResolvedPotentials(as_point_function(Ve), as_point_function(Ke), Ve, Ke, V0, m, K0, M,
                              region, autonomous, rep)


# -- output helpers -------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with a header row and 17 significant digits."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(x) for x in row])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else None
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Written with status ``running`` before the run and finalized afterwards."""

    out_dir: Path
    command: str
    config: dict
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    status: str = "running"
    extra: dict = field(default_factory=dict)

    @property
    def path(self) -> Path:
        return self.out_dir / "manifest.json"

    def _payload(self) -> dict:
        inv = []
        for f in sorted(set(self.files)):
            p = self.out_dir / f
            if p.exists():
                inv.append({"file": f, "sha256": sha256_file(p), "bytes": p.stat().st_size})
        return {"tool": "qlconc", "version": __version__, "command": self.command,
                "csv_schema_version": CSV_SCHEMA_VERSION, "status": self.status,
                "config": self.config, "timings_s": self.timings, "files": inv, **self.extra}

    def start(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_json(self.path, self._payload())
        return self

    def add(self, name: str):
        self.files.append(name)
        return self.out_dir / name

    def stage(self, name: str):
        return _Stage(self, name)

    def finalize(self, status: str):
        self.status = status
        write_json(self.path, self._payload())


class _Stage:
    def __init__(self, man: RunManifest, name: str):
        self.man, self.name = man, name

    def __enter__(self):
        self.t = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.man.timings[self.name] = self.man.timings.get(self.name, 0.0) + \
            time.perf_counter() - self.t
        return False


def gnuplot_script(path, title: str, csv_name: str, xcol: str, ycols, header, logx=False,
                   logy=False, xlabel=None, ylabel=None, extra_series=()) -> None:
    """Plot script reading named columns of a CSV; renders to ``<script>.png``."""
    idx = {h: i + 1 for i, h in enumerate(header)}
    png = Path(path).with_suffix(".png").name
    lines = ["set datafile separator ','", "set key autotitle columnhead",
             "set terminal pngcairo size 900,600", f"set output '{png}'",
             f"set title '{title}'", f"set xlabel '{xlabel or xcol}'",
             f"set ylabel '{ylabel or ', '.join(ycols)}'"]
    if logx:
        lines.append("set logscale x")
    if logy:
        lines.append("set logscale y")
    series = [f"'{csv_name}' using {idx[xcol]}:{idx[y]} with linespoints title '{y}'" for y in ycols]
    series += list(extra_series)
    lines.append("plot " + ", \\\n     ".join(series))
    Path(path).write_text("\n".join(lines) + "\n")


def ensure_dir(p) -> Path:
    p = Path(p)
    p.mkdir(parents=True, exist_ok=True)
    return p


def relpath(p, base) -> str:
    return os.path.relpath(p, base)
