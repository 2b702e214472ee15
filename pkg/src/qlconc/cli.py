"""Command-line entry points.

Exit codes: 0 success, 1 configuration or assumption violation, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .closed_form import dilation_t0
from .diagnostics import DiagnosticsContext, reconstructed_pohozaev, run_suite, trend_check
from .dsl import parse
from .energy import (ConcentrationSet, DiscreteProblem, PenalizationConfig, Potentials,
                     energy_Lm, pohozaev_residual)
from .grids import RadialGrid, TensorGrid
from .runio import (ConfigError, RunConfig, RunManifest, gnuplot_script, load_config,
                    resolve_potentials, write_csv, write_json)
from .semiclassical import (ConcentrationReport, CriticalRescaleMap, LabSetup, RescaleMap,
                            concentration_report, critical_profile_fit, halfwidth_mu,
                            solve_critical, v_irrelevance_experiment)
from .shooting import BracketError, ShootConfig, ShootingError, find_ground_state
from .solver import SolveConfig, SolverError, continuation_sweep, SweepPoint, solve
from .transform import Transform

log = logging.getLogger("qlconc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class NumericalFailure(RuntimeError):
    pass


# -- problem assembly ----------------------------------------------------------------------


def _shoot_config(cfg: RunConfig, m: float) -> ShootConfig:
    mdl = cfg.model
    extra = dict(cfg.section("shoot"))
    if "scan_range" in extra:
        extra["scan_range"] = tuple(extra["scan_range"])
    try:
        return ShootConfig(N=cfg.N, p=cfg.p, m=m, zeta=float(mdl.get("zeta", 1.0)), **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid shoot section: {exc}") from None


def _solve_config(cfg: RunConfig) -> SolveConfig:
    extra = dict(cfg.section("solver"))
    if "init_center" in extra and extra["init_center"] is not None:
        extra["init_center"] = tuple(extra["init_center"])
    try:
        return SolveConfig(**extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver section: {exc}") from None


class Assembly:
    """Everything shared by the sweep points of one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.gridcfg = cfg.section("grid")
        self.tensor = self.gridcfg["type"] == "tensor"
        dim = cfg.N if self.tensor else max(min(cfg.N, 3), 2)
        self.rp = resolve_potentials(cfg, dim=dim)
        self.transform = Transform(float(cfg.model.get("zeta", 1.0)))
        self.ground = None
        self.c_m = None
        if not self.tensor and cfg.N >= 5:
            res = find_ground_state(_shoot_config(cfg, self.rp.m))
            self.ground = res.profile
            self.c_m = energy_Lm(res.profile, self.rp.m, cfg.p, self.transform)
        pen = cfg.section("penalization")
        t0 = pen.get("t0", "auto")
        if t0 == "auto":
            t0 = dilation_t0(self.ground.dirichlet_energy(), cfg.N) if self.ground is not None else 2.0
        self.pen = PenalizationConfig(float(pen["tau"]), self.rp.region, float(pen["beta"]), float(t0))
        self.pots = Potentials(self.rp.V, self.rp.K, m=self.rp.m, K0=self.rp.K0, V0=self.rp.V0,
                               concentration_set_M=self.rp.M, p=cfg.p)

    def problem(self, hbar: float):
        smap = RescaleMap(hbar, float(self.cfg.model["gamma"]), self.cfg.p)
        g = self.gridcfg
        if self.tensor:
            grid = TensorGrid(float(g["half_width"]) / smap.eps, int(g["n"]), self.cfg.N)
        else:
            R = g.get("r_max")
            if R is None:
                R = max(float(g["extent"]) / math.sqrt(smap.kappa * self.rp.V0),
                        2.0 * self.pen.beta / smap.eps * 1.02)
            grid = RadialGrid.geometric(self.cfg.N, float(R), int(g["n"]), float(g["r_min"]))
        prob = DiscreteProblem(grid, self.pots, self.pen, smap.kappa, smap.eps, self.transform)
        return smap, prob

    def initial_profile(self, smap: RescaleMap):
        if self.ground is not None:
            return self.ground
        k = smap.kappa * self.rp.V0
        return lambda r: np.exp(-0.5 * k * np.asarray(r) ** 2)

    def context(self, previous_gaps=()) -> DiagnosticsContext:
        return DiagnosticsContext(
            self.transform, self.rp.m, self.cfg.p, self.rp.V0,
            mode="autonomous" if self.rp.autonomous else "general", c_m=self.c_m,
            ground_sup=None if self.ground is None else self.ground.peak,
            previous_gaps=tuple(previous_gaps))


def _field_rows(field_):
    g = field_.grid
    if isinstance(g, RadialGrid):
        return ["r", "v"], zip(g.nodes, field_.values)
    names = [f"x{k + 1}" for k in range(g.points.shape[1])]
    return names + ["v"], ([*pt, val] for pt, val in zip(g.points, field_.values))


def _write_field(man: RunManifest, name: str, field_):
    header, rows = _field_rows(field_)
    write_csv(man.add(name), header, rows)


# -- commands -----------------------------------------------------------------------------------


def cmd_shoot(cfg: RunConfig, man: RunManifest) -> int:
    m = float(cfg.model.get("m", 1.0))
    sc = _shoot_config(cfg, m)
    with man.stage("shoot"):
        res = find_ground_state(sc)
    prof = res.profile
    res.profile.to_csv(man.add("ground_state.csv"))
    T = sc.transform
    D = prof.dirichlet_energy()
    write_json(man.add("decay.json"), {
        "amplitude": res.amplitude, "decay_c": res.decay_c,
        "decay_c_derivative": res.decay_c_derivative,
        "plateau_variation_final_decade": prof.tail_plateau_variation(),
        "r_max": prof.r_max,
        "classification_trace": [list(map(str, t)) if isinstance(t, (tuple, list)) else str(t)
                                 for t in res.classification_trace]})
    write_json(man.add("energy.json"), {
        "L_m": energy_Lm(prof, m, sc.p, T), "dirichlet_energy": D,
        "pohozaev_residual": pohozaev_residual(prof, m, sc.p, T),
        "N": sc.N, "p": sc.p, "m": m, "zeta": sc.zeta})
    return EXIT_OK


def _solve_point(asm: Assembly, hbar: float, scfg: SolveConfig, init=None):
    smap, prob = asm.problem(hbar)
    out = solve(scfg, prob, asm.initial_profile(smap), init=init)
    return smap, prob, out


def _report(asm: Assembly, smap, prob, out, prev_gaps=()):
    rep = concentration_report(out, smap, prob.pots, asm.ground, c_m=asm.c_m,
                               transform=asm.transform)
    suite = run_suite(out, asm.context(prev_gaps))
    return rep, suite


def cmd_solve(cfg: RunConfig, man: RunManifest) -> int:
    with man.stage("setup"):
        asm = Assembly(cfg)
    hbar = float(cfg.model["hbar"])
    with man.stage("solve"):
        smap, prob, out = _solve_point(asm, hbar, _solve_config(cfg))
    _write_field(man, "field.csv", out.field)
    write_json(man.add("outcome.json"), {**out.to_dict(), "map": smap.to_dict()})
    if not out.converged:
        log.error("solve did not converge: %s", out.message)
        return EXIT_NUMERIC
    rep, suite = _report(asm, smap, prob, out)
    write_json(man.add("concentration.json"), rep.to_dict())
    write_json(man.add("diagnostics.json"), suite.to_dict())
    man.extra["diagnostics"] = suite.to_dict()
    return EXIT_OK


def _sweep_worker(raw: dict, hbar: float):
    from .runio import validate_config

    cfg = validate_config(raw)
    asm = Assembly(cfg)
    try:
        smap, prob, out = _solve_point(asm, hbar, _solve_config(cfg))
    except Exception as exc:  # noqa: BLE001 - reported per point
        return hbar, None, f"{type(exc).__name__}: {exc}"
    return hbar, out, ""


OUTCOME_COLUMNS = ["hbar", "kappa", "eps", "converged", "iterations", "Gamma_eps", "L_m", "Q_eps",
                   "penalty_mass", "gradient_norm", "distance_to_X", "scale", "message"]


def cmd_sweep(cfg: RunConfig, man: RunManifest, jobs: int = 1) -> int:
    with man.stage("setup"):
        asm = Assembly(cfg)
    hbars = sorted(set(cfg.hbars()), reverse=True)
    scfg = _solve_config(cfg)
    results = {}
    with man.stage("solve"):
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                for hb, out, err in ex.map(_sweep_worker, [cfg.raw] * len(hbars), hbars):
                    results[hb] = (out, err)
        else:
            points, maps = [], []
            for hb in hbars:
                smap, prob = asm.problem(hb)
                maps.append(smap)
                points.append(SweepPoint(prob, asm.initial_profile(smap)))
            try:
                outs = continuation_sweep(points, scfg, warm_start=cfg.section("sweep")["warm_start"])
            except SolverError as exc:
                raise NumericalFailure(str(exc)) from exc
            for hb, out in zip(hbars, outs):
                results[hb] = (out, "" if out.converged else out.message)

    rows, reports, suites, failures, gaps = [], [], [], [], []
    for k, hb in enumerate(hbars):
        out, err = results[hb]
        smap, prob = asm.problem(hb)
        if out is None:
            failures.append(f"hbar={hb:g}: {err}")
            rows.append([hb, smap.kappa, smap.eps, False, 0] + [float("nan")] * 7 + [err])
            continue
        r = out.report
        rows.append([hb, smap.kappa, smap.eps, out.converged, out.iterations, r.Gamma_eps, r.L_m,
                     r.Q_eps, r.penalty_mass, r.gradient_norm, out.distance_to_X, out.scale,
                     out.message])
        _write_field(man, f"profile_{k:02d}.csv", out.field)
        if not out.converged:
            failures.append(f"hbar={hb:g}: {out.message}")
            continue
        rep, suite = _report(asm, smap, prob, out, gaps)
        gaps.append(rep.energy_gap)
        reports.append((k, rep))
        suites.append({"hbar": hb, **suite.to_dict()})
    write_csv(man.add("outcomes.csv"), OUTCOME_COLUMNS, rows)
    write_csv(man.add("concentration.csv"), list(ConcentrationReport.CSV_COLUMNS),
              [rep.csv_row() for _, rep in reports])
    write_json(man.add("diagnostics.json"), suites)
    holds, frac = trend_check([rep.energy_gap for _, rep in reports])
    man.extra["energy_gap_trend"] = {"majority_decreasing": holds, "fraction": frac}
    man.extra["failures"] = failures

    fmts = cfg.section("outputs")["formats"]
    if "gnuplot" in fmts:
        hdr = list(ConcentrationReport.CSV_COLUMNS)
        gnuplot_script(man.add("energy_vs_eps.gp"), "energy gap vs eps", "concentration.csv",
                       "eps", ["energy_gap"], hdr, logx=True, logy=True)
        gnuplot_script(man.add("dist_to_M_vs_hbar.gp"), "distance of the maximum to M",
                       "concentration.csv", "hbar", ["dist_to_M"], hdr, logx=True)
        series = [f"'profile_{k:02d}.csv' using 1:{2 if not asm.tensor else cfg.N + 1} "
                  f"with lines title 'hbar={hb:g}'" for k, hb in enumerate(hbars)
                  if results[hb][0] is not None]
        if series and not asm.tensor:
            Path(man.add("profiles.gp")).write_text(
                "set datafile separator ','\nset key autotitle columnhead\n"
                "set terminal pngcairo size 900,600\nset output 'profiles.png'\n"
                "set logscale x\nset xlabel 'r'\nset ylabel 'v'\n"
                "plot " + ", \\\n     ".join(series) + "\n")

    variants = cfg.section("sweep").get("v_variants")
    if variants:
        with man.stage("v_irrelevance"):
            _v_irrelevance(cfg, asm, variants, hbars, scfg, man)
    return EXIT_NUMERIC if failures else EXIT_OK


def _v_irrelevance(cfg: RunConfig, asm: Assembly, variants: dict, hbars, scfg, man):
    if not asm.tensor:
        raise ConfigError("v_variants experiments run on tensor grids")
    g = cfg.section("grid")
    pen = cfg.section("penalization")
    vv = {}
    for name, src in variants.items():
        rp = resolve_potentials(cfg, dim=cfg.N, V_src=src)
        vv[name] = (rp.V, rp.V0)

    def setup(K, M, m):
        return LabSetup(K=K, m=m, K0=asm.rp.K0, M=M, p=cfg.p, gamma=float(cfg.model["gamma"]),
                        zeta=float(cfg.model.get("zeta", 1.0)), region_O=asm.rp.region,
                        beta=float(pen["beta"]), t0=asm.pen.t0, tau=float(pen["tau"]),
                        half_width=float(g["half_width"]), n=int(g["n"]), dim=cfg.N)

    base = setup(asm.rp.K, asm.rp.M, asm.rp.m)
    control = None
    sw = cfg.section("sweep")
    if "control_K" in sw:
        crp = resolve_potentials(cfg, dim=cfg.N, K_src=sw["control_K"],
                                 M_override=ConcentrationSet(
                                     tuple(sw.get("control_M", {}).get("center", [0.0])),
                                     float(sw.get("control_M", {}).get("radius", 0.0)))
                                 if "control_M" in sw else None)
        control = setup(crp.K, crp.M, crp.m)
    res = v_irrelevance_experiment(base, vv, hbars, scfg, control)
    res.write_csv(man.add("comparison.csv"))
    man.extra["v_irrelevance"] = {
        "max_pairwise_distance": res.max_pairwise, "cell": res.cell,
        "variants_agree": res.variants_agree, "control_displacement": res.control_displacement,
        "expected_displacement": res.expected_displacement, "control_follows": res.control_follows}


def cmd_validate(cfg: RunConfig, man: RunManifest) -> int:
    from .dsl import validate_assumptions
    from .runio import region_from_dict

    pots = cfg.section("potentials")
    if not pots:
        raise ConfigError("config has no potentials section")
    consts = pots.get("constants", {})
    dim = max(min(cfg.N, 3), 2)
    rep = validate_assumptions(parse(pots["V"], consts), parse(pots["K"], consts),
                               region_from_dict(pots["region_O"]), pots.get("samples", 81), dim,
                               K0=pots.get("K0"))
    write_json(man.add("assumptions.json"), rep.to_dict())
    man.extra["assumptions_ok"] = rep.ok
    print(_dumps(rep.to_dict()))
    return EXIT_OK if rep.ok else EXIT_CONFIG


CRITICAL_COLUMNS = ["hbar", "lambda", "zeta", "eps_c", "converged", "mu", "linf_rel_error",
                    "mu_halfwidth", "pohozaev_residual"]


def cmd_critical_sweep(cfg: RunConfig, man: RunManifest) -> int:
    mdl = cfg.model
    if "alpha" not in mdl:
        raise ConfigError("critical-sweep needs model.alpha")
    m = float(mdl.get("m", 1.0))
    g = cfg.section("grid")
    V0 = float(cfg.section("potentials").get("V0", 1.0)) if cfg.section("potentials") else 1.0
    rows, failures, suites = [], [], []
    for k, hb in enumerate(sorted(set(cfg.hbars()), reverse=True)):
        cmap = CriticalRescaleMap(hb, float(mdl["gamma"]), float(mdl["alpha"]), cfg.N)
        with man.stage("solve"):
            try:
                out = solve_critical(cmap, m, _solve_config(cfg), V0=V0, n=int(g["n"]),
                                     r_min=float(g["r_min"]), extent=float(g["extent"]))
            except SolverError as exc:
                failures.append(f"hbar={hb:g}: {exc}")
                rows.append([hb, cmap.lam, cmap.zeta, cmap.eps_c, False] + [float("nan")] * 4)
                continue
        if not out.converged:
            failures.append(f"hbar={hb:g}: {out.message}")
            rows.append([hb, cmap.lam, cmap.zeta, cmap.eps_c, False] + [float("nan")] * 4)
            continue
        mu, err = critical_profile_fit(out, cmap, m)
        poh = reconstructed_pohozaev(out.field.values, out.field.grid, cmap.lam, V0, m, cmap.p,
                                     cmap.transform)
        rows.append([hb, cmap.lam, cmap.zeta, cmap.eps_c, True, mu, err, halfwidth_mu(out), poh])
        _write_field(man, f"profile_{k:02d}.csv", out.field)
        ctx = DiagnosticsContext(cmap.transform, m, cmap.p, V0, mode="critical", critical_map=cmap)
        suites.append({"hbar": hb, **run_suite(out, ctx).to_dict()})
    write_csv(man.add("critical.csv"), CRITICAL_COLUMNS, rows)
    write_json(man.add("diagnostics.json"), suites)
    errs = [r[6] for r in rows if r[4]]
    holds, frac = trend_check(errs)
    man.extra["talenti_error_trend"] = {"majority_decreasing": holds, "fraction": frac}
    man.extra["failures"] = failures
    if "gnuplot" in cfg.section("outputs")["formats"]:
        gnuplot_script(man.add("talenti_error_vs_hbar.gp"), "Talenti fit error", "critical.csv",
                       "hbar", ["linf_rel_error"], CRITICAL_COLUMNS, logx=True, logy=True)
    return EXIT_NUMERIC if failures else EXIT_OK


def _dumps(obj) -> str:
    import json

    from .runio import _jsonable

    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)


COMMANDS = {"shoot": cmd_shoot, "solve": cmd_solve, "sweep": cmd_sweep,
            "validate": cmd_validate, "critical-sweep": cmd_critical_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qlconc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        sp.add_argument("--out-dir", type=Path, default=None,
                        help="output directory (default: outputs.directory of the config)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        sp.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out_dir or Path(cfg.section("outputs")["directory"])
    man = RunManifest(Path(out_dir), args.command, cfg.resolved).start()
    try:
        if args.command == "sweep":
            code = cmd_sweep(cfg, man, jobs=max(1, args.jobs))
        else:
            code = COMMANDS[args.command](cfg, man)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        man.extra["error"] = str(exc)
        man.finalize("config_error")
        return EXIT_CONFIG
    except BracketError as exc:
        amps = [float(t[0]) for t in (exc.scanned or [])]
        print(f"numerical failure: {exc}", file=sys.stderr)
        man.extra["error"] = str(exc)
        man.extra["scanned_range"] = [min(amps), max(amps)] if amps else None
        man.finalize("numerical_failure")
        return EXIT_NUMERIC
    except (ShootingError, SolverError, NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        man.extra["error"] = str(exc)
        man.finalize("numerical_failure")
        return EXIT_NUMERIC
    man.finalize({EXIT_OK: "ok", EXIT_CONFIG: "assumption_violation",
                  EXIT_NUMERIC: "numerical_failure"}[code])
    return code


if __name__ == "__main__":
    sys.exit(main())
