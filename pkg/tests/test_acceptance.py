"""End-to-end acceptance checks.

Each test gathers named checks, prints one PASS/FAIL line with its runtime and
then asserts every check together with the runtime budget.
"""
import json
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

from qlconc.cli import main
from qlconc.closed_form import TalentiBubble, critical_exponent, dilation_energy, talenti_eval, talenti_residual
from qlconc.dsl import EvalError, evaluate, parse
from qlconc.energy import (ConcentrationSet, DiscreteProblem, PenalizationConfig, Potentials, Region,
                           minimax_path_level, path_values)
from qlconc.grids import RadialGrid
from qlconc.runio import ConfigError, validate_config
from qlconc.semiclassical import (CriticalRescaleMap, LabSetup, RescaleMap, concentration_report,
                                  critical_profile_fit, solve_critical, v_irrelevance_experiment)
from qlconc.shooting import ShootConfig, find_ground_state
from qlconc.solver import SolveConfig, SweepPoint, continuation_sweep
from qlconc.transform import STANDARD

from oracles import OracleError, random_expression, shunting_yard_eval

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
BETA = 5.0
SWEEP_EPS = (0.2, 0.1, 0.05, 0.025)


def _report(capsys, k, checks, elapsed, budget):
    checks = {**checks, f"runtime < {budget:g} s": elapsed < budget}
    failed = [name for name, ok in checks.items() if not ok]
    status = "PASS" if not failed else "FAIL"
    with capsys.disabled():
        print(f"\ncriterion {k}: {status} ({elapsed:.1f} s)" + (f" failed: {failed}" if failed else ""))
    assert not failed, failed


# -- 1: transform ------------------------------------------------------------------------------


def test_criterion_1_transform(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    n = 100_000
    v = rng.choice([-1.0, 1.0], n) * 10 ** rng.uniform(-8, 6, n)
    Gi = STANDARD.G_inv
    u = Gi(v)
    checks = {}
    checks["odd"] = bool(np.all(Gi(-v) == -u))
    checks["round trip"] = bool(np.all(np.abs(STANDARD.G(u) - v) <= 1e-10 * np.abs(v)))
    checks["|G_inv(v)| <= |v|"] = bool(np.all(np.abs(u) <= np.abs(v) * (1 + 4e-16)))
    checks["|G_inv(v)| <= 2^(1/4) sqrt|v|"] = bool(
        np.all(np.abs(u) <= 2**0.25 * np.sqrt(np.abs(v)) * (1 + 4e-16)))
    # convexity of the square along random chords
    w = rng.choice([-1.0, 1.0], n) * 10 ** rng.uniform(-8, 6, n)
    theta = rng.uniform(0, 1, n)
    lhs = Gi(theta * v + (1 - theta) * w) ** 2
    rhs = theta * u**2 + (1 - theta) * Gi(w) ** 2
    checks["square convex"] = bool(np.all(lhs <= rhs + 1e-12 * np.maximum(rhs, 1.0)))
    s = np.sort(v)
    s = s[np.concatenate([[True], np.diff(s) > 0])]
    checks["strictly increasing"] = bool(np.all(np.diff(Gi(s)) > 0))
    small = np.geomspace(1e-12, 1e-4, 1000)
    checks["linear at 0"] = bool(np.all(np.abs(Gi(small) / small - 1) <= small**2 / 3 + 4e-16))
    big = np.geomspace(1e4, 1e12, 1000)
    checks["sqrt growth at infinity"] = bool(
        np.all(np.abs(Gi(big) / np.sqrt(big) - 2**0.25) <= np.log(big) / big))
    _report(capsys, 1, checks, time.perf_counter() - start, 5.0)


# -- 2: Talenti oracle -------------------------------------------------------------------------


def test_criterion_2_talenti(capsys):
    start = time.perf_counter()
    r = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 400)])
    worst = 0.0
    for N in (3, 4, 5, 6):
        for m in (0.5, 1.0, 2.0):
            for mu in (0.25, 1.0, 4.0):
                res = talenti_residual(TalentiBubble(N, m, mu), r, relative=True)
                worst = max(worst, float(np.max(np.abs(res))))
    checks = {"residual matrix <= 1e-10": worst <= 1e-10}
    for N, m in ((5, 1.0), (5, 0.5), (6, 2.0)):
        prof = find_ground_state(ShootConfig(N=N, p=critical_exponent(N), m=m, zeta=0.0)).profile
        b = TalentiBubble.from_peak(N, m, prof.peak)
        err = np.max(np.abs(prof.v - talenti_eval(b, prof.r))) / prof.peak
        checks[f"critical shoot N={N} m={m} within 1e-6"] = err <= 1e-6
    _report(capsys, 2, checks, time.perf_counter() - start, 30.0)


# -- 3: ground state ---------------------------------------------------------------------------


def test_criterion_3_ground_state(capsys):
    start = time.perf_counter()
    cfg = ShootConfig(N=5, p=4.0, m=1.0)
    res = find_ground_state(cfg)
    fine = find_ground_state(cfg.refined(2))
    checks = {
        "pohozaev <= 1e-6": abs(res.pohozaev_residual) <= 1e-6,
        "plateau variation < 1%": res.profile.tail_plateau_variation() < 0.01,
        "amplitude stable under refinement": abs(fine.amplitude - res.amplitude) <= 1e-6 * res.amplitude,
        "positive and decreasing": bool(np.all(res.profile.v > 0) and np.all(np.diff(res.profile.v) < 0)),
    }
    _report(capsys, 3, checks, time.perf_counter() - start, 60.0)


# -- 4: energy machinery -----------------------------------------------------------------------


def _directional_error(prob, v, phi, h=1e-5):
    fd = (prob.value(v + h * phi) - prob.value(v - h * phi)) / (2 * h)
    an = float(np.dot(prob.mass, prob.gradient(v) * phi))
    return abs(fd - an) / max(abs(an), 1e-300)


def test_criterion_4_energy(capsys, ground_n5):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    g = RadialGrid.geometric(5, 12.0, 120, 1e-2)
    r = g.nodes
    pots = Potentials.radial(lambda s: 1.0 + 0.3 * np.exp(-s * s), lambda s: 2.0 - 0.5 * np.tanh(s),
                             m=2.0, K0=3.0, V0=1.0, M=ConcentrationSet((0.0,), 0.0))
    pen = PenalizationConfig(1.0, Region.ball(3.0), 0.01, 2.0)
    errs = []
    for _ in range(20):
        prob = DiscreteProblem(g, pots, pen, rng.uniform(0.1, 1.0), rng.uniform(0.3, 0.6), STANDARD)
        v = rng.uniform(0.5, 4.0) * np.exp(-(r / rng.uniform(1.0, 2.5)) ** 2) \
            + 10 ** rng.uniform(-3.5, -1.5) * np.exp(-0.2 * r)
        v[~g.free] = 0.0
        c = rng.normal(size=4)
        phi = v * sum(c[j] * np.cos((j + 1) * r / 3.0) for j in range(4))
        errs.append(_directional_error(prob, v, phi))

    U = ground_n5.profile
    D = U.dirichlet_energy()
    Cm = D / 5
    V0, gamma = 1e-3, 6.0
    cpots = Potentials.constant(V0, 1.0, 4.0)
    cpen = PenalizationConfig.for_ground_state(D, 5, Region.ball(120 * BETA), BETA)
    gaps, levels = [], []
    for eps in SWEEP_EPS:
        kappa = eps ** (4 * gamma / (4 + 2 * gamma))
        grid = RadialGrid.geometric(5, 2 * BETA / eps * 1.02, 4000, 1e-4)
        ts = np.linspace(0.02, cpen.t0, 60)
        pv = path_values(ts, eps, cpots, cpen, kappa, STANDARD, U, grid)
        gaps.append(float(np.max(np.abs(pv - dilation_energy(D, 5, ts)))))
        levels.append(minimax_path_level(eps, cpots, cpen, kappa, STANDARD, U, grid)[0] - Cm)
    checks = {
        "gradient vs central differences <= 1e-6": max(errs) <= 1e-6,
        "path gap decreasing": bool(np.all(np.diff(gaps) < 0)),
        "minimax excess decreasing": bool(np.all(np.diff(levels) < 0)),
        "minimax within 10% of C_m": abs(levels[-1]) / Cm < 0.1,
    }
    _report(capsys, 4, checks, time.perf_counter() - start, 300.0)


# -- 5 and 8: autonomous existence sweep and tails ---------------------------------------------


@pytest.fixture(scope="module")
def autonomous_sweep(ground_n5):
    start = time.perf_counter()
    U = ground_n5.profile
    D = U.dirichlet_energy()
    V0, gamma = 1e-3, 6.0
    pots = Potentials.constant(V0, 1.0, 4.0)
    pen = PenalizationConfig.for_ground_state(D, 5, Region.ball(600.0), BETA)
    maps, points = [], []
    for eps in SWEEP_EPS:
        smap = RescaleMap(eps ** (1 / (1 + 2 * gamma / 4)), gamma, 4.0)
        R = max(20 / np.sqrt(smap.kappa * V0), 2 * BETA / eps * 1.02)
        grid = RadialGrid.geometric(5, R, 4000, 1e-4)
        maps.append(smap)
        points.append(SweepPoint(DiscreteProblem(grid, pots, pen, smap.kappa, smap.eps, STANDARD), U))
    outs = continuation_sweep(points, SolveConfig(), warm_start=False)
    reports = [concentration_report(o, s, pots, U) if o.converged else None for o, s in zip(outs, maps)]
    return maps, outs, reports, V0, time.perf_counter() - start


def test_criterion_5_existence(capsys, autonomous_sweep):
    maps, outs, reports, V0, elapsed = autonomous_sweep
    start = time.perf_counter()
    checks = {
        "all converged": all(o.converged for o in outs),
        "penalty inactive": all(o.report.Q_eps == 0.0 for o in outs),
        "nodewise positive": all(bool(np.all(o.field.values[o.field.grid.free] > 0)) for o in outs),
    }
    last = reports[-1]
    checks["D12 distance < 1e-2 at smallest eps"] = last is not None and last.profile_error_d12 < 1e-2
    _report(capsys, 5, checks, elapsed + time.perf_counter() - start, 600.0)


# -- 6: ring concentration in the plane --------------------------------------------------------


def _ring(center):
    c = np.asarray(center, dtype=float)
    return lambda pts: 2.0 - 20.0 * np.minimum((np.linalg.norm(pts - c, axis=1) - 1.0) ** 2, 0.5)


@pytest.fixture(scope="module")
def ring_lab():
    start = time.perf_counter()
    base = LabSetup(_ring((0.0, 0.0)), 2.0, 3.0, ConcentrationSet((0.0, 0.0), 1.0))
    control = LabSetup(_ring((0.3, 0.0)), 2.0, 3.0, ConcentrationSet((0.3, 0.0), 1.0))
    variants = {
        "constant": (lambda p: np.ones(len(p)), 1.0),
        "radial_bump": (lambda p: 1.0 + 0.2 * np.exp(-np.sum(p**2, axis=1)), 1.0),
        "shifted_bump": (lambda p: 1.0 + 0.2 * np.exp(-np.sum((p - [-0.5, 0.0]) ** 2, axis=1)), 1.0),
    }
    res = v_irrelevance_experiment(base, variants, [0.4, 0.3, 0.2, 0.15],
                                   SolveConfig(max_iterations=200), control=control)
    return res, time.perf_counter() - start


def test_criterion_6_concentration(capsys, ring_lab):
    res, elapsed = ring_lab
    smallest = min(r["hbar"] for r in res.rows)
    checks = {"all converged": all(r["converged"] for r in res.rows)}
    for name in ("constant", "radial_bump", "shifted_bump"):
        rows = sorted((r for r in res.rows if r["variant"] == name), key=lambda r: -r["hbar"])
        x = np.asarray(rows[-1]["x_hbar"])
        assert rows[-1]["hbar"] == smallest
        checks[f"{name}: on the unit circle within 2 cells"] = \
            abs(np.linalg.norm(x) - 1.0) <= 2 * res.cell
        dist = [r["dist_to_M"] for r in rows]
        checks[f"{name}: dist_to_M non-increasing"] = bool(np.all(np.diff(dist) <= 0))
    checks["variants agree"] = res.variants_agree
    checks["shifted K moves x_hbar"] = bool(res.control_follows) and res.control_displacement > 2 * res.cell
    _report(capsys, 6, checks, elapsed, 900.0)


# -- 7: critical pipeline ----------------------------------------------------------------------


def test_criterion_7_critical(capsys):
    start = time.perf_counter()
    errs, zetas = [], []
    for hb in (0.1, 0.03, 0.01, 0.003):
        cmap = CriticalRescaleMap(hb, 2.0, 1.2, 5)
        out = solve_critical(cmap, 1.0, SolveConfig(max_iterations=300), V0=1.0, n=3000,
                             r_min=1e-4, extent=40)
        zetas.append(cmap.zeta)
        errs.append(critical_profile_fit(out, cmap, 1.0)[1] if out.converged else math.inf)
    raw = json.loads((CONFIGS / "critical_bad_alpha.json").read_text())
    assert raw["model"]["alpha"] == raw["model"]["gamma"]
    try:
        validate_config(raw)
        rejected = False
    except ConfigError:
        rejected = True
    checks = {
        "zeta decreasing": bool(np.all(np.diff(zetas) < 0)),
        "fit error decreasing": bool(np.all(np.isfinite(errs)) and np.all(np.diff(errs) < 0)),
        "alpha = gamma rejected at load": rejected,
    }
    _report(capsys, 7, checks, time.perf_counter() - start, 600.0)


# -- 8: exponential tails ----------------------------------------------------------------------


def test_criterion_8_tails(capsys, autonomous_sweep, ring_lab):
    start = time.perf_counter()
    _, outs, reports, V0, _ = autonomous_sweep
    tails = [(V0, rep.tail) for o, rep in zip(outs, reports) if o.converged]
    res, _ = ring_lab
    for row in res.rows:
        run = row["run"]
        if run.report is not None:
            tails.append((1.0, run.report.tail))
    checks = {
        "converged solves present": len(tails) == len(outs) + len(res.rows),
        "4 xi^2 < V0": all(4 * t.xi**2 < v0 for v0, t in tails),
        "envelope dominates": all(t.bound_holds for _, t in tails),
    }
    worst = 0.0
    for hb in np.geomspace(1e-3, 1.0, 13):
        for gamma in (0.0, 0.5, 1.0, 2.0, 6.0):
            for p in (2.5, 3.0, 4.0, 6.0, 9.0):
                smap = RescaleMap(float(hb), gamma, p)
                worst = max(worst, abs(smap.sqrt_kappa_over_eps * hb - 1.0))
    checks["sqrt(kappa)/eps = 1/hbar to 1e-12"] = worst <= 1e-12
    _report(capsys, 8, checks, time.perf_counter() - start, 60.0)


# -- 9: potential language ---------------------------------------------------------------------


def _witness(out):
    return json.loads((out / "assumptions.json").read_text())["violations"]


def test_criterion_9_dsl(capsys, tmp_path):
    start = time.perf_counter()
    rnd = random.Random(20240611)
    mismatches = 0
    for _ in range(1000):
        src = random_expression(rnd)
        env = {k: rnd.uniform(-3, 3) for k in ("r", "x1", "x2", "x3")}
        env["r"] = abs(env["r"])
        c = rnd.uniform(0.1, 2.0)
        try:
            ours = evaluate(parse(src, {"c": c}), env)
        except EvalError:
            ours = "error"
        try:
            ref = shunting_yard_eval(src, {**env, "c": c})
        except OracleError:
            ref = "error"
        mismatches += ours != ref
    checks = {"zero mismatches": mismatches == 0}
    expected = {
        "unbounded_V": ("V", lambda w: max(abs(x) for x in w) == 64.0),
        "K_boundary": ("K", lambda w: abs(math.hypot(*w) - 2.0) <= 1e-9),
        "nonpositive_V": ("V", lambda w: all(x == 0.0 for x in w)),
    }
    for name, (which, where) in expected.items():
        out = tmp_path / name
        code = main(["validate", "--config", str(CONFIGS / f"validate_{name}.json"), "--out-dir", str(out)])
        hits = [v for v in _witness(out) if v["assumption"] == which and v["witness"] and where(v["witness"])]
        checks[f"{name} rejected with witness"] = code == 1 and bool(hits)
    _report(capsys, 9, checks, time.perf_counter() - start, 5.0)
