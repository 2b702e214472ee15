import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlconc.closed_form import DomainError, TalentiBubble, talenti_eval
from qlconc.energy import (ConcentrationSet, DiscreteProblem, EnergyError, EnergyReport,
                           PenalizationConfig, Potentials, Region)
from qlconc.grids import GridField, RadialGrid, TensorGrid, sample
from qlconc.semiclassical import (ConcentrationError, CriticalRescaleMap, LabSetup, RescaleMap,
                                  check_V_variant, concentration_report, critical_params,
                                  critical_profile_fit, fit_tail, halfwidth_mu, profile_error,
                                  rescale_backward, rescale_forward, run_lab, write_reports_csv)
from qlconc.solver import SolveConfig, SolveOutcome, solve
from qlconc.transform import STANDARD


def test_rescale_map_examples():
    s = RescaleMap(0.1, 2.0, 4.0)
    assert s.kappa == pytest.approx(0.01, rel=1e-14)
    assert s.eps == pytest.approx(0.01, rel=1e-14)
    one = RescaleMap(1.0, 3.7, 5.0)
    assert one.kappa == one.eps == one.amplitude == 1.0
    for bad in ((0.0, 1.0, 4.0), (float("inf"), 1.0, 4.0), (0.5, -1.0, 4.0), (0.5, 1.0, 2.0)):
        with pytest.raises(DomainError):
            RescaleMap(*bad)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0.0, 8.0), st.floats(2.05, 12.0))
def test_exponent_identities(hbar, gamma, p):
    s = RescaleMap(hbar, gamma, p)
    assert s.kappa_from_eps == pytest.approx(s.kappa, rel=1e-12, abs=1e-300)
    assert s.sqrt_kappa_over_eps == pytest.approx(1.0 / hbar, rel=1e-12)


def test_critical_params_examples():
    lam, zeta, eps = critical_params(CriticalRescaleMap(0.1, 2.0, 1.0, 5))
    assert lam == pytest.approx(0.1 ** (2 / 3), rel=1e-14) and lam == pytest.approx(0.21544, abs=5e-6)
    assert zeta == pytest.approx(0.1, rel=1e-14)
    assert eps == pytest.approx(0.1 ** (4 / 3), rel=1e-14) and eps == pytest.approx(0.046416, abs=5e-7)
    assert critical_params(CriticalRescaleMap(1.0, 2.0, 1.0, 5)) == (1.0, 1.0, 1.0)
    for alpha in (2.0, 2.5, 0.0, -1.0):
        with pytest.raises(DomainError, match="alpha"):
            CriticalRescaleMap(0.1, 2.0, alpha, 5)
    with pytest.raises(DomainError):
        CriticalRescaleMap(0.1, 2.0, 1.0, 2)
    c = CriticalRescaleMap(0.01, 2.0, 1.2, 6)
    assert c.p == 3.0 and c.transform.zeta == c.zeta


def test_identity_map_leaves_fields_alone():
    g = RadialGrid.geometric(5, 10.0, 200)
    f = sample(g, lambda r: np.exp(-r * r))
    s = RescaleMap(1.0, 2.0, 4.0)
    out = rescale_forward(s, f)
    assert np.array_equal(out.values, f.values) and np.array_equal(out.grid.nodes, g.nodes)
    out = rescale_forward(s, f, g)
    assert np.max(np.abs(out.values - f.values)) == 0.0


@pytest.mark.parametrize("hbar", [0.5, 0.1])
def test_round_trip_on_talenti_bubble(hbar):
    s = RescaleMap(hbar, 2.0, 4.0)
    b = TalentiBubble(5, 1.0, 1.0)
    phys = RadialGrid.geometric(5, 50.0, 20_000, 1e-4)
    u = sample(phys, lambda r: talenti_eval(b, r))
    other = RadialGrid.geometric(5, 50.0 / s.eps, 15_000, 3e-4 / s.eps)
    back = rescale_backward(s, rescale_forward(s, u, other), phys)
    # the intermediate field is pinned to 0 on its Dirichlet node; skip the last cell it touches
    inner = phys.nodes <= s.eps * other.nodes[-2]
    assert np.max(np.abs(back.values - u.values)[inner]) <= 1e-6
    # the interpolation-free route is exact
    exact = rescale_backward(s, rescale_forward(s, u))
    assert np.max(np.abs(exact.values - u.values)) <= 1e-15 * u.values.max()


def test_rescale_outside_support_is_a_domain_error():
    s = RescaleMap(0.5, 2.0, 4.0)
    g = RadialGrid.geometric(5, 10.0, 100)
    f = sample(g, lambda r: np.exp(-r))
    with pytest.raises(DomainError):
        rescale_forward(s, f, RadialGrid.geometric(5, 10.0 / s.eps * 2, 100))
    tg = TensorGrid(1.0, 16, 2)
    tf = sample(tg, lambda x: np.exp(-np.sum(x**2, axis=1)))
    with pytest.raises(DomainError):
        rescale_backward(s, tf, TensorGrid(1.0, 16, 2))
    back = rescale_backward(s, tf, TensorGrid(0.2, 16, 2))
    assert back.values.max() == pytest.approx(1.0 / s.amplitude, rel=1e-12)


def test_fit_tail_on_exact_exponential():
    r = np.linspace(0, 400, 4001)
    kappa, V0 = 0.04, 1.0
    v = np.exp(-0.3 * math.sqrt(kappa) * r)
    tf = fit_tail(v, r, kappa, V0)
    assert tf.xi_fit == pytest.approx(0.3, rel=1e-10)
    assert tf.xi == tf.xi_fit and 4 * tf.xi**2 < V0
    assert tf.bound_holds and tf.n_points > 100
    # a faster decay than the comparison rate allows is capped at sqrt(V0)/2
    fast = np.exp(-2.0 * math.sqrt(kappa) * r)
    tf = fit_tail(fast, r, kappa, V0)
    assert tf.xi_fit == pytest.approx(2.0, rel=1e-10) and tf.xi < 0.5 and tf.bound_holds
    with pytest.raises(ConcentrationError):
        fit_tail(np.zeros(10), np.arange(10.0), kappa, V0)
    short = fit_tail(np.exp(-r[:5]), r[:5], kappa, V0)
    assert short.n_points < 3 and not short.bound_holds


def _outcome(grid, values, converged=True, gamma=0.0):
    rep = EnergyReport(0.0, gamma, 0.0, gamma, 0.0, 0.0)
    return SolveOutcome(GridField(grid, values), rep, 1, converged, 0.0, message="stub")


def test_reports_refuse_non_converged_solves():
    g = RadialGrid.geometric(5, 10.0, 100)
    out = _outcome(g, np.exp(-g.nodes), converged=False)
    with pytest.raises(ConcentrationError):
        concentration_report(out, RescaleMap(0.5, 2.0, 4.0), Potentials.constant())
    with pytest.raises(ConcentrationError):
        critical_profile_fit(out, None, 1.0)


@pytest.mark.parametrize("mu", [0.3, 1.0, 2.5])
def test_critical_fit_on_exact_bubble(mu):
    b = TalentiBubble(5, 1.0, mu)
    g = RadialGrid.geometric(5, 1e3, 4000, 1e-4)
    out = _outcome(g, np.where(g.free, talenti_eval(b, g.nodes), 0.0))
    fit_mu, err = critical_profile_fit(out, None, 1.0)
    assert fit_mu == pytest.approx(mu, rel=1e-12) and err <= 1e-6
    assert halfwidth_mu(out) == pytest.approx(mu, rel=1e-5)
    with pytest.raises(ConcentrationError):
        critical_profile_fit(_outcome(g, np.zeros(g.n)), None, 1.0)


def test_profile_error_translation_search():
    g = TensorGrid(4.0, 40, 2)
    bump = lambda r: np.exp(-np.asarray(r) ** 2)  # noqa: E731
    vals = bump(np.linalg.norm(g.points - g.points[int(np.argmin(np.sum((g.points - [1.0, -0.6]) ** 2, 1)))],
                               axis=1))
    vals[~g.free] = 0.0
    assert profile_error(vals, g, bump) <= 1e-12
    rg = RadialGrid.geometric(5, 10.0, 300)
    assert profile_error(bump(rg.nodes) * rg.free, rg, bump) <= 1e-12


def test_autonomous_reports(ground_n5, tmp_path):
    U = ground_n5.profile
    D = U.dirichlet_energy()
    V0 = 1e-3
    pots = Potentials.constant(V0, 1.0, 4.0)
    pen = PenalizationConfig.for_ground_state(D, 5, Region.ball(600.0), 5.0)
    reps = []
    for hbar in (1.0, 0.56, 0.4):
        s = RescaleMap(hbar, 6.0, 4.0)
        R = max(20 / math.sqrt(s.kappa * V0), 2 * 5.0 / s.eps * 1.02)
        prob = DiscreteProblem(RadialGrid.geometric(5, R, 4000, 1e-4), pots, pen, s.kappa, s.eps, STANDARD)
        out = solve(SolveConfig(), prob, U)
        rep = concentration_report(out, s, pots, U)
        assert rep.dist_to_M == 0.0 and rep.x_hbar[0] == 0.0
        assert math.isfinite(rep.energy_gap) and not rep.Q_active
        assert rep.tail.bound_holds and 4 * rep.tail_rate_xi**2 < V0
        reps.append(rep)
    errs = [r.profile_error_d12 for r in reps]
    assert np.all(np.diff(errs) < 0)
    write_reports_csv(tmp_path / "c.csv", reps, {"variant": ["a", "b", "c"]})
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].split(",") == ["hbar", "kappa", "eps", "x_hbar", "dist_to_M", "profile_error_d12",
                                   "tail_xi", "energy_gap", "Q_active", "variant"]
    assert len(lines) == 4


def _ring(center):
    c = np.asarray(center, dtype=float)
    return lambda pts: 2.0 - 20.0 * np.minimum((np.linalg.norm(pts - c, axis=1) - 1.0) ** 2, 0.5)


def test_check_V_variant():
    setup = LabSetup(_ring((0, 0)), 2.0, 3.0, ConcentrationSet((0.0, 0.0), 1.0), n=40)
    lo, hi = check_V_variant(lambda p: 1 + 0.2 * np.exp(-np.sum(p**2, 1)), 1.0, setup)
    assert lo >= 1.0 and hi == pytest.approx(1.2)
    with pytest.raises(EnergyError, match="assumption \\(V\\)"):
        check_V_variant(lambda p: 1 - 0.2 * np.exp(-np.sum(p**2, 1)), 1.0, setup)
    with pytest.raises(EnergyError):
        check_V_variant(lambda p: np.where(np.sum(p**2, 1) < 0.1, np.inf, 1.0), 0.1, setup)


def test_scaling_V_leaves_the_peak_in_place():
    setup = LabSetup(_ring((0, 0)), 2.0, 3.0, ConcentrationSet((0.0, 0.0), 1.0), n=80)
    xs = []
    for V, V0 in ((lambda p: 1 + 0.2 * np.exp(-np.sum(p**2, 1)), 1.0),
                  (lambda p: 10 * (1 + 0.2 * np.exp(-np.sum(p**2, 1))), 10.0)):
        run = run_lab(setup, V, V0, [0.2])[0]
        assert run.report is not None
        assert run.report.dist_to_M <= setup.cell
        xs.append(np.asarray(run.report.x_hbar))
    assert np.linalg.norm(xs[0] - xs[1]) <= 2 * setup.cell
    moved = LabSetup(_ring((0.3, 0)), 2.0, 3.0, ConcentrationSet((0.3, 0.0), 1.0), n=80)
    run = run_lab(moved, lambda p: np.ones(len(p)), 1.0, [0.2])[0]
    assert abs(np.linalg.norm(np.asarray(run.report.x_hbar) - xs[0]) - 0.3) <= 2 * setup.cell
