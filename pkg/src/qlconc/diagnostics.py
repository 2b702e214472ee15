"""Post-solve validators.

Each check returns pass / fail / skip with the measured value; nothing here
raises on a failed check, so sweeps can keep every point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gamma as gamma_fn, kve

from .closed_form import sphere_area
from .grids import RadialGrid
from .transform import Transform

PASS, FAIL, SKIP = "pass", "fail", "skip"


@dataclass
class CheckResult:
    name: str
    anchor: str
    status: str
    value: float | None = None
    tolerance: float | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        v = self.value
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        return {"name": self.name, "anchor": self.anchor, "status": self.status, "value": v,
                "tolerance": self.tolerance, "reason": self.reason}


@dataclass
class ValidationSuite:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    def __getitem__(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


@dataclass
class DiagnosticsContext:
    """What the checks need besides the outcome.

    ``mode`` is ``"autonomous"`` (constant V and K), ``"critical"`` or
    ``"general"``.  ``ground_sup`` is ``||U||_inf`` of the limit ground state,
    ``c_m`` its energy, ``previous_gaps`` the energy gaps of earlier (larger
    eps) sweep points.
    """

    transform: Transform
    m: float
    p: float
    V0: float = 1.0
    mode: str = "autonomous"
    c_m: float | None = None
    ground_sup: float | None = None
    previous_gaps: tuple = ()
    critical_map: object = None
    pohozaev_tol: float = 1e-5
    plateau_tol: float = 0.05
    talenti_tol: float = 0.1
    sup_fraction: float = 0.5
    refine: int = 8


# -- (a) Pohozaev --------------------------------------------------------------------


def reconstructed_pohozaev(values, grid: RadialGrid, kappa: float, V0: float, m: float,
                           p: float, transform: Transform, refine: int = 8) -> float:
    """Pohozaev residual of the monotone-cubic reconstruction of a radial field.

    ``((N-2)/(2N) int |v'|^2 + kappa V0/2 int u^2 - m/p int u^p) / int |v'|^2``
    with ``u = G^{-1}(v)``, integrated by the composite Simpson rule on a grid
    refined ``refine`` times per cell.  The discrete solution satisfies the
    lumped identity exactly along dilations, so only the reconstruction
    exposes the discretization error.
    """
    r = grid.nodes
    N = grid.N
    spl = PchipInterpolator(r, values)
    dspl = spl.derivative()
    k = refine if refine % 2 == 0 else refine + 1
    t = np.linspace(0.0, 1.0, k + 1)
    fine = (r[:-1, None] + np.diff(r)[:, None] * t[None, :]).ravel()
    h = np.repeat(np.diff(r), k + 1)
    w = np.tile(np.r_[1.0, np.tile([4.0, 2.0], k // 2)[:-1], 1.0], r.size - 1)
    w = w * h / (3.0 * k)
    shell = sphere_area(N) * fine ** (N - 1)
    v = spl(fine)
    u = np.asarray(transform.G_inv(np.maximum(v, 0.0)), dtype=float)
    D = float(np.sum(w * shell * dspl(fine) ** 2))
    mass = float(np.sum(w * shell * u * u))
    src = float(np.sum(w * shell * u**p))
    return ((N - 2) / (2.0 * N) * D + 0.5 * kappa * V0 * mass - m / p * src) / D


def _check_pohozaev(outcome, ctx):
    name, anchor = "pohozaev", "Pohozaev identity of the autonomous equation"
    grid = outcome.field.grid
    if ctx.mode == "general":
        return CheckResult(name, anchor, SKIP, reason="non-autonomous potentials: identity has extra terms")
    if not isinstance(grid, RadialGrid):
        return CheckResult(name, anchor, SKIP, reason="reconstruction implemented for radial grids")
    res = reconstructed_pohozaev(outcome.field.values, grid, outcome.kappa, ctx.V0, ctx.m, ctx.p,
                                 ctx.transform, ctx.refine)
    ok = abs(res) <= ctx.pohozaev_tol
    return CheckResult(name, anchor, PASS if ok else FAIL, float(res), ctx.pohozaev_tol)


# -- (b) decay -------------------------------------------------------------------------


def yukawa_factor(N: int, s):
    """``2^{1-nu}/Gamma(nu) s^nu K_nu(s)`` with ``nu = (N-2)/2``: equals 1 at ``s = 0``.

    ``r^{2-N}`` times this is the decaying radial solution of ``-Lap y + a^2 y = 0``
    with ``s = a r``.
    """
    nu = 0.5 * (N - 2)
    s = np.asarray(s, dtype=float)
    out = np.ones_like(s)
    pos = s > 0
    sp_ = s[pos]
    out[pos] = 2.0 ** (1 - nu) / gamma_fn(nu) * sp_**nu * kve(nu, sp_) * np.exp(-sp_)
    return out


def far_field_plateau(values, grid: RadialGrid, kappa: float, V0: float,
                      inner_factor: float = 5.0, floor: float = 1e-6):
    """Relative variation of ``r^{N-2} v / Y(sqrt(kappa V0) r)`` beyond the core.

    ``Y`` is the normalized Yukawa factor, so the quantity tends to the decay
    constant of the limit ground state as ``kappa -> 0``.  The window runs from
    ``inner_factor`` half-widths to where ``v`` falls below ``floor`` times its
    peak (capped at half the grid radius, away from the Dirichlet node).
    Returns ``(variation, (r_a, r_b))``.
    """
    r = grid.nodes
    v = np.asarray(values)
    half = r[int(np.argmax(v < 0.5 * v.max()))]
    r_a = inner_factor * half
    above = r[v >= floor * v.max()]
    r_b = min(float(above.max()), 0.5 * r[-1])
    sel = (r >= r_a) & (r <= r_b)
    if r_b < 2 * r_a or sel.sum() < 3:
        return float("nan"), (float(r_a), float(r_b))
    a = math.sqrt(max(kappa * V0, 0.0))
    q = r[sel] ** (grid.N - 2) * v[sel] / yukawa_factor(grid.N, a * r[sel])
    return float(np.ptp(q) / q.max()), (float(r_a), float(r_b))


def _check_decay(outcome, ctx):
    grid = outcome.field.grid
    if ctx.mode == "critical":
        from .semiclassical import critical_profile_fit

        name, anchor = "talenti_fit", "critical limit profile is a Talenti bubble"
        if ctx.critical_map is None:
            return CheckResult(name, anchor, SKIP, reason="no critical map in context")
        mu, err = critical_profile_fit(outcome, ctx.critical_map, ctx.m)
        return CheckResult(name, anchor, PASS if err <= ctx.talenti_tol else FAIL, float(err),
                           ctx.talenti_tol, reason=f"mu={mu:.6g}")
    name, anchor = "tail_plateau", "fast decay r^{N-2} v -> const of the limit ground state"
    if not isinstance(grid, RadialGrid) or grid.N < 3:
        return CheckResult(name, anchor, SKIP, reason="plateau needs a radial grid with N >= 3")
    var, win = far_field_plateau(outcome.field.values, grid, outcome.kappa, ctx.V0)
    if not math.isfinite(var):
        return CheckResult(name, anchor, SKIP,
                           reason=f"no intermediate range between core and tail (window {win})")
    return CheckResult(name, anchor, PASS if var < ctx.plateau_tol else FAIL, var, ctx.plateau_tol,
                       reason=f"window r in [{win[0]:.4g}, {win[1]:.4g}]")


# -- (c) energy gap -----------------------------------------------------------------------


def trend_check(values, decreasing: bool = True):
    """Majority-of-steps monotonicity: ``(holds, fraction of steps in the wanted direction)``."""
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if len(vals) < 2:
        return True, 1.0
    steps = np.diff(vals)
    good = np.sum(steps <= 0) if decreasing else np.sum(steps >= 0)
    frac = float(good) / steps.size
    return frac >= 0.5, frac


def _check_energy_gap(outcome, ctx):
    name, anchor = "energy_gap", "penalized energy approaches the limit level C_m"
    if ctx.c_m is None:
        return CheckResult(name, anchor, SKIP, reason="no limit energy in context")
    gap = abs(outcome.report.Gamma_eps - ctx.c_m)
    holds, frac = trend_check(list(ctx.previous_gaps) + [gap])
    return CheckResult(name, anchor, PASS if holds else FAIL, float(gap), None,
                       reason=f"decreasing steps across sweep: {frac:.2f} (majority rule)")


# -- (d) sup-norm lower bound --------------------------------------------------------------------


def _check_sup(outcome, ctx):
    name, anchor = "sup_lower_bound", "sup norm of the rescaled solution bounded below uniformly"
    if ctx.ground_sup is None:
        return CheckResult(name, anchor, SKIP, reason="no ground-state sup norm in context")
    sup = float(np.max(outcome.field.values))
    bound = ctx.sup_fraction * ctx.ground_sup
    return CheckResult(name, anchor, PASS if sup >= bound else FAIL, sup, bound)


# -- (e) penalization inactive ----------------------------------------------------------------------


def _check_Q(outcome, ctx):
    name, anchor = "Q_inactive", "penalization vanishes at the solution"
    q = float(outcome.report.Q_eps)
    return CheckResult(name, anchor, PASS if q == 0.0 else FAIL, q, 0.0,
                       reason=f"penalty mass {outcome.report.penalty_mass:.3g} (< 1 required)")


def run_suite(outcome, ctx: DiagnosticsContext) -> ValidationSuite:
    """All checks for one solve; a non-converged outcome yields only skips."""
    if not outcome.converged:
        names = ["pohozaev", "talenti_fit" if ctx.mode == "critical" else "tail_plateau",
                 "energy_gap", "sup_lower_bound", "Q_inactive"]
        return ValidationSuite([CheckResult(n, "", SKIP, reason="solve did not converge")
                                for n in names])
    return ValidationSuite([_check_pohozaev(outcome, ctx), _check_decay(outcome, ctx),
                            _check_energy_gap(outcome, ctx), _check_sup(outcome, ctx),
                            _check_Q(outcome, ctx)])
