"""The hbar-level pipeline: rescaling maps, reconstruction and concentration diagnostics.

Subcritical scaling: ``v(x) = hbar^{gamma/2} u(eps x)`` with
``kappa = hbar^{(p-2) gamma / 2}`` and ``eps = hbar^{1 + (p-2) gamma / 4}``.
Critical scaling (``p = 2N/(N-2)``, ``0 < alpha < gamma``):
``v(x) = hbar^{alpha/2} u(eps_c x)`` with ``lambda = hbar^{(p-2) alpha / 2}``,
``zeta = hbar^{gamma - alpha}`` and ``eps_c = hbar^{1 + (p-2) alpha / 4}``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator, RegularGridInterpolator

from .closed_form import DomainError, TalentiBubble, critical_exponent, talenti_eval
from .energy import (DiscreteProblem, EnergyError, PenalizationConfig, Potentials, Region,
                     ConcentrationSet, energy_Lm)
from .grids import GridField, RadialGrid, TensorGrid
from .shooting import RadialProfile
from .solver import SolveConfig, SolveOutcome, solve
from .transform import Transform

log = logging.getLogger(__name__)


class ConcentrationError(ValueError):
    pass


# -- rescaling maps -----------------------------------------------------------------


@dataclass(frozen=True)
class RescaleMap:
    """Subcritical scaling; ``kappa`` and ``eps`` are always recomputed from ``(hbar, gamma, p)``."""

    hbar: float
    gamma: float
    p: float

    def __post_init__(self):
        if not (self.hbar > 0 and math.isfinite(self.hbar)):
            raise DomainError("hbar must be positive and finite")
        if not self.gamma >= 0:
            raise DomainError("gamma must be nonnegative")
        if not self.p > 2:
            raise DomainError("p must exceed 2")

    @property
    def kappa(self) -> float:
        return self.hbar ** ((self.p - 2) * self.gamma / 2)

    @property
    def eps(self) -> float:
        return self.hbar ** (1 + (self.p - 2) * self.gamma / 4)

    @property
    def amplitude(self) -> float:
        """Factor multiplying ``u`` in the rescaled field."""
        return self.hbar ** (self.gamma / 2)

    @property
    def kappa_from_eps(self) -> float:
        """``kappa`` re-expressed through ``eps`` alone (algebraic cross-check)."""
        q = (self.p - 2) * self.gamma
        return self.eps ** (2 * q / (4 + q))

    @property
    def sqrt_kappa_over_eps(self) -> float:
        """Equals ``1/hbar`` identically; it grows as ``hbar -> 0``."""
        return math.sqrt(self.kappa) / self.eps

    def to_dict(self) -> dict:
        return {"hbar": self.hbar, "gamma": self.gamma, "p": self.p,
                "kappa": self.kappa, "eps": self.eps}


@dataclass(frozen=True)
class CriticalRescaleMap:
    """Critical scaling; ``alpha = gamma`` has no fast-decaying limit and is rejected."""

    hbar: float
    gamma: float
    alpha: float
    N: int

    def __post_init__(self):
        if not (self.hbar > 0 and math.isfinite(self.hbar)):
            raise DomainError("hbar must be positive and finite")
        if int(self.N) != self.N or self.N < 3:
            raise DomainError("N must be an integer >= 3")
        if not (0 < self.alpha < self.gamma):
            raise DomainError(
                f"alpha must satisfy 0 < alpha < gamma (got alpha={self.alpha}, gamma={self.gamma}); "
                "alpha = gamma is not allowed: the critical zero-mass quasilinear equation "
                "has no fast-decaying solution")

    @property
    def p(self) -> float:
        return critical_exponent(self.N)

    @property
    def lam(self) -> float:
        return self.hbar ** ((self.p - 2) * self.alpha / 2)

    @property
    def zeta(self) -> float:
        return self.hbar ** (self.gamma - self.alpha)

    @property
    def eps_c(self) -> float:
        return self.hbar ** (1 + (self.p - 2) * self.alpha / 4)

    # uniform names so the rescale functions accept either map
    kappa = lam
    eps = eps_c

    @property
    def amplitude(self) -> float:
        return self.hbar ** (self.alpha / 2)

    @property
    def transform(self) -> Transform:
        return Transform(self.zeta)

    def to_dict(self) -> dict:
        return {"hbar": self.hbar, "gamma": self.gamma, "alpha": self.alpha, "N": self.N,
                "p": self.p, "lambda": self.lam, "zeta": self.zeta, "eps_c": self.eps_c}


def critical_params(cmap: CriticalRescaleMap):
    """``(lambda, zeta, eps_c)``."""
    return cmap.lam, cmap.zeta, cmap.eps_c


# -- rescaling of fields -----------------------------------------------------------------


def _scaled_grid(grid, factor: float):
    if isinstance(grid, RadialGrid):
        return RadialGrid(grid.nodes * factor, grid.N)
    return TensorGrid(grid.half_width * factor, grid.n_int, grid.dim)


def _sample(fieldv: GridField, coords, what: str):
    """Monotone cubic interpolation of ``fieldv`` at physical coordinates ``coords``."""
    g = fieldv.grid
    tol = 1e-12
    if isinstance(g, RadialGrid):
        r = np.linalg.norm(coords, axis=1) if np.ndim(coords) == 2 else np.asarray(coords)
        if np.any(r > g.r_max * (1 + tol)):
            raise DomainError(f"{what}: target reaches r={r.max():.6g} beyond the source grid "
                              f"(r_max={g.r_max:.6g})")
        return PchipInterpolator(g.nodes, fieldv.values)(np.minimum(r, g.r_max))
    if np.any(np.abs(coords) > g.half_width * (1 + tol)):
        raise DomainError(f"{what}: target points leave the source box [-{g.half_width:.6g}, "
                          f"{g.half_width:.6g}]^{g.dim}")
    it = RegularGridInterpolator([g.axis] * g.dim, fieldv.values.reshape(g.shape), method="pchip")
    return it(np.clip(coords, -g.half_width, g.half_width))


def _target_coords(grid):
    return grid.nodes if isinstance(grid, RadialGrid) else grid.points


def rescale_forward(smap, u: GridField, target_grid=None) -> GridField:
    """``v(x) = A u(eps x)`` from a physical field ``u``.

    Without ``target_grid`` the result lives on the source grid scaled by
    ``1/eps`` and no interpolation is involved.
    """
    A, eps = smap.amplitude, smap.eps
    if target_grid is None:
        return GridField(_scaled_grid(u.grid, 1.0 / eps), A * u.values)
    coords = eps * _target_coords(target_grid)
    vals = A * _sample(u, coords, "rescale_forward")
    vals[~target_grid.free] = 0.0
    return GridField(target_grid, vals)


def rescale_backward(smap, v: GridField, target_grid=None) -> GridField:
    """``u(y) = v(y / eps) / A``: reconstruct the physical field."""
    A, eps = smap.amplitude, smap.eps
    if target_grid is None:
        return GridField(_scaled_grid(v.grid, eps), v.values / A)
    coords = _target_coords(target_grid) / eps
    vals = _sample(v, coords, "rescale_backward") / A
    vals[~target_grid.free] = 0.0
    return GridField(target_grid, vals)


# -- concentration diagnostics ---------------------------------------------------------------

TAIL_WINDOW = (1e-3, 1e-8)
TAIL_MARGIN = 1e-3


@dataclass
class TailFit:
    xi: float
    xi_fit: float
    constant: float
    window: tuple
    n_points: int
    bound_holds: bool
    worst_ratio: float

    def to_dict(self) -> dict:
        return {"xi": self.xi, "xi_fit": self.xi_fit, "constant": self.constant,
                "window": list(self.window), "n_points": self.n_points,
                "bound_holds": self.bound_holds, "worst_ratio": self.worst_ratio}


def fit_tail(values, dist, kappa: float, V0: float, free=None,
             window=TAIL_WINDOW) -> TailFit:
    """Exponential envelope ``C exp(-xi sqrt(kappa) dist)`` for the decaying part of ``values``.

    ``xi_fit`` is the least-squares rate of ``log v`` on the window where ``v``
    falls from ``window[0]`` to ``window[1]`` times its maximum.  The
    comparison rate is ``xi = min(xi_fit, (1 - margin) sqrt(V0)/2)`` so that
    ``4 xi^2 < V0``; ``C`` is the smallest constant dominating ``v`` on the
    window, and the bound is then checked on every non-core node beyond the window start.
    """
    v = np.asarray(values, dtype=float)
    dist = np.asarray(dist, dtype=float)
    free = np.ones(v.size, dtype=bool) if free is None else np.asarray(free)
    vmax = float(v.max())
    if not (vmax > 0 and kappa > 0):
        raise ConcentrationError("tail fit needs a positive field and kappa > 0")
    core = v >= window[0] * vmax
    rho0 = float(dist[core].max())
    sel = free & (dist >= rho0) & (v < window[0] * vmax) & (v >= window[1] * vmax)
    cap = (1.0 - TAIL_MARGIN) * math.sqrt(V0) / 2.0
    sk = math.sqrt(kappa)
    if sel.sum() < 3 or np.ptp(dist[sel]) == 0:
        return TailFit(0.0, float("nan"), vmax, (rho0, rho0), int(sel.sum()), False, float("inf"))
    A = np.vstack([np.ones(sel.sum()), -sk * dist[sel]]).T
    coef, *_ = np.linalg.lstsq(A, np.log(v[sel]), rcond=None)
    xi_fit = float(coef[1])
    xi = min(max(xi_fit, 0.0), cap)
    C = float(np.max(v[sel] * np.exp(xi * sk * dist[sel])))
    # tensor grids put many nodes at the window-start distance; core nodes among them are excluded
    beyond = free & ~core & (dist >= rho0)
    ratio = v[beyond] / (C * np.exp(-xi * sk * dist[beyond]))
    worst = float(ratio.max()) if ratio.size else 0.0
    return TailFit(xi, xi_fit, C, (rho0, float(dist[sel].max())), int(sel.sum()),
                   bool(worst <= 1.0 + 1e-9), worst)


@dataclass
class ConcentrationReport:
    hbar: float
    kappa: float
    eps: float
    x_hbar: tuple
    dist_to_M: float
    profile_error_d12: float
    tail_rate_xi: float
    energy_gap: float
    Q_active: bool
    penalty_mass: float
    peak_value: float
    tail: TailFit | None = None
    notes: list = field(default_factory=list)

    CSV_COLUMNS = ("hbar", "kappa", "eps", "x_hbar", "dist_to_M", "profile_error_d12",
                   "tail_xi", "energy_gap", "Q_active")

    def csv_row(self) -> list:
        x = ";".join(f"{c:.17g}" for c in self.x_hbar)
        return [f"{self.hbar:.17g}", f"{self.kappa:.17g}", f"{self.eps:.17g}", x,
                f"{self.dist_to_M:.17g}", f"{self.profile_error_d12:.17g}",
                f"{self.tail_rate_xi:.17g}", f"{self.energy_gap:.17g}", str(self.Q_active).lower()]

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        return {"hbar": self.hbar, "kappa": self.kappa, "eps": self.eps,
                "x_hbar": list(self.x_hbar), "dist_to_M": clean(self.dist_to_M),
                "profile_error_d12": clean(self.profile_error_d12),
                "tail_rate_xi": clean(self.tail_rate_xi), "energy_gap": clean(self.energy_gap),
                "Q_active": self.Q_active, "penalty_mass": self.penalty_mass,
                "peak_value": self.peak_value,
                "tail": None if self.tail is None else self.tail.to_dict(), "notes": self.notes}


def write_reports_csv(path, reports, extra: dict | None = None) -> None:
    """One row per report; ``extra`` maps column name -> list of per-row values."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(list(ConcentrationReport.CSV_COLUMNS) + list(extra))
        for i, rep in enumerate(reports):
            wr.writerow(rep.csv_row() + [str(extra[k][i]) for k in extra])


def _profile_values(limit_profile, grid, center_index=None):
    """Limit profile sampled on ``grid`` (centred at node ``center_index`` on tensor grids)."""
    if isinstance(limit_profile, GridField):
        if limit_profile.grid is grid or (
                isinstance(grid, TensorGrid) and isinstance(limit_profile.grid, TensorGrid)
                and limit_profile.grid.shape == grid.shape):
            return np.asarray(limit_profile.values)
        if isinstance(limit_profile.grid, RadialGrid):
            it = PchipInterpolator(limit_profile.grid.nodes, limit_profile.values, extrapolate=False)
            fn = lambda r: np.nan_to_num(it(r), nan=0.0)  # noqa: E731
        else:
            raise ConcentrationError("tensor limit profiles must share the solution grid")
    elif callable(limit_profile):
        fn = limit_profile
    else:
        raise ConcentrationError("unsupported limit profile")
    if isinstance(grid, RadialGrid):
        vals = np.asarray(fn(grid.nodes), dtype=float)
    else:
        c = grid.points[center_index] if center_index is not None else 0.0
        vals = np.asarray(fn(np.linalg.norm(grid.points - c, axis=1)), dtype=float)
    vals = vals.copy()
    vals[~grid.free] = 0.0
    return vals


def _shift_tensor(values, shape, offset):
    """Translate nodal values by an integer node offset with zero fill."""
    a = values.reshape(shape)
    out = np.zeros_like(a)
    src, dst = [], []
    for k, o in enumerate(offset):
        n = shape[k]
        if o >= 0:
            src.append(slice(0, n - o))
            dst.append(slice(o, n))
        else:
            src.append(slice(-o, n))
            dst.append(slice(0, n + o))
    out[tuple(dst)] = a[tuple(src)]
    return out.ravel()


def _d12(grid, w):
    return float(np.sqrt(max(w @ (grid.stiffness @ w), 0.0)))


def profile_error(values, grid, limit_profile, search: int = 1) -> float:
    """Relative ``D^{1,2}`` distance to the limit profile after the best discrete translation.

    On radial grids both are centred at the origin.  On tensor grids the
    profile is centred on the maximum node and shifted by up to ``search``
    nodes along each axis.
    """
    values = np.asarray(values, dtype=float)
    if isinstance(grid, RadialGrid):
        U = _profile_values(limit_profile, grid)
        return _d12(grid, values - U) / _d12(grid, U)
    i = int(np.argmax(values))
    if isinstance(limit_profile, GridField) and isinstance(limit_profile.grid, TensorGrid):
        U0 = np.asarray(limit_profile.values, dtype=float)
        j = int(np.argmax(U0))
        base = np.array(np.unravel_index(i, grid.shape)) - np.array(np.unravel_index(j, grid.shape))
        candidates = []
        for o in np.ndindex(*([2 * search + 1] * grid.dim)):
            candidates.append(_shift_tensor(U0, grid.shape, base + np.array(o) - search))
    else:
        idx = np.array(np.unravel_index(i, grid.shape))
        candidates = []
        for o in np.ndindex(*([2 * search + 1] * grid.dim)):
            k = idx + np.array(o) - search
            if np.all((k >= 0) & (k < np.array(grid.shape))):
                candidates.append(_profile_values(limit_profile, grid,
                                                  int(np.ravel_multi_index(k, grid.shape))))
    best = min(_d12(grid, values - U) / max(_d12(grid, U), 1e-300) for U in candidates)
    return float(best)


def concentration_report(outcome: SolveOutcome, smap, pots: Potentials, limit_profile=None,
                         c_m: float | None = None, transform: Transform | None = None
                         ) -> ConcentrationReport:
    """Location, profile error, tail envelope and energy gap of a converged solve.

    ``x_hbar`` is ``eps`` times the first node attaining the maximum, so it is
    in physical coordinates.  ``profile_error_d12`` is relative to the
    ``D^{1,2}`` norm of the limit profile and is NaN when no limit profile is
    available (two-dimensional runs).  ``c_m`` defaults to the limit energy of
    a ``RadialProfile`` limit profile.
    """
    if not outcome.converged:
        raise ConcentrationError(f"refusing to report on a non-converged solve: {outcome.message}")
    grid = outcome.field.grid
    v = np.asarray(outcome.field.values)
    i = int(np.argmax(v))
    x_node = grid.points[i]
    # radial grids store (r, 0, ..., 0): a maximum at r > 0 is a sphere, reported by one point
    x_hbar = tuple(float(c) for c in smap.eps * x_node)
    notes = []
    dist_M = pots.concentration_set_M.distance(np.asarray(x_hbar))

    if limit_profile is None:
        perr = float("nan")
        notes.append("no limit profile supplied; profile error not computed")
    else:
        prof = limit_profile
        if isinstance(prof, RadialProfile):
            prof = prof.__call__
        perr = profile_error(v, grid, prof)

    dist = np.linalg.norm(grid.points - x_node, axis=1)
    tail = fit_tail(v, dist, smap.kappa, pots.V0, grid.free)
    if tail.n_points < 3:
        notes.append("too few nodes in the tail window for an exponential fit")

    if c_m is None and isinstance(limit_profile, RadialProfile):
        T = transform if transform is not None else Transform(1.0)
        c_m = energy_Lm(limit_profile, pots.m, pots.p, T)
    gap = abs(outcome.report.Gamma_eps - c_m) if c_m is not None else float("nan")
    rep = outcome.report
    return ConcentrationReport(
        hbar=float(smap.hbar), kappa=float(smap.kappa), eps=float(smap.eps), x_hbar=x_hbar,
        dist_to_M=float(dist_M), profile_error_d12=float(perr), tail_rate_xi=float(tail.xi),
        energy_gap=float(gap), Q_active=bool(rep.Q_eps > 0), penalty_mass=float(rep.penalty_mass),
        peak_value=float(v[i]), tail=tail, notes=notes)


# -- two-dimensional concentration lab ----------------------------------------------------------


@dataclass(frozen=True)
class LabSetup:
    """Tensor-grid problem family in physical coordinates, indexed by ``hbar``.

    The box is ``[-half_width/eps, half_width/eps]^dim`` in rescaled
    coordinates, so the physical resolution ``2 half_width / n`` is the same
    for every ``hbar``.
    """

    K: object
    m: float
    K0: float
    M: ConcentrationSet
    p: float = 6.0
    gamma: float = 1.0
    zeta: float = 1.0
    region_O: Region = Region.ball(20.0)
    beta: float = 0.15
    t0: float = 2.0
    tau: float = 1.0
    half_width: float = 1.6
    n: int = 160
    dim: int = 2

    @property
    def cell(self) -> float:
        """Physical grid spacing."""
        return 2.0 * self.half_width / self.n

    def potentials(self, V, V0: float) -> Potentials:
        return Potentials(V, self.K, m=self.m, K0=self.K0, V0=V0, concentration_set_M=self.M,
                          p=self.p)

    def problem(self, hbar: float, V, V0: float) -> tuple:
        smap = RescaleMap(hbar, self.gamma, self.p)
        grid = TensorGrid(self.half_width / smap.eps, self.n, self.dim)
        pen = PenalizationConfig(self.tau, self.region_O, self.beta, self.t0)
        prob = DiscreteProblem(grid, self.potentials(V, V0), pen, smap.kappa, smap.eps,
                               Transform(self.zeta))
        return smap, prob

    def initial_profile(self, smap: RescaleMap, V0: float):
        # Gaussian of the linear decay length; there is no zero-mass ground state in 2D
        k = smap.kappa * V0
        return lambda r: np.exp(-0.5 * k * np.asarray(r) ** 2)


def check_V_variant(V, V0: float, setup: LabSetup, samples: int = 101):
    """Reject a ``V`` violating ``0 < V0 <= V <= sup < inf`` on the physical box."""
    ax = np.linspace(-setup.half_width, setup.half_width, samples)
    mesh = np.meshgrid(*([ax] * setup.dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = np.asarray(V(pts), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EnergyError("assumption (V): V is not finite on the sample box")
    if not V0 > 0:
        raise EnergyError(f"assumption (V): V0 = {V0} must be positive")
    k = int(np.argmin(vals))
    if vals[k] < V0 * (1 - 1e-12):
        raise EnergyError(f"assumption (V): V = {vals[k]:.6g} < V0 = {V0:.6g} at {pts[k].tolist()}")
    return float(vals.min()), float(vals.max())


@dataclass
class LabRun:
    name: str
    hbar: float
    outcome: SolveOutcome
    report: ConcentrationReport | None
    error: str = ""


def run_lab(setup: LabSetup, V, V0: float, hbars, cfg: SolveConfig | None = None,
            name: str = "", limit_fields: dict | None = None, init_center=None) -> list:
    """Solve the lab problem for each ``hbar`` (decreasing) and report concentration."""
    cfg = cfg or SolveConfig(max_iterations=200)
    if init_center is not None:
        cfg = SolveConfig(**{**cfg.__dict__, "init_center": tuple(init_center)})
    runs = []
    for hb in hbars:
        smap, prob = setup.problem(hb, V, V0)
        try:
            out = solve(cfg, prob, setup.initial_profile(smap, V0))
        except Exception as exc:  # noqa: BLE001 - recorded per point
            runs.append(LabRun(name, hb, None, None, f"{type(exc).__name__}: {exc}"))
            continue
        rep = None
        if out.converged:
            lim = None if limit_fields is None else limit_fields.get(hb)
            rep = concentration_report(out, smap, prob.pots, lim)
        runs.append(LabRun(name, hb, out, rep, "" if out.converged else out.message))
    return runs


@dataclass
class VIrrelevanceResult:
    rows: list
    cell: float
    max_pairwise: float
    control_displacement: float | None
    expected_displacement: float | None
    tolerance_cells: float = 2.0

    @property
    def variants_agree(self) -> bool:
        return self.max_pairwise <= self.tolerance_cells * self.cell

    @property
    def control_follows(self) -> bool | None:
        if self.control_displacement is None:
            return None
        return abs(self.control_displacement - self.expected_displacement) <= \
            self.tolerance_cells * self.cell

    def table(self) -> list:
        """Rows ``(variant, hbar, x_hbar, dist_to_M, profile_error_d12, converged)``."""
        return self.rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["variant", "hbar", "x_hbar", "dist_to_M", "profile_error_d12",
                         "converged"])
            for r in self.rows:
                wr.writerow([r["variant"], f"{r['hbar']:.17g}",
                             ";".join(f"{c:.17g}" for c in r["x_hbar"]),
                             f"{r['dist_to_M']:.17g}", f"{r['profile_error_d12']:.17g}",
                             str(r["converged"]).lower()])


def v_irrelevance_experiment(setup: LabSetup, v_variants: dict, hbars,
                             cfg: SolveConfig | None = None, control: LabSetup | None = None,
                             tolerance_cells: float = 2.0):
    """Solve the lab for each ``V`` variant with ``K`` fixed; optionally a moved-``K`` control.

    ``v_variants`` maps a name to ``(V, V0)``.  Profile errors are measured
    against the first variant at the same ``hbar`` after the best translation.
    The control reuses the first variant's ``V`` with the control's ``K``.
    """
    if not v_variants:
        raise ValueError("need at least one V variant")
    for name, (V, V0) in v_variants.items():
        try:
            check_V_variant(V, V0, setup)
        except EnergyError as exc:
            raise EnergyError(f"variant {name!r}: {exc}") from None
    hbars = sorted(hbars, reverse=True)
    names = list(v_variants)
    all_runs = {}
    ref_fields = None
    for name in names:
        V, V0 = v_variants[name]
        runs = run_lab(setup, V, V0, hbars, cfg, name, limit_fields=ref_fields)
        all_runs[name] = runs
        if ref_fields is None:
            ref_fields = {r.hbar: r.outcome.field for r in runs if r.outcome is not None}
            for r in runs:
                if r.report is not None:
                    r.report.profile_error_d12 = 0.0
    rows = []
    for name in names:
        for r in all_runs[name]:
            ok = r.report is not None
            rows.append({"variant": name, "hbar": r.hbar,
                         "x_hbar": r.report.x_hbar if ok else (float("nan"),) * setup.dim,
                         "dist_to_M": r.report.dist_to_M if ok else float("nan"),
                         "profile_error_d12": r.report.profile_error_d12 if ok else float("nan"),
                         "converged": ok, "run": r})
    smallest = hbars[-1]
    xs = [np.asarray(r["x_hbar"]) for r in rows if r["hbar"] == smallest]
    pair = max((float(np.linalg.norm(a - b)) for a in xs for b in xs), default=0.0)
    disp = exp = None
    if control is not None:
        V, V0 = v_variants[names[0]]
        crun = run_lab(control, V, V0, [smallest], cfg, "control")[0]
        if crun.report is None:
            disp = float("inf")
        else:
            x_base = np.asarray(xs[0])
            disp = float(np.linalg.norm(x_base - np.asarray(crun.report.x_hbar)))
            rows.append({"variant": "control", "hbar": smallest, "x_hbar": crun.report.x_hbar,
                         "dist_to_M": crun.report.dist_to_M,
                         "profile_error_d12": float("nan"), "converged": True, "run": crun})
        exp = float(np.linalg.norm(setup.M.representative(setup.dim)
                                   - control.M.representative(control.dim)))
    return VIrrelevanceResult(rows, setup.cell, pair, disp, exp, tolerance_cells)


# -- critical pipeline ------------------------------------------------------------------------


def critical_problem(cmap: CriticalRescaleMap, m: float = 1.0, V0: float = 1.0,
                     n: int = 3000, r_min: float = 1e-4, extent: float = 40.0,
                     region_O: Region | None = None, beta: float = 5.0, t0: float = 3.0):
    """Autonomous critical problem on a radial grid reaching ``extent`` decay lengths."""
    pots = Potentials.constant(V0, m, cmap.p)
    pen = PenalizationConfig(1.0, region_O or Region.ball(600.0), beta, t0)
    R = extent / math.sqrt(cmap.lam * V0)
    grid = RadialGrid.geometric(cmap.N, R, n, r_min)
    return DiscreteProblem(grid, pots, pen, cmap.lam, cmap.eps_c, cmap.transform)


def solve_critical(cmap: CriticalRescaleMap, m: float = 1.0, cfg: SolveConfig | None = None,
                   **kw) -> SolveOutcome:
    """Solve the critical problem from a unit Talenti bubble."""
    prob = critical_problem(cmap, m, **kw)
    b = TalentiBubble(cmap.N, m, 1.0)
    return solve(cfg or SolveConfig(max_iterations=300), prob, lambda r: talenti_eval(b, r))


def critical_profile_fit(outcome: SolveOutcome, cmap: CriticalRescaleMap | None, m: float,
                         window: float = 10.0):
    """``(mu, err)``: Talenti scale matched to the peak height, and the relative L-infinity
    error ``max |v - T_mu| / v(0)`` over ``r <= window / mu``."""
    if not outcome.converged:
        raise ConcentrationError(f"refusing to fit a non-converged solve: {outcome.message}")
    grid = outcome.field.grid
    if not isinstance(grid, RadialGrid):
        raise ConcentrationError("critical profile fit needs a radial solution")
    v = np.asarray(outcome.field.values)
    peak = float(v[0])
    if not peak > 0:
        raise ConcentrationError(f"non-positive peak {peak:g}")
    b = TalentiBubble.from_peak(grid.N, m, peak)
    sel = grid.nodes <= window / b.mu
    err = float(np.max(np.abs(v[sel] - talenti_eval(b, grid.nodes[sel]))) / peak)
    return b.mu, err


def halfwidth_mu(outcome: SolveOutcome) -> float:
    """Talenti scale from the radius where the solution falls to half its peak."""
    grid = outcome.field.grid
    v = np.asarray(outcome.field.values)
    half = 0.5 * v[0]
    k = int(np.argmax(v < half))
    if k == 0:
        raise ConcentrationError("solution never falls below half its peak")
    r0, r1, v0, v1 = grid.nodes[k - 1], grid.nodes[k], v[k - 1], v[k]
    r_half = r0 + (half - v0) * (r1 - r0) / (v1 - v0)
    kexp = 0.5 * (grid.N - 2)
    return float(math.sqrt(2.0 ** (1.0 / kexp) - 1.0) / r_half)
