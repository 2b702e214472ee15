"""Critical points of the penalized energy by peak-selection descent.

The wanted critical point is a mountain-pass point, so plain descent from the
initializer would slide to 0 or run off to -inf.  Each iterate is therefore
kept at the maximum of the energy along a one-parameter family through it
(local minimax):

* ``dilation``: ``v -> v(./t)``.  On a radial grid this is exact: the same
  nodal values on the grid scaled by ``t``.  Used for radial problems, where
  the ray family does not always have an interior maximum because
  ``|G^{-1}(s v)|^p`` only grows like ``s^{p/2}``.
* ``ray``: ``v -> s v``.  Used on tensor grids in 2D where dilations leave
  the Dirichlet energy unchanged.

Each iteration first tries a Newton step with the Jacobian
``K + diag(M h)`` (``h`` the local Hessian diagonal); it is kept when the peak
value does not rise and the residual at least halves.  Otherwise the iterate
takes a preconditioned gradient step with Armijo backtracking on the peak
value.  Negative values are clipped after every step.  Linear solves use
symmetric diagonal scaling because node weights on graded radial grids span
many decades.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import minimize_scalar

from .energy import DiscreteProblem, EnergyReport, build_W
from .grids import GridField, RadialGrid

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class PenalizationActive(SolverError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    max_iterations: int = 400
    gradient_tolerance: float = 1e-7
    relative_tolerance: bool = True
    armijo_c1: float = 1e-4
    initial_step: float = 1.0
    max_step: float = 4.0
    backtrack: float = 0.5
    min_step: float = 1e-10
    init_t: float = 1.0
    init_center: tuple | None = None
    peak_selection: str = "auto"
    newton: bool = True

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.peak_selection not in ("auto", "dilation", "ray", "none"):
            raise ValueError("peak_selection must be auto, dilation, ray or none")


@dataclass
class SolveOutcome:
    field: GridField
    report: EnergyReport
    iterations: int
    converged: bool
    distance_to_X: float
    scale: float = 1.0
    trace: list = field(default_factory=list)
    message: str = ""
    eps: float = float("nan")
    kappa: float = float("nan")
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        return {"converged": self.converged, "iterations": self.iterations,
                "distance_to_X": self.distance_to_X, "scale": self.scale,
                "eps": self.eps, "kappa": self.kappa, "message": self.message,
                "report": self.report.to_dict(), "elapsed_s": self.elapsed}


class _Preconditioner:
    """``(K + kappa V_ref M)^{-1}`` on free nodes; radial grids rebuild it per dilation."""

    def __init__(self, base: DiscreteProblem):
        self.base = base
        self.free = base.free
        self.shift = base.kappa * float(np.min(base.V)) if base.kappa > 0 else 0.0
        self.radial = isinstance(base.grid, RadialGrid)
        if not self.radial:
            import scipy.sparse as sp
            import scipy.sparse.linalg as spla

            A = base.grid.stiffness + sp.diags(self.shift * base.mass)
            self._lu = spla.splu(A[self.free][:, self.free].tocsc())

    def apply(self, prob: DiscreteProblem, d: np.ndarray) -> np.ndarray:
        out = np.zeros_like(d)
        rhs = d[self.free]
        if self.radial:
            g = prob.grid
            k = g.face_flux
            diag = np.zeros(g.n)
            diag[:-1] += k
            diag[1:] += k
            diag += self.shift * g.mass
            f = self.free
            n = int(f.sum())
            # symmetric diagonal scaling: node weights span many decades on graded grids
            sc = 1.0 / np.sqrt(diag[f])
            off = -k[: n - 1] * sc[:-1] * sc[1:]
            ab = np.zeros((3, n))
            ab[0, 1:] = off
            ab[1] = 1.0
            ab[2, :-1] = off
            out[f] = sc * solve_banded((1, 1), ab, sc * rhs)
        else:
            out[self.free] = self._lu.solve(rhs)
        return out


class _State:
    def __init__(self, base: DiscreteProblem, mode: str):
        self.base = base
        self.mode = mode
        self._cache = {}

    def problem(self, s: float) -> DiscreteProblem:
        if self.mode != "dilation" or s == 1.0:
            return self.base
        key = float(s)
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = self.base.dilated(s)
        return self._cache[key]

    def peak(self, s: float, v: np.ndarray):
        """Return ``(s', v', value)`` at the maximum along the selection family."""
        if self.mode == "none" or not np.any(v > 0):
            return s, v, self.problem(s).value(v)
        if self.mode == "dilation":
            fn = self.problem(s).dilation_function(v)
            lt = _bounded_peak(lambda x: -fn(np.exp(x)))
            return s * float(np.exp(lt)), v, fn(float(np.exp(lt)))
        prob = self.problem(s)
        ls = _bounded_peak(lambda x: -prob.value(np.exp(x) * v))
        v_new = np.exp(ls) * v
        return s, v_new, prob.value(v_new)


def _bounded_peak(f, width: float = 1.0, tries: int = 6) -> float:
    """Minimize ``f`` in log-parameter, widening the bracket until the minimum is interior."""
    lo, hi = -width, width
    for _ in range(tries):
        res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10, "maxiter": 200})
        x = float(res.x)
        if hi - x > 1e-3 * (hi - lo) and x - lo > 1e-3 * (hi - lo):
            return x
        span = hi - lo
        lo, hi = x - span, x + span
    raise SolverError("no interior maximum along the peak-selection family")


def _newton_direction(prob: DiscreteProblem, v: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Solve ``(K + M h) delta = d`` on free nodes with the local Hessian diagonal ``h``."""
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    f = prob.free
    J = prob.grid.stiffness + sp.diags(prob.mass * prob.hessian_diagonal(v))
    Jf = J[f][:, f]
    sc = 1.0 / np.sqrt(np.maximum(np.abs(Jf.diagonal()), 1e-300))
    S = sp.diags(sc)
    out = np.zeros_like(d)
    out[f] = sc * spla.spsolve((S @ Jf @ S).tocsc(), sc * d[f])
    if not np.all(np.isfinite(out)):
        raise SolverError("singular Jacobian")
    return out


def _resolve_mode(cfg: SolveConfig, prob: DiscreteProblem) -> str:
    if cfg.peak_selection != "auto":
        return cfg.peak_selection
    if isinstance(prob.grid, RadialGrid) and prob.grid.N >= 3:
        return "dilation"
    return "ray"


def initial_field(cfg: SolveConfig, prob: DiscreteProblem, ground) -> np.ndarray:
    d = prob.grid.points.shape[1]
    center = cfg.init_center
    if center is None:
        center = prob.pots.concentration_set_M.representative(d)
    return build_W(prob.eps, cfg.init_t, center, prob.pen, ground, prob.grid).values


def distance_to_X(values: np.ndarray, grid, prob: DiscreteProblem, ground, n_samples: int = 16):
    """``min_y ||v - U_eps^y||_{D^{1,2}}`` over sampled centers ``y`` in ``M``."""
    if ground is None:
        return float("nan")
    d = grid.points.shape[1]
    Ms = prob.pots.concentration_set_M
    centers = Ms.samples(d, n_samples) if grid.kind != "radial" else Ms.representative(d)[None, :]
    best = np.inf
    for y in centers:
        try:
            W = build_W(prob.eps, 1.0, y, prob.pen, ground, grid).values
        except Exception:
            continue
        diff = values - W
        best = min(best, float(np.sqrt(max(diff @ (grid.stiffness @ diff), 0.0))))
    return best


def solve(cfg: SolveConfig, problem: DiscreteProblem, ground=None, init=None) -> SolveOutcome:
    """Peak-selection descent from ``W_{eps, init_t}`` centred in ``M`` (or from ``init``).

    ``init`` may be an array of nodal values or a pair ``(scale, values)``.
    Converged means the D^{1,2}-dual norm of the discrete Euler-Lagrange
    residual is below the tolerance (relative to ``||v||_{D^{1,2}}`` when
    ``relative_tolerance``).
    """
    t_start = time.perf_counter()
    mode = _resolve_mode(cfg, problem)
    st = _State(problem, mode)
    pre = _Preconditioner(problem)
    s = 1.0
    if init is None:
        if ground is None:
            raise SolverError("need a ground state profile or an explicit initial field")
        v = initial_field(cfg, problem, ground).copy()
    elif isinstance(init, tuple):
        s, v = float(init[0]), np.asarray(init[1], dtype=float).copy()
    else:
        v = np.asarray(init, dtype=float).copy()
    v[~problem.free] = 0.0
    v = np.maximum(v, 0.0)

    trace = []
    s, v, J = st.peak(s, v)
    step = cfg.initial_step
    converged = False
    msg = ""
    it = 0
    prob = st.problem(s)
    d = prob.derivative_vector(v)
    gnorm = prob.dual_norm(d)
    for it in range(cfg.max_iterations + 1):
        vnorm = float(np.sqrt(max(v @ (prob.grid.stiffness @ v), 0.0)))
        tol = cfg.gradient_tolerance * (vnorm if cfg.relative_tolerance and vnorm > 0 else 1.0)
        trace.append((it, J, gnorm, step))
        if gnorm <= tol:
            converged = True
            break
        if it == cfg.max_iterations:
            msg = f"no convergence in {cfg.max_iterations} iterations (gradient norm {gnorm:.3g})"
            break
        accepted = False
        # Newton candidate, kept only if the peak value does not rise and the residual drops
        if cfg.newton:
            try:
                w = np.maximum(v - _newton_direction(prob, v, d), 0.0)
                w[~problem.free] = 0.0
                s_n, w_n, J_n = st.peak(s, w)
                if J_n <= J + 1e-13 * abs(J):
                    p_n = st.problem(s_n)
                    d_n = p_n.derivative_vector(w_n)
                    g_n = p_n.dual_norm(d_n)
                    if g_n < 0.5 * gnorm:
                        s, v, J, prob, d, gnorm = s_n, w_n, J_n, p_n, d_n, g_n
                        accepted = True
            except SolverError:
                pass
        if accepted:
            continue
        delta = pre.apply(prob, d)
        slope = float(np.dot(d, delta))
        while step >= cfg.min_step:
            w = np.maximum(v - step * delta, 0.0)
            w[~problem.free] = 0.0
            try:
                s_new, w_new, J_new = st.peak(s, w)
            except SolverError:
                step *= cfg.backtrack
                continue
            if J_new <= J - cfg.armijo_c1 * step * slope:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            msg = f"line search failed at iteration {it} (gradient norm {gnorm:.3g})"
            break
        s, v, J = s_new, w_new, J_new
        prob = st.problem(s)
        d = prob.derivative_vector(v)
        gnorm = prob.dual_norm(d)
        step = min(step * 2.0, cfg.max_step)

    prob = st.problem(s)
    grid = prob.grid
    rep = prob.report(v)
    out = SolveOutcome(GridField(grid, v), rep, it, converged,
                       distance_to_X(v, grid, prob, ground), s, trace, msg,
                       problem.eps, problem.kappa, time.perf_counter() - t_start)
    if converged and rep.Q_eps > 0:
        raise PenalizationActive(
            f"Q_eps = {rep.Q_eps:.3g} > 0 at convergence (eps={problem.eps:g}); "
            f"eps is not small enough or tau/beta are misconfigured")
    return out


@dataclass
class SweepPoint:
    problem: DiscreteProblem
    ground: object = None


class SweepAbort(SolverError):
    pass


def _same_base_grid(g, prev_grid, prev_scale: float) -> bool:
    """True when ``prev_grid`` is ``g`` (radial: up to the dilation ``prev_scale``)."""
    if g.kind != prev_grid.kind or g.n != prev_grid.n:
        return False
    if isinstance(g, RadialGrid):
        return bool(np.allclose(prev_grid.nodes / prev_scale, g.nodes, rtol=1e-12, atol=0.0))
    return g.half_width == prev_grid.half_width and g.n_int == prev_grid.n_int


def continuation_sweep(points, cfg: SolveConfig, warm_start: bool = True):
    """Solve along a strictly decreasing ``eps`` sequence.

    Each point after the first is warm-started from the previous solution when
    both use the same base grid.  Failures after the first point are
    recorded in the outcome (``converged=False``) and the sweep continues.
    """
    eps = [pt.problem.eps for pt in points]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps must be strictly decreasing along a sweep")
    outs = []
    prev = None
    for i, pt in enumerate(points):
        init = None
        if warm_start and prev is not None and prev.converged:
            if _same_base_grid(pt.problem.grid, prev.field.grid, prev.scale):
                init = (prev.scale, prev.field.values) if isinstance(pt.problem.grid, RadialGrid) \
                    else prev.field.values
        try:
            out = solve(cfg, pt.problem, pt.ground, init=init)
            if init is not None and not out.converged:
                out = solve(cfg, pt.problem, pt.ground)
        except Exception as exc:  # noqa: BLE001 - recorded per point
            if i == 0:
                raise SweepAbort(f"first sweep point failed: {exc}") from exc
            log.warning("sweep point eps=%g failed: %s", pt.problem.eps, exc)
            z = GridField(pt.problem.grid, np.zeros(pt.problem.grid.n))
            out = SolveOutcome(z, EnergyReport(*(float("nan"),) * 6), 0, False, float("nan"),
                               message=f"{type(exc).__name__}: {exc}", eps=pt.problem.eps,
                               kappa=pt.problem.kappa)
        if i == 0 and not out.converged:
            raise SweepAbort(f"first sweep point did not converge: {out.message}")
        outs.append(out)
        prev = out
    return outs
