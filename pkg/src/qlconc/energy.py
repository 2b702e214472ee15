"""Energies of the dual problem on discrete fields.

``P(v) = 1/2 int |grad v|^2 + kappa/2 int V(eps x) |G^{-1}(v)|^2 - 1/p int K(eps x) |G^{-1}(v_+)|^p``
``Q(v) = (int chi v_+^{p/2} - 1)_+^2``,  ``chi = 0`` on ``O/eps`` and ``eps^{-tau}`` outside,
``Gamma = P + Q``.

Integrals of nonlinear terms use the lumped mass of the grid, so the discrete
gradient below is the exact derivative of the discrete energy.  Gradients are
returned in strong form (``M^{-1}`` times the derivative vector), which makes
``<grad, phi>_M`` the directional derivative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .closed_form import dilation_energy, dilation_t0
from .grids import GridField, RadialGrid
from .transform import Transform


class EnergyError(ValueError):
    pass


# -- geometry of the penalization -------------------------------------------------


@dataclass(frozen=True)
class Region:
    """Bounded open set: a ball (``center``, ``radius``) or a box (``lo``, ``hi``)."""

    kind: str = "ball"
    center: tuple = (0.0,)
    radius: float = 1.0
    lo: tuple = ()
    hi: tuple = ()

    @classmethod
    def ball(cls, radius: float, center=(0.0,)):
        if not radius > 0:
            raise EnergyError("region radius must be positive")
        return cls("ball", tuple(float(c) for c in center), float(radius))

    @classmethod
    def box(cls, lo, hi):
        lo, hi = tuple(map(float, lo)), tuple(map(float, hi))
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise EnergyError("box needs lo < hi componentwise")
        return cls("box", lo=lo, hi=hi)

    def _pad(self, vec, d):
        vec = np.asarray(vec, dtype=float)
        out = np.zeros(d)
        out[: min(d, vec.size)] = vec[:d]
        return out

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts.shape[1]
        if self.kind == "ball":
            return np.linalg.norm(pts - self._pad(self.center, d), axis=1) < self.radius
        lo, hi = self._pad(self.lo, d), self._pad(self.hi, d)
        # axes beyond the box dimension are unconstrained
        k = len(self.lo)
        inside = np.all((pts[:, :k] > lo[:k]) & (pts[:, :k] < hi[:k]), axis=1)
        return inside

    def distance_to_complement(self, x) -> float:
        x = np.asarray(x, dtype=float).ravel()
        d = x.size
        if self.kind == "ball":
            return max(self.radius - float(np.linalg.norm(x - self._pad(self.center, d))), 0.0)
        k = len(self.lo)
        gaps = np.concatenate([x[:k] - np.asarray(self.lo), np.asarray(self.hi) - x[:k]])
        return max(float(gaps.min()), 0.0)

    def boundary_samples(self, d: int, n: int = 64) -> np.ndarray:
        """Points on the boundary (used by assumption checks)."""
        if self.kind == "ball":
            c = self._pad(self.center, d)
            if d == 1:
                return np.array([c + self.radius, c - self.radius]).reshape(-1, 1)
            rng = np.random.default_rng(0)
            dirs = rng.standard_normal((n, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            return c + self.radius * dirs
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        k = lo.size
        axes = [np.linspace(a, b, max(3, int(round(n ** (1 / max(k - 1, 1)))))) for a, b in zip(lo, hi)]
        pts = []
        for j in range(k):
            sub = np.meshgrid(*axes, indexing="ij")
            flat = np.stack([s.ravel() for s in sub], axis=1)
            for val in (lo[j], hi[j]):
                q = flat.copy()
                q[:, j] = val
                pts.append(q)
        out = np.unique(np.concatenate(pts), axis=0)
        if d > k:
            out = np.hstack([out, np.zeros((out.shape[0], d - k))])
        return out

    def to_dict(self) -> dict:
        if self.kind == "ball":
            return {"kind": "ball", "center": list(self.center), "radius": self.radius}
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class ConcentrationSet:
    """``M`` described as a point or a sphere ``{|x - center| = radius}``."""

    center: tuple = (0.0,)
    radius: float = 0.0

    def distance(self, x) -> float:
        x = np.asarray(x, dtype=float).ravel()
        c = np.zeros(x.size)
        c[: min(x.size, len(self.center))] = self.center[: x.size]
        return abs(float(np.linalg.norm(x - c)) - self.radius)

    def representative(self, d: int) -> np.ndarray:
        """A point of ``M`` (on the first axis for a sphere)."""
        c = np.zeros(d)
        c[: min(d, len(self.center))] = self.center[:d]
        c[0] += self.radius
        return c

    def samples(self, d: int, n: int = 64) -> np.ndarray:
        if self.radius == 0.0:
            return self.representative(d)[None, :]
        c = np.zeros(d)
        c[: min(d, len(self.center))] = self.center[:d]
        if d == 1:
            return np.array([[c[0] - self.radius], [c[0] + self.radius]])
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        pts = np.zeros((n, d))
        pts[:, 0], pts[:, 1] = np.cos(th), np.sin(th)
        return c + self.radius * pts


def _radial_fn(fn):
    return lambda pts: fn(np.linalg.norm(pts, axis=1))


@dataclass(frozen=True)
class Potentials:
    """``V``, ``K`` as callables on an ``(n, d)`` array of points."""

    V: object
    K: object
    m: float
    K0: float
    V0: float
    concentration_set_M: ConcentrationSet = ConcentrationSet()
    p: float = 4.0
    V_sup: float = float("inf")

    def __post_init__(self):
        if not self.V0 > 0:
            raise EnergyError("assumption (V): V0 must be positive")
        if not (0 < self.m < self.K0):
            raise EnergyError(f"assumption (K): need 0 < m < K0, got m={self.m}, K0={self.K0}")

    @classmethod
    def constant(cls, V0: float = 1.0, m: float = 1.0, p: float = 4.0, K0: float | None = None):
        """Autonomous problem ``V == V0``, ``K == m``."""
        return cls(lambda x: np.full(len(x), float(V0)), lambda x: np.full(len(x), float(m)),
                   m=m, K0=K0 if K0 is not None else 2.0 * m, V0=V0,
                   concentration_set_M=ConcentrationSet(), p=p, V_sup=V0)

    @classmethod
    def radial(cls, V_of_r, K_of_r, m, K0, V0, M: ConcentrationSet, p=4.0, V_sup=float("inf")):
        return cls(_radial_fn(V_of_r), _radial_fn(K_of_r), m, K0, V0, M, p, V_sup)


@dataclass(frozen=True)
class PenalizationConfig:
    tau: float = 1.0
    region_O: Region = Region.ball(1.0)
    beta: float = 0.01
    t0: float = 2.0

    def __post_init__(self):
        if not self.tau > 0:
            raise EnergyError("tau must be positive")
        if not self.beta > 0:
            raise EnergyError("beta must be positive")
        if not self.t0 > 1:
            raise EnergyError("t0 must exceed 1")

    def validate(self, pots: Potentials, grad_norm_sq: float | None = None, N: int | None = None):
        """Check the cut-off radius against ``M`` and (optionally) the ``t0`` energy bound."""
        Ms = pots.concentration_set_M
        d = max(len(Ms.center), 2)
        dist = min(self.region_O.distance_to_complement(x) for x in Ms.samples(d))
        if not self.beta < dist / 100.0:
            raise EnergyError(
                f"beta={self.beta:g} must be below dist(M, complement of O)/100 = {dist / 100:g}")
        if grad_norm_sq is not None:
            if dilation_energy(grad_norm_sq, N, self.t0) >= -2.0:
                raise EnergyError(f"t0={self.t0:g} does not push the dilation energy below -2")
        return True

    @classmethod
    def for_ground_state(cls, grad_norm_sq: float, N: int, region_O: Region, beta: float,
                         tau: float = 1.0):
        return cls(tau, region_O, beta, dilation_t0(grad_norm_sq, N))


@dataclass
class EnergyReport:
    L_m: float
    P_eps: float
    Q_eps: float
    Gamma_eps: float
    pohozaev_residual: float
    gradient_norm: float
    penalty_mass: float = 0.0

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


# -- limit functional -------------------------------------------------------------


def _power_abs_inv(transform: Transform, p: float):
    return lambda v: np.abs(np.asarray(transform.G_inv(v), dtype=float)) ** p


def energy_Lm(v, m: float, p: float, transform: Transform) -> float:
    """``1/2 int |grad v|^2 - m/p int |G^{-1}(v)|^p`` for a GridField or RadialProfile."""
    D = v.dirichlet_energy()
    P = _potential_integral(v, p, transform)
    return 0.5 * D - m / p * P


def _potential_integral(v, p, transform):
    fn = _power_abs_inv(transform, p)
    if isinstance(v, GridField):
        return v.integrate_values(fn)
    # profiles carry their own tail; G^{-1}(v) ~ v in the far field
    return v.integrate_values(fn, tail_power=p)


def pohozaev_residual(v, m: float, p: float, transform: Transform) -> float:
    """``((N-2)/(2N) int |grad v|^2 - m/p int |G^{-1}(v)|^p) / int |grad v|^2``."""
    D = v.dirichlet_energy()
    if D == 0.0:
        return 0.0
    N = v.N
    P = _potential_integral(v, p, transform)
    return float(((N - 2) / (2.0 * N) * D - m / p * P) / D)


# -- penalized functional on a grid -------------------------------------------------


class DiscreteProblem:
    """``Gamma_eps`` on a fixed grid with potentials sampled at ``eps x``."""

    def __init__(self, grid, pots: Potentials, pen: PenalizationConfig, kappa: float,
                 eps: float, transform: Transform):
        if not (kappa >= 0 and eps > 0):
            raise EnergyError("need kappa >= 0 and eps > 0")
        self.grid = grid
        self.pots = pots
        self.pen = pen
        self.kappa = float(kappa)
        self.eps = float(eps)
        self.transform = transform
        self.p = float(pots.p)
        phys = eps * grid.points
        self.V = np.asarray(pots.V(phys), dtype=float)
        self.K = np.asarray(pots.K(phys), dtype=float)
        self.chi = np.where(pen.region_O.contains(phys), 0.0, eps ** (-pen.tau))
        self.mass = grid.mass
        self.free = grid.free
        self._lu = None

    def dilated(self, t: float) -> "DiscreteProblem":
        """Same problem on the radial grid scaled by ``t``."""
        return DiscreteProblem(self.grid.scaled(t), self.pots, self.pen, self.kappa, self.eps,
                               self.transform)

    def _parts(self, v):
        T, p = self.transform, self.p
        vp = np.maximum(v, 0.0)
        D = float(v @ (self.grid.stiffness @ v))
        u = np.asarray(T.G_inv(v), dtype=float)
        up = np.maximum(u, 0.0)
        mass_term = float(np.dot(self.mass * self.V, u * u))
        src_term = float(np.dot(self.mass * self.K, up**p))
        S = float(np.dot(self.mass * self.chi, vp ** (p / 2)))
        return D, mass_term, src_term, S

    def value(self, v) -> float:
        P, Q, _ = self.value_parts(v)
        return P + Q

    def value_parts(self, v):
        D, mt, st, S = self._parts(np.asarray(v, dtype=float))
        P = 0.5 * D + 0.5 * self.kappa * mt - st / self.p
        Q = max(S - 1.0, 0.0) ** 2
        return P, Q, S

    def derivative_vector(self, v) -> np.ndarray:
        """Gradient of the discrete energy with respect to the nodal values."""
        v = np.asarray(v, dtype=float)
        T, p = self.transform, self.p
        vp = np.maximum(v, 0.0)
        S = float(np.dot(self.mass * self.chi, vp ** (p / 2)))
        d = self.grid.stiffness @ v
        d = d + self.mass * (self.kappa * self.V * T.mass_source(v) - self.K * T.source(vp, p))
        if S > 1.0:
            d = d + self.mass * p * (S - 1.0) * self.chi * vp ** (p / 2 - 1)
        d[~self.free] = 0.0
        return d

    def hessian_diagonal(self, v) -> np.ndarray:
        """Second derivative of the local (non-Dirichlet) terms, per unit mass.

        Uses ``d/dv [u/g(u)] = 1/g^4`` and
        ``d/dv [u^{p-1}/g(u)] = ((p-1) u^{p-2} g^2 - 2 zeta u^p) / g^4`` with ``u = G^{-1}(v)``;
        the penalty term is omitted (it vanishes at admissible solutions).
        """
        T, p = self.transform, self.p
        u = np.asarray(T.G_inv(v), dtype=float)
        g2 = 1.0 + 2.0 * T.zeta * u * u
        up = np.maximum(u, 0.0)
        d_mass = 1.0 / (g2 * g2)
        d_src = ((p - 1) * up ** (p - 2) * g2 - 2.0 * T.zeta * up**p) / (g2 * g2)
        return self.kappa * self.V * d_mass - self.K * d_src

    def dilation_function(self, v):
        """``t -> Gamma(v(./t))`` for a radial grid, reusing the nonlinear terms of ``v``.

        On the grid scaled by ``t`` the stiffness is ``t^{N-2} K`` and the mass
        ``t^N M``; only the potentials and ``chi`` are re-sampled at ``eps t x``.
        """
        v = np.asarray(v, dtype=float)
        T, p, N = self.transform, self.p, self.grid.N
        D0 = float(v @ (self.grid.stiffness @ v))
        u = np.asarray(T.G_inv(v), dtype=float)
        a = self.mass * u * u
        b = self.mass * np.maximum(u, 0.0) ** p
        c = self.mass * np.maximum(v, 0.0) ** (p / 2)
        pts = self.eps * self.grid.points
        const_V = np.ptp(self.V) == 0.0
        const_K = np.ptp(self.K) == 0.0

        def f(t):
            q = pts * t
            Vt = self.V if const_V else np.asarray(self.pots.V(q), dtype=float)
            Kt = self.K if const_K else np.asarray(self.pots.K(q), dtype=float)
            chi = np.where(self.pen.region_O.contains(q), 0.0, self.eps ** (-self.pen.tau))
            tN = t**N
            P = 0.5 * t ** (N - 2) * D0 + tN * (0.5 * self.kappa * np.dot(a, Vt) - np.dot(b, Kt) / p)
            return P + max(tN * np.dot(c, chi) - 1.0, 0.0) ** 2

        return f

    def gradient(self, v) -> np.ndarray:
        """Strong-form gradient ``M^{-1} dGamma``; zero on Dirichlet nodes."""
        return self.derivative_vector(v) / self.mass

    def _factor(self):
        if self._lu is None:
            Kff = self.grid.stiffness[self.free][:, self.free].tocsc()
            self._lu = spla.splu(Kff)
        return self._lu

    def solve_stiffness(self, rhs_free: np.ndarray) -> np.ndarray:
        return self._factor().solve(rhs_free)

    def dual_norm(self, deriv: np.ndarray) -> float:
        """``sqrt(r^T K^{-1} r)`` on free nodes: the D^{1,2}-dual norm of the residual."""
        r = deriv[self.free]
        return float(np.sqrt(max(r @ self.solve_stiffness(r), 0.0)))

    def report(self, v) -> EnergyReport:
        v = np.asarray(v, dtype=float)
        field_ = GridField(self.grid, v)
        P, Q, S = self.value_parts(v)
        Lm = energy_Lm(field_, self.pots.m, self.p, self.transform)
        poh = pohozaev_residual(field_, self.pots.m, self.p, self.transform)
        gn = self.dual_norm(self.derivative_vector(v))
        return EnergyReport(Lm, P, Q, P + Q, poh, gn, S)


def _field_values(v):
    return v.values if isinstance(v, GridField) else np.asarray(v, dtype=float)


def energy_Gamma(v: GridField, pots: Potentials, pen: PenalizationConfig, kappa: float,
                 eps: float, transform: Transform) -> EnergyReport:
    return DiscreteProblem(v.grid, pots, pen, kappa, eps, transform).report(v.values)


def gradient_Gamma(v: GridField, pots: Potentials, pen: PenalizationConfig, kappa: float,
                   eps: float, transform: Transform) -> GridField:
    prob = DiscreteProblem(v.grid, pots, pen, kappa, eps, transform)
    return GridField(v.grid, prob.gradient(v.values))


# -- the path W_{eps,t} --------------------------------------------------------------


def smooth_cutoff(s, beta: float):
    """1 for ``s <= beta``, 0 for ``s >= 2 beta``, quintic smoothstep (C^2) in between."""
    s = np.asarray(s, dtype=float)
    x = np.clip((s - beta) / beta, 0.0, 1.0)
    return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x * x)


def _ground_callable(ground):
    if callable(ground) and not isinstance(ground, GridField):
        return ground
    if isinstance(ground, GridField) and isinstance(ground.grid, RadialGrid):
        from scipy.interpolate import PchipInterpolator

        it = PchipInterpolator(ground.grid.nodes, ground.values, extrapolate=False)
        return lambda r: np.nan_to_num(it(r), nan=0.0)
    raise EnergyError("ground state must be a radial profile or a radial GridField")


def build_W(eps: float, t: float, center, pen: PenalizationConfig, ground, grid) -> GridField:
    """``phi(eps x - y) U(|x - y/eps| / t)`` sampled on ``grid``; zero for ``t = 0``."""
    if not eps > 0:
        raise EnergyError("eps must be positive")
    if t < 0 or t > pen.t0 * (1 + 1e-12):
        raise EnergyError(f"t must lie in [0, t0={pen.t0:g}]")
    d = grid.points.shape[1]
    y = np.zeros(d)
    c = np.asarray(center, dtype=float).ravel()
    y[: min(d, c.size)] = c[:d]
    shift = y / eps
    if grid.kind == "radial":
        if np.any(y != 0):
            raise EnergyError("radial grids only support a center at the origin")
    elif np.any(np.abs(shift) > grid.half_width):
        raise EnergyError(f"center/eps = {shift} lies outside the grid box")
    if t == 0:
        return GridField(grid, np.zeros(grid.n))
    U = _ground_callable(ground)
    rel = grid.points - shift
    dist = np.linalg.norm(rel, axis=1)
    vals = smooth_cutoff(eps * dist, pen.beta) * np.asarray(U(dist / t), dtype=float)
    vals[~grid.free] = 0.0
    return GridField(grid, vals)


def _golden_max(f, a: float, b: float, tol: float = 1e-6):
    """Maximize a unimodal ``f`` on ``[a, b]`` by golden-section search."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def path_values(ts, eps, pots, pen, kappa, transform, ground, grid, center=None):
    center = pots.concentration_set_M.representative(grid.points.shape[1]) if center is None else center
    prob = DiscreteProblem(grid, pots, pen, kappa, eps, transform)
    return np.array([prob.value(build_W(eps, t, center, pen, ground, grid).values) for t in ts])


def minimax_path_level(eps, pots, pen, kappa, transform, ground, grid, center=None,
                       n_scan: int = 24, tol: float = 1e-6):
    """``D_eps = max_t Gamma_eps(W_{eps,t})`` over ``t in [0, t0]``; returns ``(D_eps, argmax_t)``.

    A coarse scan locates the peak, golden-section search refines it.
    """
    center = pots.concentration_set_M.representative(grid.points.shape[1]) if center is None else center
    prob = DiscreteProblem(grid, pots, pen, kappa, eps, transform)

    def f(t):
        return prob.value(build_W(eps, t, center, pen, ground, grid).values)

    ts = np.linspace(0.0, pen.t0, n_scan + 1)
    vals = np.array([f(t) for t in ts])
    k = int(np.argmax(vals))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, n_scan)]
    t_star, val = _golden_max(f, lo, hi, tol)
    if vals[k] > val:
        t_star, val = ts[k], vals[k]
    return float(val), float(t_star)
