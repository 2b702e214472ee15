"""Amplitude shooting for the radial zero-mass dual equation

    v'' + (N-1)/r v' + m |G^{-1}(v)|^{p-2} G^{-1}(v) / g(G^{-1}(v)) = 0,  v'(0) = 0.

The ODE is integrated in the variables ``(u, w) = (G^{-1}(v), v')``.  Since
``v = G(u)`` the pair satisfies ``u' = w / g(u)`` and
``w' = -(N-1)/r w - m |u|^{p-2} u / g(u)``, which is the same equation without
an inner Newton solve per right-hand-side call.

The fast-decay solution is the unique amplitude separating trajectories that
cross zero from trajectories whose ``r^{N-2} v`` grows without bound.  The
separating quantity is the far-field offset ``v + r v' / (N-2)``: it tends to
zero along ``c r^{2-N}`` and has a definite sign on either side.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .closed_form import critical_exponent, sphere_area
from .transform import Transform

log = logging.getLogger(__name__)


class ShootingError(RuntimeError):
    pass


class BracketError(ShootingError):
    def __init__(self, msg, scanned=None):
        super().__init__(msg)
        self.scanned = scanned


class UndecidedError(ShootingError):
    pass


class IntegrationError(ShootingError):
    def __init__(self, msg, last_state=None):
        super().__init__(msg)
        self.last_state = last_state


class Outcome(str, Enum):
    CROSSING = "Crossing"
    SLOW_DECAY = "SlowDecay"
    FAST_DECAY = "FastDecay"


@dataclass(frozen=True)
class ShootConfig:
    N: int
    p: float
    m: float = 1.0
    zeta: float = 1.0
    r_max: float = 1e3
    tol_amplitude: float = 1e-13
    rtol: float = 1e-10
    atol: float = 1e-40
    n_nodes: int = 10_000
    start_fraction: float = 1e-5
    scan_range: tuple = (1e-4, 1e4)
    scan_points: int = 33
    plateau_tol: float = 0.01
    amplitude_hint: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 5:
            raise ValueError(f"N must be an integer >= 5, got {self.N!r}")
        lo, hi = critical_exponent(self.N), 2 * critical_exponent(self.N)
        if not (lo - 1e-12 <= self.p < hi):
            raise ValueError(f"p must lie in [{lo:g}, {hi:g}) for N={self.N}, got {self.p!r}")
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not (self.r_max > 0 and self.tol_amplitude > 0 and self.n_nodes >= 100):
            raise ValueError("r_max, tol_amplitude must be positive and n_nodes >= 100")

    @property
    def transform(self) -> Transform:
        return Transform(self.zeta)

    @property
    def is_critical(self) -> bool:
        return abs(self.p - critical_exponent(self.N)) < 1e-12

    def refined(self, factor: int = 2) -> "ShootConfig":
        """Finer profile grid and tighter integrator (order 8, so rtol / factor^8)."""
        return replace(
            self,
            n_nodes=self.n_nodes * factor,
            rtol=max(self.rtol / factor**8, 1e-13),
            start_fraction=self.start_fraction / factor,
        )


@dataclass
class Trajectory:
    amplitude: float
    N: int
    sol: object
    crossed: bool
    r_end: float
    v_end: float
    w_end: float
    transform: Transform

    @property
    def offset(self) -> float:
        """``v + r v'/(N-2)`` at the stop point; negative means heading to a crossing."""
        return self.v_end + self.r_end * self.w_end / (self.N - 2)


def _source_u(u, p, zeta):
    return np.sign(u) * np.abs(u) ** (p - 1) / np.sqrt(1.0 + 2.0 * zeta * u * u)


def _start(cfg: ShootConfig, a: float):
    T = cfg.transform
    u_a = T.G_inv(a)
    fa = cfg.m * float(_source_u(u_a, cfg.p, cfg.zeta))
    core = np.sqrt(a / fa)
    r0 = cfg.start_fraction * core
    v0 = a - fa * r0**2 / (2 * cfg.N)
    w0 = -fa * r0 / cfg.N
    return r0, fa, float(T.G_inv(v0)), w0


def integrate_radial(cfg: ShootConfig, a: float) -> Trajectory:
    if not (np.isfinite(a) and a > 0):
        raise ValueError("amplitude must be positive")
    N, p, m, zeta = cfg.N, cfg.p, cfg.m, cfg.zeta
    r0, _, u0, w0 = _start(cfg, a)
    if r0 >= cfg.r_max:
        r0 = cfg.r_max * 1e-6

    def rhs(r, y):
        u, w = y
        g = np.sqrt(1.0 + 2.0 * zeta * u * u)
        return [w / g, -(N - 1) / r * w - m * _source_u(u, p, zeta)]

    def hit_zero(r, y):
        return y[0]

    hit_zero.terminal = True
    hit_zero.direction = -1

    sol = solve_ivp(rhs, (r0, cfg.r_max), [u0, w0], method="DOP853",
                    rtol=cfg.rtol, atol=cfg.atol, events=hit_zero, dense_output=True)
    if sol.status == -1:
        raise IntegrationError(f"integration failed at a={a:.17g}: {sol.message}",
                               last_state=(sol.t[-1], *sol.y[:, -1]))
    crossed = sol.status == 1
    r_end = float(sol.t[-1])
    u_end, w_end = sol.y[:, -1]
    v_end = 0.0 if crossed else float(cfg.transform.G(u_end))
    return Trajectory(a, N, sol, crossed, r_end, v_end, float(w_end), cfg.transform)


def classify(traj: Trajectory, plateau_tol: float = 0.01) -> Outcome:
    """Crossing, SlowDecay or FastDecay from the last decade of the trajectory."""
    if traj.crossed:
        return Outcome.CROSSING
    r1 = traj.r_end
    r0 = r1 / 10.0
    if r0 <= traj.sol.t[0]:
        raise UndecidedError("horizon shorter than one decade; increase r_max")
    u0 = traj.sol.sol(r0)[0]
    q0 = r0 ** (traj.N - 2) * float(traj.transform.G(u0))
    q1 = r1 ** (traj.N - 2) * traj.v_end
    change = (q1 - q0) / q1
    if abs(change) < plateau_tol:
        return Outcome.FAST_DECAY
    if change > 0:
        return Outcome.SLOW_DECAY
    raise UndecidedError(
        f"r^(N-2) v falls by {-change:.2%} over the last decade without a crossing "
        f"(a={traj.amplitude:.17g}); increase r_max")


@dataclass
class RadialProfile:
    """Ground-state profile on node 0 plus a geometric grid up to ``r_max``.

    Beyond ``r_max`` the profile is continued by ``decay_c r^{2-N}``.
    """

    N: int
    r: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    decay_c: float

    def __post_init__(self):
        self._spline = CubicHermiteSpline(self.r, self.v, self.dv)

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    @property
    def peak(self) -> float:
        return float(self.v[0])

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        inside = r <= self.r_max
        safe = np.where(inside, r, self.r_max)
        tail = self.decay_c * np.maximum(r, self.r_max) ** (2 - self.N)
        out = np.where(inside, self._spline(safe), tail)
        return out if out.ndim else float(out)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        inside = r <= self.r_max
        safe = np.where(inside, r, self.r_max)
        tail = -(self.N - 2) * self.decay_c * np.maximum(r, self.r_max) ** (1 - self.N)
        out = np.where(inside, self._spline.derivative()(safe), tail)
        return out if out.ndim else float(out)

    def _radial_integral(self, f):
        """``|S^{N-1}| int_0^{r_max} f r^{N-1} dr`` with Simpson in ``log r``."""
        r, S = self.r, sphere_area(self.N)
        body = simpson(f[1:] * r[1:] ** self.N, x=np.log(r[1:]))
        head = f[1] * r[1] ** self.N / self.N
        return S * (body + head)

    def dirichlet_energy(self) -> float:
        """``int |grad v|^2`` including the analytic tail beyond ``r_max``."""
        tail = sphere_area(self.N) * (self.N - 2) * self.decay_c**2 * self.r_max ** (2 - self.N)
        return float(self._radial_integral(self.dv**2) + tail)

    def integrate_values(self, fn, tail_power: float | None = None) -> float:
        """``int fn(v) dx``; ``tail_power`` adds the tail for ``fn(v) ~ v^tail_power``."""
        val = self._radial_integral(np.asarray(fn(self.v), dtype=float))
        if tail_power is not None:
            k = tail_power * (self.N - 2) - self.N
            if k <= 0:
                return np.inf
            fR = float(fn(np.array([self.decay_c * self.r_max ** (2 - self.N)]))[0])
            val += sphere_area(self.N) * fR * self.r_max**self.N / k
        return float(val)

    def tail_plateau_variation(self) -> float:
        """Relative spread of ``r^{N-2} v`` over the last decade of the grid."""
        sel = self.r >= self.r_max / 10.0
        q = self.r[sel] ** (self.N - 2) * self.v[sel]
        return float((q.max() - q.min()) / abs(q[-1]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["r", "v", "v_prime", "r_pow_N_minus_2_v"])
            for ri, vi, di in zip(self.r, self.v, self.dv):
                wr.writerow([f"{ri:.17g}", f"{vi:.17g}", f"{di:.17g}",
                             f"{ri ** (self.N - 2) * vi:.17g}"])


@dataclass
class ShootResult:
    amplitude: float
    profile: RadialProfile
    decay_c: float
    classification_trace: list = field(default_factory=list)
    config: ShootConfig | None = None
    pohozaev_residual: float = float("nan")
    decay_c_derivative: float = float("nan")

    @property
    def transform(self) -> Transform:
        return self.config.transform


def _sample_profile(cfg: ShootConfig, traj: Trajectory) -> RadialProfile:
    T = cfg.transform
    sol = traj.sol
    r_first = sol.t[0]
    r_last = traj.r_end
    rg = np.geomspace(r_first, r_last, cfg.n_nodes - 1)
    u, w = sol.sol(rg)
    u[-1], w[-1] = sol.y[:, -1]
    v = np.asarray(T.G(u), dtype=float)
    r = np.concatenate([[0.0], rg])
    v = np.concatenate([[traj.amplitude], v])
    dv = np.concatenate([[0.0], w])
    N = cfg.N
    c_val = r_last ** (N - 2) * v[-1]
    return RadialProfile(N, r, v, dv, float(c_val))


def _run(cfg, a):
    return integrate_radial(cfg, a)


def _label(traj, cfg):
    try:
        return classify(traj, cfg.plateau_tol)
    except UndecidedError:
        return "Undecided"


def find_ground_state(cfg: ShootConfig) -> ShootResult:
    """Fast-decay positive radial solution by amplitude bracketing.

    Amplitudes are scanned logarithmically; the first adjacent pair whose
    far-field offsets have opposite signs brackets the fast-decay amplitude,
    which is then located by Brent's safeguarded bisection.
    """
    trace = []
    if cfg.is_critical and cfg.zeta == 0.0:
        # scale invariance: every amplitude gives a fast-decay bubble
        a_star = cfg.amplitude_hint
        traj = _run(cfg, a_star)
        trace.append((a_star, _label(traj, cfg)))
    else:
        amps = np.geomspace(*cfg.scan_range, cfg.scan_points)
        offs = []
        for a in amps:
            traj = _run(cfg, a)
            trace.append((float(a), _label(traj, cfg)))
            offs.append(traj.offset)
        offs = np.array(offs)
        sgn = np.sign(offs)
        idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
        if idx.size == 0:
            raise BracketError(
                f"no sign change of the far-field offset over amplitudes "
                f"[{cfg.scan_range[0]:g}, {cfg.scan_range[1]:g}]", scanned=trace)
        i = int(idx[0])
        lo, hi = float(amps[i]), float(amps[i + 1])
        log.debug("bracket [%g, %g] (%s / %s)", lo, hi, trace[i][1], trace[i + 1][1])
        a_star = brentq(lambda a: _run(cfg, a).offset, lo, hi,
                        xtol=cfg.tol_amplitude * lo, rtol=max(cfg.tol_amplitude, 1e-15),
                        maxiter=400)
        traj = _run(cfg, a_star)
        trace.append((float(a_star), _label(traj, cfg)))

    if traj.crossed:
        raise BracketError(f"final amplitude {a_star:.17g} still crosses zero", scanned=trace)
    profile = _sample_profile(cfg, traj)
    plateau = profile.tail_plateau_variation()
    if plateau >= cfg.plateau_tol:
        raise BracketError(
            f"no fast-decay solution: r^(N-2) v varies by {plateau:.3g} over the last decade "
            f"at the bracketed amplitude {a_star:.17g}", scanned=trace)

    N = cfg.N
    c_der = -(profile.r[-1] ** (N - 1)) * profile.dv[-1] / (N - 2)
    res = ShootResult(float(a_star), profile, profile.decay_c, trace, cfg,
                      decay_c_derivative=float(c_der))
    from .energy import pohozaev_residual

    res.pohozaev_residual = pohozaev_residual(profile, cfg.m, cfg.p, cfg.transform)
    if abs(res.pohozaev_residual) > 1e-4:
        raise BracketError(
            f"bracketed amplitude {a_star:.17g} fails the Pohozaev identity "
            f"(residual {res.pohozaev_residual:.3g}); no fast-decay solution", scanned=trace)
    # far field must be in the harmonic regime r^2 m f(v)/v << 1
    j = np.searchsorted(profile.r, profile.r_max / 10)
    vj = profile.v[j]
    far = profile.r[j] ** 2 * cfg.m * float(cfg.transform.source(vj, cfg.p)) / vj
    if far > 0.05:
        log.warning("far field not yet harmonic at r=%g (r^2 f(v)/v = %.3g); increase r_max",
                    profile.r[j], far)
    return res
