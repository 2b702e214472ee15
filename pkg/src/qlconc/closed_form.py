"""Exact reference solutions used as oracles.

* the Talenti bubble solving ``-Lap v = m v^{(N+2)/(N-2)}``,
* the fundamental solution ``A(r)`` of ``-Lap``,
* the dilation energy ``L_m(U(./t))`` of a ground state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln


class DomainError(ValueError):
    pass


def sphere_area(N: int) -> float:
    """Surface area ``2 pi^{N/2} / Gamma(N/2)`` of the unit sphere in R^N."""
    if int(N) != N or N < 2:
        raise DomainError(f"sphere_area needs an integer N >= 2, got {N!r}")
    return float(2.0 * np.exp(0.5 * N * np.log(np.pi) - gammaln(0.5 * N)))


def critical_exponent(N: int) -> float:
    return 2.0 * N / (N - 2.0)


@dataclass(frozen=True)
class TalentiBubble:
    """``(N(N-2)/m)^{(N-2)/4} (mu / (1 + mu^2 r^2))^{(N-2)/2}``.

    The prefactor is fixed by requiring ``-Lap v = m v^{(N+2)/(N-2)}``; the
    residual check below confirms it for every ``m``.
    """

    N: int
    m: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if self.N < 3:
            raise DomainError("Talenti bubbles need N >= 3")
        if not (self.m > 0 and self.mu > 0):
            raise DomainError("m and mu must be positive")

    @property
    def k(self) -> float:
        return 0.5 * (self.N - 2)

    @property
    def amplitude_factor(self) -> float:
        return (self.N * (self.N - 2) / self.m) ** (0.5 * self.k)

    @property
    def peak(self) -> float:
        return self.amplitude_factor * self.mu**self.k

    @property
    def decay_constant(self) -> float:
        """``lim r^{N-2} v(r)``."""
        return self.amplitude_factor * self.mu ** (-self.k)

    @classmethod
    def from_peak(cls, N: int, m: float, peak: float) -> "TalentiBubble":
        k = 0.5 * (N - 2)
        amp = (N * (N - 2) / m) ** (0.5 * k)
        return cls(N, m, (peak / amp) ** (1.0 / k))

    def __call__(self, r):
        return talenti_eval(self, r)


def talenti_eval(b: TalentiBubble, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be nonnegative")
    out = b.amplitude_factor * (b.mu / (1.0 + (b.mu * r) ** 2)) ** b.k
    return out if out.ndim else float(out)


def talenti_derivatives(b: TalentiBubble, r):
    """Return ``(v, v', v'/r, v'')`` in closed form (``v'/r`` stays finite at 0)."""
    r = np.asarray(r, dtype=float)
    c, mu, k = b.amplitude_factor, b.mu, b.k
    s = 1.0 + (mu * r) ** 2
    v = c * mu**k * s ** (-k)
    v_over = -2.0 * k * c * mu ** (k + 2) * s ** (-k - 1)  # v'(r)/r
    dv = v_over * r
    d2v = v_over + 4.0 * k * (k + 1) * c * mu ** (k + 4) * r * r * s ** (-k - 2)
    return v, dv, v_over, d2v


def talenti_residual(b: TalentiBubble, r, relative: bool = False):
    """``Lap v + m v^{(N+2)/(N-2)}`` from the analytic derivatives.

    ``Lap v = v'' + (N-1) v'/r`` with ``v'/r`` taken in closed form, so
    ``r = 0`` needs no special case.  With ``relative=True`` the result is
    divided by ``m v(0)^{(N+2)/(N-2)}``, the size of either term at the peak;
    the absolute value carries roundoff proportional to that size.
    """
    v, _, v_over, d2v = talenti_derivatives(b, r)
    q = (b.N + 2.0) / (b.N - 2.0)
    res = d2v + (b.N - 1) * v_over + b.m * v**q
    if relative:
        res = res / (b.m * b.peak**q)
    return res if np.ndim(res) else float(res)


def talenti_residual_of(values_fn, N, m, r, h=None):
    """Residual of an arbitrary radial function by central differences.

    Used to check candidate normalizations without trusting their algebra.
    """
    r = np.asarray(r, dtype=float)
    h = 1e-4 * np.maximum(r, 1e-2) if h is None else h
    vp, v0, vm = values_fn(r + h), values_fn(r), values_fn(r - h)
    d2 = (vp - 2 * v0 + vm) / h**2
    d1 = (vp - vm) / (2 * h)
    return d2 + (N - 1) / r * d1 + m * v0 ** ((N + 2.0) / (N - 2.0))


@dataclass(frozen=True)
class FundamentalSolution:
    N: int

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = 1.0 / ((self.N - 2) * sphere_area(self.N) * r ** (self.N - 2))
        return out if out.ndim else float(out)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return -1.0 / (sphere_area(self.N) * r ** (self.N - 1))

    def second_derivative(self, r):
        r = np.asarray(r, dtype=float)
        return (self.N - 1) / (sphere_area(self.N) * r**self.N)


def dilation_energy(grad_norm_sq: float, N: int, t):
    """``L_m(U(./t)) = (t^{N-2}/2 - t^N (N-2)/(2N)) int |grad U|^2``.

    Valid for any solution ``U`` of the zero-mass dual equation, because the
    Pohozaev identity fixes the potential part in terms of the Dirichlet part.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("dilation parameter t must be positive")
    if grad_norm_sq <= 0:
        raise DomainError("grad_norm_sq must be positive")
    out = (0.5 * t ** (N - 2) - t**N * (N - 2) / (2.0 * N)) * grad_norm_sq
    return out if out.ndim else float(out)


def dilation_t0(grad_norm_sq: float, N: int, level: float = -2.0) -> float:
    """First ``t > 1`` with ``dilation_energy(t) < level`` (decreasing past ``t = 1``)."""
    f = lambda t: dilation_energy(grad_norm_sq, N, t) - level
    hi = 2.0
    while f(hi) >= 0:
        hi *= 2.0
    return float(brentq(f, 1.0, hi, xtol=1e-14, rtol=1e-14)) * (1 + 1e-12)
