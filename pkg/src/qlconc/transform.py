"""Dual change of variables for the quasilinear term.

The substitution ``u = G^{-1}(v)`` with ``G' = g`` and ``g(s) = sqrt(1 + 2 zeta s^2)``
turns the quasilinear operator into a plain Laplacian.  ``zeta = 1`` is the
standard transform, ``zeta = 0`` the identity.

All functions accept scalars or numpy arrays.  Oddness is exact: every
routine works on ``|t|`` and re-applies the sign.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Transform", "TransformDomainError", "asinh_accurate", "IDENTITY", "STANDARD"]

_NEWTON_MAX_ITER = 100


class TransformDomainError(ValueError):
    """Raised on non-finite input."""


def _check_finite(x):
    a = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(a)):
        raise TransformDomainError("transform argument must be finite")
    return a


def asinh_accurate(x):
    """asinh via log1p; keeps full relative accuracy for small |x|."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    # x^2 / (1 + sqrt(1 + x^2)) is sqrt(1 + x^2) - 1 without cancellation
    big = ax > 1e150
    safe = np.where(big, 1.0, ax)
    small_branch = np.log1p(safe + safe * safe / (1.0 + np.sqrt(1.0 + safe * safe)))
    out = np.where(big, np.log(2.0) + np.log(np.where(big, ax, 1.0)), small_branch)
    return np.copysign(out, x)


def _unwrap(a, like):
    if np.ndim(like) == 0 and not isinstance(like, np.ndarray):
        return float(a)
    return a


@dataclass(frozen=True)
class Transform:
    """The family ``g_zeta(s) = sqrt(1 + 2 zeta s^2)``, ``G_zeta = int_0 g_zeta``."""

    zeta: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.zeta) or self.zeta < 0:
            raise TransformDomainError(f"zeta must be finite and >= 0, got {self.zeta!r}")

    @property
    def is_identity(self) -> bool:
        return self.zeta == 0.0

    @property
    def sqrt_growth(self) -> float:
        """Constant ``c`` with ``|G^{-1}(v)| <= c sqrt|v|`` (``2^{1/4}`` when zeta=1)."""
        if self.is_identity:
            return np.inf
        return (2.0 / self.zeta) ** 0.25

    def g(self, t):
        a = _check_finite(t)
        return _unwrap(np.sqrt(1.0 + 2.0 * self.zeta * a * a), t)

    def dg(self, t):
        """Derivative ``g'(t) = 2 zeta t / g(t)``."""
        a = _check_finite(t)
        return _unwrap(2.0 * self.zeta * a / np.sqrt(1.0 + 2.0 * self.zeta * a * a), t)

    def G(self, t):
        a = _check_finite(t)
        return _unwrap(self._G_abs(np.abs(a)) * np.sign(a), t)

    def _G_abs(self, s):
        if self.is_identity:
            return s.copy()
        c = np.sqrt(2.0 * self.zeta)
        return 0.5 * s * np.sqrt(1.0 + c * c * s * s) + asinh_accurate(c * s) / (2.0 * c)

    def G_inv(self, v):
        """Inverse of ``G`` by monotone Newton iteration.

        Started from ``min(|v|, c sqrt|v|)``, which dominates the root, Newton on
        the convex increasing ``G`` decreases monotonically to it, so no
        bracketing fallback is needed.
        """
        a = _check_finite(v)
        if self.is_identity:
            return _unwrap(a.copy(), v)
        av = np.abs(a)
        t = np.minimum(av, self.sqrt_growth * np.sqrt(av))
        c2 = 2.0 * self.zeta
        for _ in range(_NEWTON_MAX_ITER):
            step = (self._G_abs(t) - av) / np.sqrt(1.0 + c2 * t * t)
            t_new = np.maximum(t - step, 0.0)
            done = np.all(np.abs(t_new - t) <= 4e-16 * np.maximum(t_new, 1e-300))
            t = t_new
            if done:
                break
        # G(t) >= t, so the root never exceeds |v|; the clamp only bites on subnormals
        t = np.minimum(t, av)
        return _unwrap(np.copysign(t, a), v)

    # -- derived nonlinearities used by the energies -------------------------

    def source(self, v, p):
        """``|u|^{p-2} u / g(u)`` with ``u = G^{-1}(v)``: derivative of ``|G^{-1}(v)|^p / p``."""
        u = np.asarray(self.G_inv(v), dtype=float)
        return np.sign(u) * np.abs(u) ** (p - 1) / np.sqrt(1.0 + 2.0 * self.zeta * u * u)

    def mass_source(self, v):
        """``u / g(u)``: derivative of ``|G^{-1}(v)|^2 / 2``."""
        u = np.asarray(self.G_inv(v), dtype=float)
        return u / np.sqrt(1.0 + 2.0 * self.zeta * u * u)


STANDARD = Transform(1.0)
IDENTITY = Transform(0.0)
