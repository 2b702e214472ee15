"""Grids, quadrature and difference operators.

Radial grids use a vertex-centred finite-volume scheme: node ``i`` owns the
shell between the face midpoints, the mass matrix is the diagonal of shell
volumes and the stiffness matrix carries the face fluxes
``|S^{N-1}| r_f^{N-1} / h``.  With these choices

* the discrete Dirichlet energy is ``v^T K v`` and ``<-Lap v, v>_M`` equals it
  exactly for fields vanishing on the outer node,
* the Laplacian of ``r^2`` is ``2N`` on every node of every grid,
* the shell volumes integrate constants exactly.

Tensor grids (N = 2, 3) use the usual 5/7-point stencil on a uniform box with
homogeneous Dirichlet data on the boundary nodes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .closed_form import sphere_area


class GridError(ValueError):
    pass


MAX_TENSOR_3D = 64


class RadialGrid:
    """Nodes ``0 = r_0 < r_1 < ... < r_{n-1}`` in dimension ``N``; Dirichlet at ``r_{n-1}``."""

    kind = "radial"

    def __init__(self, nodes, N: int):
        r = np.asarray(nodes, dtype=float)
        if r.ndim != 1 or r.size < 3:
            raise GridError("radial grid needs at least 3 nodes")
        if r[0] != 0.0:
            raise GridError("radial grid must contain the origin as node 0")
        if np.any(np.diff(r) <= 0):
            raise GridError("radial nodes must be strictly increasing")
        if int(N) != N or N < 2:
            raise GridError(f"dimension must be an integer >= 2, got {N!r}")
        self.nodes = r
        self.N = int(N)
        self.nodes.setflags(write=False)

    @classmethod
    def geometric(cls, N: int, r_max: float, n: int, r_min: float | None = None):
        """Node 0 plus ``n - 1`` geometrically spaced nodes in ``[r_min, r_max]``."""
        if r_min is None:
            r_min = r_max * 1e-6
        if not 0 < r_min < r_max:
            raise GridError("need 0 < r_min < r_max")
        return cls(np.concatenate([[0.0], np.geomspace(r_min, r_max, n - 1)]), N)

    @classmethod
    def uniform(cls, N: int, r_max: float, n: int):
        return cls(np.linspace(0.0, r_max, n), N)

    def scaled(self, t: float) -> "RadialGrid":
        """The same grid with every node multiplied by ``t``."""
        if not t > 0:
            raise GridError("scale factor must be positive")
        return RadialGrid(self.nodes * t, self.N)

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    @cached_property
    def faces(self) -> np.ndarray:
        r = self.nodes
        return np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1]]])

    @cached_property
    def mass(self) -> np.ndarray:
        f = self.faces
        return sphere_area(self.N) * (f[1:] ** self.N - f[:-1] ** self.N) / self.N

    @cached_property
    def face_flux(self) -> np.ndarray:
        r = self.nodes
        return sphere_area(self.N) * self.faces[1:-1] ** (self.N - 1) / np.diff(r)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        k = self.face_flux
        diag = np.zeros(self.n)
        diag[:-1] += k
        diag[1:] += k
        return sp.diags([-k, diag, -k], [-1, 0, 1], format="csr")

    @cached_property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[-1] = False
        return mask

    @cached_property
    def points(self) -> np.ndarray:
        """Cartesian representatives ``(r, 0, ..., 0)``."""
        pts = np.zeros((self.n, self.N))
        pts[:, 0] = self.nodes
        return pts

    @property
    def radius(self) -> np.ndarray:
        return self.nodes

    @property
    def quad_weights(self) -> np.ndarray:
        """Positive shell volumes (the lumped mass); exact for constants."""
        return self.mass

    @cached_property
    def high_order_weights(self) -> np.ndarray:
        """Product-quadratic weights: exact for ``f`` quadratic on each panel.

        Not sign-definite on strongly graded grids; only used by ``integrate``.
        """
        r = self.nodes
        N = self.N
        S = sphere_area(N)
        w = np.zeros(self.n)
        xg, wg = np.polynomial.legendre.leggauss(N // 2 + 3)
        n_int = self.n - 1
        last = n_int - (n_int % 2)

        def panel(i0, lo, hi):
            a, b, c = r[i0], r[i0 + 1], r[i0 + 2]
            x = 0.5 * (hi - lo)[:, None] * xg[None, :] + 0.5 * (hi + lo)[:, None]
            jac = 0.5 * (hi - lo)[:, None] * wg[None, :] * S * x ** (N - 1)
            a, b, c = a[:, None], b[:, None], c[:, None]
            la = (x - b) * (x - c) / ((a - b) * (a - c))
            lb = (x - a) * (x - c) / ((b - a) * (b - c))
            lc = (x - a) * (x - b) / ((c - a) * (c - b))
            np.add.at(w, i0, (la * jac).sum(1))
            np.add.at(w, i0 + 1, (lb * jac).sum(1))
            np.add.at(w, i0 + 2, (lc * jac).sum(1))

        i0 = np.arange(0, last, 2)
        panel(i0, r[i0], r[i0 + 2])
        if last < n_int:
            j = np.array([n_int - 2])
            panel(j, r[j + 1], r[j + 2])
        return w

    def integrate(self, values) -> float:
        """High-order ``int f dx`` over the ball of radius ``r_max``."""
        return float(np.dot(self.high_order_weights, np.asarray(values, dtype=float)))

    def metadata(self) -> dict:
        return {"kind": "radial", "N": self.N, "n": self.n,
                "r_min": float(self.nodes[1]), "r_max": self.r_max}


class TensorGrid:
    """Uniform grid on ``[-L, L]^d`` (``d`` = 2 or 3) with ``n`` intervals per axis."""

    kind = "tensor"

    def __init__(self, half_width: float, n: int, dim: int = 2):
        if dim >= 4:
            raise GridError("full tensor grids are limited to N <= 3; use the radial grid for N >= 4")
        if dim < 2:
            raise GridError("tensor grids need dimension 2 or 3")
        if dim == 3 and n + 1 > MAX_TENSOR_3D:
            raise GridError(f"3D tensor grids are capped at {MAX_TENSOR_3D}^3 nodes")
        if n < 4 or not half_width > 0:
            raise GridError("need at least 4 intervals and a positive half width")
        self.dim = dim
        self.N = dim
        self.half_width = float(half_width)
        self.n_int = int(n)
        self.h = 2.0 * self.half_width / n
        self.axis = np.linspace(-self.half_width, self.half_width, n + 1)
        self.shape = (n + 1,) * dim

    @property
    def n(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    @cached_property
    def free(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(self.dim, -1)
        return np.all((idx > 0) & (idx < self.n_int), axis=0)

    @cached_property
    def mass(self) -> np.ndarray:
        return np.full(self.n, self.h**self.dim)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        m = self.n_int + 1
        e = np.ones(m)
        d1 = sp.diags([-e[:-1], np.r_[1.0, 2 * e[1:-1], 1.0], -e[:-1]], [-1, 0, 1])
        eye = sp.identity(m)
        mats = []
        for k in range(self.dim):
            ops = [eye] * self.dim
            ops[k] = d1
            term = ops[0]
            for o in ops[1:]:
                term = sp.kron(term, o)
            mats.append(term)
        return (sum(mats) * self.h ** (self.dim - 2)).tocsr()

    def integrate(self, values) -> float:
        return float(np.dot(self.mass, np.asarray(values, dtype=float)))

    def metadata(self) -> dict:
        return {"kind": "tensor", "N": self.dim, "half_width": self.half_width,
                "intervals": self.n_int, "h": self.h}


def TensorGrid2D(half_width: float, n: int) -> TensorGrid:
    return TensorGrid(half_width, n, 2)


def TensorGrid3D(half_width: float, n: int) -> TensorGrid:
    return TensorGrid(half_width, n, 3)


@dataclass(frozen=True)
class GridField:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise GridError(f"field has {v.shape} values, grid has {self.grid.n} nodes")
        if not np.all(np.isfinite(v)):
            raise GridError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.grid.N

    def with_values(self, values) -> "GridField":
        return GridField(self.grid, values)

    def dirichlet_energy(self) -> float:
        v = self.values
        return float(v @ (self.grid.stiffness @ v))

    def integrate_values(self, fn) -> float:
        """``int fn(v) dx`` with the lumped mass (consistent with the energies)."""
        return float(np.dot(self.grid.mass, fn(self.values)))

    def norm_l2(self) -> float:
        return float(np.sqrt(np.dot(self.grid.mass, self.values**2)))

    def norm_lp(self, p: float) -> float:
        return float(np.dot(self.grid.mass, np.abs(self.values) ** p) ** (1.0 / p))

    def norm_d12(self) -> float:
        return float(np.sqrt(max(self.dirichlet_energy(), 0.0)))

    def to_csv(self, path) -> None:
        pts = self.grid.points if self.grid.kind == "tensor" else self.grid.nodes[:, None]
        names = ["r"] if self.grid.kind == "radial" else [f"x{k + 1}" for k in range(pts.shape[1])]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(names + ["value"])
            for row, val in zip(pts, self.values):
                wr.writerow([f"{x:.17g}" for x in row] + [f"{val:.17g}"])


def norm_l2(f: GridField) -> float:
    return f.norm_l2()


def norm_lp(f: GridField, p: float) -> float:
    return f.norm_lp(p)


def norm_d12(f: GridField) -> float:
    return f.norm_d12()


def dirichlet_energy(f: GridField) -> float:
    return f.dirichlet_energy()


def laplacian(field: GridField, grid=None) -> GridField:
    """Discrete Laplacian ``-M^{-1} K v`` on free nodes; 0 on Dirichlet nodes."""
    if grid is not None and grid is not field.grid:
        raise GridError("field is not defined on the requested grid")
    g = field.grid
    out = -(g.stiffness @ field.values) / g.mass
    out[~g.free] = 0.0
    return GridField(g, out)


def sample(grid, fn) -> GridField:
    """Field from a function of the radius (radial grids) or of the points (tensor grids)."""
    if grid.kind == "radial":
        vals = fn(grid.nodes)
    else:
        vals = fn(grid.points)
    vals = np.array(vals, dtype=float)
    vals[~grid.free] = 0.0
    return GridField(grid, vals)
