"""Mapped radial grids, quadrature rules and finite-volume radial operators.

Every field in the package is stored as radial profiles over a `RadialGrid`:
nodes r_0 = 0 < r_1 < ... < r_M obtained from a uniform grid in a computational
coordinate zeta through a smooth stretching map.  Two maps are provided:

* ``tan``:  r = L tan(pi zeta / 2), algebraic far-field resolution (inner variable y)
* ``sinh``: r = r_max sinh(c zeta) / sinh(c), roughly log-uniform nodes down to
  ~ r_max e^{-c} (outer variable x, where the bubble scale shrinks to ~1e-16)

A grid carries two sets of weights for integrals over the ball (or R^5) of
5-dimensional radial functions:

* ``weights``: composite Boole rule in zeta (sixth order) -- used for projections
  and diagnostics;
* ``cv``: exact volumes of the finite-volume cells [r_{j-1/2}, r_{j+1/2}] -- the
  inner product in which the finite-volume operator is symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

SPHERE_AREA = 8.0 * np.pi**2 / 3.0  # |S^4|
DIM = 5

# angular measure of mode m relative to |S^4|: int (omega_i)^2 dsigma = |S^4| / 5
MODE_MEASURE = {0: 1.0, 1: 1.0 / DIM}


def _boole_pattern(M: int) -> np.ndarray:
    if M % 4 == 0 and M > 0:
        c = np.zeros(M + 1)
        for k in range(0, M, 4):
            c[k : k + 5] += np.array([7.0, 32.0, 12.0, 32.0, 7.0]) * (2.0 / 45.0)
        return c
    if M % 2 == 0 and M > 0:
        c = np.zeros(M + 1)
        for k in range(0, M, 2):
            c[k : k + 3] += np.array([1.0, 4.0, 1.0]) / 3.0
        return c
    raise ValueError(f"grid needs an even number of intervals, got M={M}")


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Radial nodes with quadrature weights and finite-volume cells."""

    zeta: np.ndarray
    nodes: np.ndarray
    faces: np.ndarray
    weights: np.ndarray
    cv: np.ndarray
    map_kind: str
    map_param: float
    r_max: float

    @property
    def M(self) -> int:
        return len(self.nodes) - 1

    @property
    def h(self) -> float:
        return float(self.zeta[1] - self.zeta[0])

    def map(self, zeta):
        zeta = np.asarray(zeta, dtype=float)
        if self.map_kind == "tan":
            return self.map_param * np.tan(0.5 * np.pi * zeta)
        c = self.map_param
        return self.r_max * np.sinh(c * zeta) / np.sinh(c)

    def zeta_of(self, r):
        r = np.asarray(r, dtype=float)
        if self.map_kind == "tan":
            return 2.0 / np.pi * np.arctan(r / self.map_param)
        c = self.map_param
        return np.arcsinh(r / self.r_max * np.sinh(c)) / c

    def quad_weights(self, mode: int = 0) -> np.ndarray:
        return self.weights * MODE_MEASURE[mode]

    def integrate(self, values, mode: int = 0):
        """Integral over the grid domain of a mode profile (last axis = nodes)."""
        values = np.asarray(values, dtype=float)
        w = self.quad_weights(mode)
        if not np.isfinite(self.nodes[-1]):
            values = values[..., :-1]
            w = w[:-1]
        return values @ w

    def integrate_cv(self, values, mode: int = 0):
        return np.asarray(values, dtype=float) @ (self.cv * MODE_MEASURE[mode])

    def spline(self, values) -> CubicSpline:
        """Cubic spline in the computational coordinate along the last axis."""
        return CubicSpline(self.zeta, np.asarray(values, dtype=float), axis=-1)

    def interpolate(self, values, r):
        """Evaluate node values at radii r (clipped to the grid)."""
        z = np.clip(self.zeta_of(r), self.zeta[0], self.zeta[-1])
        return self.spline(values)(z)

    @cached_property
    def dzeta_dr(self) -> np.ndarray:
        z = self.zeta
        if self.map_kind == "tan":
            L = self.map_param
            return 2.0 / (np.pi * L) / (1.0 + (self.nodes / L) ** 2)
        c = self.map_param
        return np.sinh(c) / (self.r_max * c * np.cosh(c * z))

    def derivative(self, values) -> np.ndarray:
        """d/dr of node values through the zeta-spline (last axis = nodes)."""
        d = self.spline(values).derivative()(self.zeta)
        return d * self.dzeta_dr

    def restrict(self, r_cut: float) -> np.ndarray:
        return self.nodes <= r_cut


def _build(zeta: np.ndarray, map_kind: str, map_param: float, r_max: float) -> RadialGrid:
    M = len(zeta) - 1
    proto = RadialGrid(zeta, zeta, zeta, zeta, zeta, map_kind, map_param, r_max)
    r = proto.map(zeta)
    r[0] = 0.0
    if np.isfinite(r_max):
        r[-1] = r_max
    h = zeta[1] - zeta[0]
    faces = proto.map(0.5 * (zeta[1:] + zeta[:-1]))

    if map_kind == "tan":
        L = map_param
        drdz = 0.5 * np.pi * L / np.cos(0.5 * np.pi * zeta) ** 2
    else:
        c = map_param
        drdz = r_max * c * np.cosh(c * zeta) / np.sinh(c)
    with np.errstate(invalid="ignore", over="ignore"):
        jac = SPHERE_AREA * r**4 * drdz
    weights = _boole_pattern(M) * h * jac
    if not np.isfinite(r[-1]):
        weights[-1] = 0.0

    cv = np.empty(M + 1)
    cv[0] = faces[0] ** 5 / 5.0
    cv[1:-1] = (faces[1:] ** 5 - faces[:-1] ** 5) / 5.0
    cv[-1] = (r[-1] ** 5 - faces[-1] ** 5) / 5.0 if np.isfinite(r[-1]) else np.inf
    cv *= SPHERE_AREA
    return RadialGrid(zeta, r, faces, weights, cv, map_kind, float(map_param), float(r_max))


def tan_grid(M: int, L: float = 10.0, r_max: float = np.inf) -> RadialGrid:
    """Grid r = L tan(pi zeta/2), zeta uniform on [0, zeta(r_max)]."""
    if M % 2:
        raise ValueError("M must be even")
    if L <= 0:
        raise ValueError("map parameter L must be positive")
    zmax = 1.0 if not np.isfinite(r_max) else 2.0 / np.pi * np.arctan(r_max / L)
    return _build(np.linspace(0.0, zmax, M + 1), "tan", L, r_max)


def sinh_grid(M: int, r_floor: float, r_max: float = 1.0) -> RadialGrid:
    """Grid r = r_max sinh(c zeta)/sinh(c), log-uniform above r_floor ~ 2 r_max e^{-c}."""
    if M % 2:
        raise ValueError("M must be even")
    if not 0 < r_floor < r_max:
        raise ValueError("need 0 < r_floor < r_max")
    c = np.log(2.0 * r_max / r_floor)
    return _build(np.linspace(0.0, 1.0, M + 1), "sinh", c, r_max)


def refine(grid: RadialGrid, factor: int = 2) -> RadialGrid:
    """Same map, `factor` times more intervals (old nodes are kept)."""
    z = np.linspace(grid.zeta[0], grid.zeta[-1], factor * grid.M + 1)
    return _build(z, grid.map_kind, grid.map_param, grid.r_max)


@dataclass(frozen=True, eq=False)
class RadialOperator:
    """Finite-volume form of d^2/dr^2 + (4/r) d/dr - l(l+3)/r^2 + V(r).

    Unknowns are the active nodes ``idx``; homogeneous Dirichlet values are
    imposed at r_max and, for degree 1, at the origin.  The matrix
    A = W^{-1} K + diag(V) is symmetric in the cv-weighted inner product.
    """

    grid: RadialGrid
    degree: int
    idx: np.ndarray
    diag: np.ndarray
    upper: np.ndarray  # A[i, i+1]
    lower: np.ndarray  # A[i+1, i]
    w: np.ndarray  # cv on active nodes times angular measure

    @property
    def n(self) -> int:
        return len(self.idx)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """A u along the last axis (u given on the active nodes)."""
        out = self.diag * u
        out[..., :-1] += self.upper * u[..., 1:]
        out[..., 1:] += self.lower * u[..., :-1]
        return out

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)

    def symmetric_tridiagonal(self):
        """(d, e) of W^{1/2} A W^{-1/2}, a symmetric tridiagonal matrix."""
        return self.diag.copy(), np.sqrt(self.upper * self.lower)

    def solve_shifted(self, a: float, b: float, rhs: np.ndarray) -> np.ndarray:
        """Solve (a I - b A) x = rhs (rhs along the last axis)."""
        ab = np.zeros((3, self.n))
        ab[0, 1:] = -b * self.upper
        ab[1] = a - b * self.diag
        ab[2, :-1] = -b * self.lower
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 1:
            return solve_banded((1, 1), ab, rhs)
        flat = rhs.reshape(-1, self.n).T
        return solve_banded((1, 1), ab, flat).T.reshape(rhs.shape)

    def embed(self, u: np.ndarray) -> np.ndarray:
        """Active-node values -> full node array with Dirichlet zeros."""
        full = np.zeros(u.shape[:-1] + (self.grid.M + 1,))
        full[..., self.idx] = u
        return full


def radial_operator(grid: RadialGrid, degree: int = 0, potential=None) -> RadialOperator:
    if degree not in (0, 1):
        raise ValueError("only harmonic degrees 0 and 1 are supported")
    if not np.isfinite(grid.r_max):
        raise ValueError("finite-volume operator needs a truncated grid")
    r, f, M = grid.nodes, grid.faces, grid.M
    K = SPHERE_AREA * f**4 / np.diff(r)  # flux coefficient across face j+1/2
    cv = grid.cv
    lo = 1 if degree == 1 else 0
    idx = np.arange(lo, M)
    left = np.concatenate(([0.0], K[:-1]))  # K_{j-1/2} for j = 0..M-1
    diag = -(K[:M] + left) / cv[:M]
    upper = K[: M - 1] / cv[: M - 1]
    lower = K[: M - 1] / cv[1:M]
    if degree == 1:
        with np.errstate(divide="ignore"):
            diag = diag - 4.0 / r[:M] ** 2
    if potential is not None:
        diag = diag + potential(r[:M])
    diag, upper, lower = diag[lo:], upper[lo:], lower[lo:]
    w = cv[idx] * MODE_MEASURE[degree]
    return RadialOperator(grid, degree, idx, diag, upper, lower, w)


# ---------------------------------------------------------------------------
# stand-alone quadrature rules on [0, inf) for 5-d radial integrands

def _tan_jacobian(zeta: np.ndarray, L: float):
    r = L * np.tan(0.5 * np.pi * zeta)
    drdz = 0.5 * np.pi * L / np.cos(0.5 * np.pi * zeta) ** 2
    return r, SPHERE_AREA * r**4 * drdz


def gauss_panels(f, L: float = 10.0, panels: int = 64, order: int = 16, r_max: float = np.inf) -> float:
    """int_{|y|<r_max} f(|y|) dy by composite Gauss-Legendre on tan-mapped panels."""
    zmax = 1.0 if not np.isfinite(r_max) else 2.0 / np.pi * np.arctan(r_max / L)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, zmax, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    z = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wz = (0.5 * (b - a) * w).ravel()
    r, jac = _tan_jacobian(z, L)
    return float(np.sum(wz * jac * f(r)))


def fejer2_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights of Fejer's second rule (interior Clenshaw-Curtis nodes) on [-1, 1]."""
    theta = np.pi * np.arange(1, n + 1) / (n + 1)
    x = np.cos(theta)
    k = np.arange(1, (n + 1) // 2 + 1)
    s = np.sin(np.outer(theta, 2 * k - 1)) / (2 * k - 1)
    w = 4.0 / (n + 1) * np.sin(theta) * s.sum(axis=1)
    return x, w


def clenshaw_curtis(f, L: float = 10.0, n: int = 1024, r_max: float = np.inf) -> float:
    """Same integral as `gauss_panels` by an open Clenshaw-Curtis (Fejer-2) rule in zeta."""
    zmax = 1.0 if not np.isfinite(r_max) else 2.0 / np.pi * np.arctan(r_max / L)
    x, w = fejer2_weights(n)
    z = 0.5 * zmax * (x + 1.0)
    r, jac = _tan_jacobian(z, L)
    return float(0.5 * zmax * np.sum(w * jac * f(r)))


def fd_weights(offsets, order: int) -> np.ndarray:
    """Finite-difference weights for the `order`-th derivative on integer offsets."""
    s = np.asarray(offsets, dtype=float)
    k = np.arange(len(s))
    V = s[None, :] ** k[:, None]
    rhs = np.zeros(len(s))
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(V, rhs)


def zeta_derivatives(grid: RadialGrid, values, parity: int = 0, half_width: int = 7):
    """High-order (d/dr, d^2/dr^2) of node values by finite differences in zeta.

    `parity` = +1 (even) or -1 (odd) mirrors values across r = 0 to build ghost
    points; 0 uses shifted one-sided stencils.  At an infinite outer node the
    outputs are set to zero.
    """
    f = np.asarray(values, dtype=float)
    M = grid.M
    n = half_width
    h = grid.h
    d1 = np.zeros_like(f)
    d2 = np.zeros_like(f)
    for j in range(M + 1):
        lo = j - n
        hi = j + n
        if parity == 0 and lo < 0:
            lo, hi = 0, 2 * n
        if hi > M:
            lo, hi = M - 2 * n, M
        offs = np.arange(lo, hi + 1)
        idx = np.abs(offs)
        sign = np.where(offs < 0, float(parity), 1.0)
        vals = f[..., idx] * sign
        rel = offs - j
        d1[..., j] = vals @ fd_weights(rel, 1) / h
        d2[..., j] = vals @ fd_weights(rel, 2) / h**2
    r = grid.nodes
    if grid.map_kind == "tan":
        L = grid.map_param
        zp = 2.0 / (np.pi * L) / (1.0 + (r / L) ** 2)
        zpp = -4.0 * r / (np.pi * L**3) / (1.0 + (r / L) ** 2) ** 2
    else:
        c, rm = grid.map_param, grid.r_max
        u = r / rm * np.sinh(c)
        zp = np.sinh(c) / (rm * c * np.sqrt(1.0 + u**2))
        zpp = -(np.sinh(c) / rm) ** 2 * u / (c * (1.0 + u**2) ** 1.5)
    fin = np.isfinite(r)
    out1 = np.where(fin, d1 * np.where(fin, zp, 0.0), 0.0)
    out2 = np.where(fin, d2 * np.where(fin, zp, 0.0) ** 2 + d1 * np.where(fin, zpp, 0.0), 0.0)
    return out1, out2


def radial_laplacian_fd(grid: RadialGrid, values, degree: int = 0) -> np.ndarray:
    """f'' + (4/r) f' - degree(degree+3) f / r^2 by high-order differences."""
    parity = 1 if degree == 0 else -1
    f = np.asarray(values, dtype=float)
    d1, d2 = zeta_derivatives(grid, f, parity=parity)
    r = grid.nodes
    out = np.zeros_like(f)
    pos = (r > 0) & np.isfinite(r)
    out[..., pos] = d2[..., pos] + 4.0 * d1[..., pos] / r[pos]
    if degree == 1:
        out[..., pos] -= 4.0 * f[..., pos] / r[pos] ** 2
    else:
        out[..., 0] = 5.0 * d2[..., 0]
    return out


@dataclass(frozen=True, eq=False)
class ModeField:
    """Space-time field f(y, t) = m0(r, t) + sum_i m1_i(r, t) y_i / |y|.

    Shapes: t (nt,), mode0 (nt, nr), mode1 (nt, 5, nr) on the nodes of `grid`.
    """

    grid: RadialGrid
    t: np.ndarray
    mode0: np.ndarray
    mode1: np.ndarray

    @classmethod
    def zeros(cls, grid: RadialGrid, t) -> "ModeField":
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nr = grid.M + 1
        return cls(grid, t, np.zeros((len(t), nr)), np.zeros((len(t), DIM, nr)))

    @classmethod
    def radial(cls, grid: RadialGrid, t, profile) -> "ModeField":
        """Mode-0 field from profile(r, t) (vectorized over a (nt, nr) mesh)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m0 = np.asarray(profile(grid.nodes[None, :], t[:, None]), dtype=float)
        m0 = np.broadcast_to(m0, (len(t), grid.M + 1)).copy()
        return cls(grid, t, m0, np.zeros((len(t), DIM, grid.M + 1)))

    @property
    def nt(self) -> int:
        return len(self.t)

    def pointwise_sup(self) -> np.ndarray:
        """max over the sphere |y| = r of |f|, shape (nt, nr)."""
        return np.abs(self.mode0) + np.linalg.norm(self.mode1, axis=1)

    def __add__(self, other: "ModeField") -> "ModeField":
        return ModeField(self.grid, self.t, self.mode0 + other.mode0, self.mode1 + other.mode1)

    def __sub__(self, other: "ModeField") -> "ModeField":
        return ModeField(self.grid, self.t, self.mode0 - other.mode0, self.mode1 - other.mode1)

    def scale(self, s) -> "ModeField":
        s = np.asarray(s, dtype=float)
        if s.ndim == 1:
            return ModeField(self.grid, self.t, self.mode0 * s[:, None], self.mode1 * s[:, None, None])
        return ModeField(self.grid, self.t, self.mode0 * s, self.mode1 * s)

    def evaluate(self, y, k: int) -> np.ndarray:
        """Field value at points y (..., 5) at time index k."""
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            omega = np.where(r[..., None] > 0, y / r[..., None], 0.0)
        m0 = self.grid.interpolate(self.mode0[k], r)
        m1 = self.grid.interpolate(self.mode1[k], r)
        return m0 + np.einsum("i...,...i->...", m1, omega)
