"""The 5-d Aubin-Talenti bubble, kernel of its linearization, cutoff and integral table.

U(y) = alpha (1 + |y|^2)^{-3/2} solves Delta U + U^{7/3} = 0 in R^5 exactly when
alpha^{4/3} = n(n-2) = 15.  The linearized operator L = Delta + p U^{p-1} has the
bounded kernel Z_i = d_i U (i = 1..5) and the dilation mode Z_6 = (3/2) U + y.grad U.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import beta as beta_fn

from .grid import (
    SPHERE_AREA,
    RadialGrid,
    clenshaw_curtis,
    gauss_panels,
    radial_laplacian_fd,
    tan_grid,
)


@dataclass(frozen=True)
class Dimension:
    """Space dimension and the critical exponent; only n = 5 is enabled."""

    n: int = 5

    def __post_init__(self):
        if self.n != 5:
            raise ValueError("only n = 5 is supported")

    @property
    def p(self) -> float:
        return (self.n + 2) / (self.n - 2)

    @property
    def alpha_n(self) -> float:
        return float(self.n * (self.n - 2)) ** ((self.n - 2) / 4.0)


DIMENSION = Dimension()
N = DIMENSION.n
P = DIMENSION.p
ALPHA = DIMENSION.alpha_n  # 15^{3/4}


class GridFault(RuntimeError):
    """Two independent quadratures of the same integral disagree."""


@dataclass(frozen=True)
class BubbleParams:
    mu: float
    xi: np.ndarray = field(default_factory=lambda: np.zeros(N))
    mu_dot: float = 0.0
    xi_dot: np.ndarray = field(default_factory=lambda: np.zeros(N))

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"bubble scale must be positive, got mu={self.mu}")


# ---------------------------------------------------------------------------
# radial profiles and their r-derivatives

def bubble_radial(r, alpha: float = ALPHA):
    r = np.asarray(r, dtype=float)
    return alpha * (1.0 + r * r) ** -1.5


def bubble_dr(r):
    r = np.asarray(r, dtype=float)
    return -3.0 * ALPHA * r * (1.0 + r * r) ** -2.5


def bubble_drr(r):
    r = np.asarray(r, dtype=float)
    return ALPHA * (12.0 * r * r - 3.0) * (1.0 + r * r) ** -3.5


def bubble_drrr(r):
    r = np.asarray(r, dtype=float)
    return ALPHA * r * (45.0 - 60.0 * r * r) * (1.0 + r * r) ** -4.5


def bubble_laplacian(r, alpha: float = ALPHA):
    """Exact Delta U = -15 alpha (1+r^2)^{-7/2} for the profile scaled by alpha."""
    r = np.asarray(r, dtype=float)
    return -15.0 * alpha * (1.0 + r * r) ** -3.5


def dilation_radial(r):
    """Z_6(r) = (3/2) U + r U_r = (3/2) alpha (1 - r^2)(1 + r^2)^{-5/2}."""
    r = np.asarray(r, dtype=float)
    return 1.5 * ALPHA * (1.0 - r * r) * (1.0 + r * r) ** -2.5


def potential(r):
    """p U^{p-1} = 35 (1 + r^2)^{-2}."""
    r = np.asarray(r, dtype=float)
    return P * ALPHA ** (P - 1.0) * (1.0 + r * r) ** -2.0


def dilation_operator_dmu(r):
    """(3/2) Z_6 + r Z_6' : derivative of mu^{-3/2} Z_6(y/mu) w.r.t. mu, at mu = 1."""
    r = np.asarray(r, dtype=float)
    s = 1.0 + r * r
    z6r = 1.5 * ALPHA * r * (-2.0 * s ** -2.5 - 5.0 * (1.0 - r * r) * s ** -3.5)
    return 1.5 * dilation_radial(r) + r * z6r


# ---------------------------------------------------------------------------
# point evaluations

def standard_bubble(y):
    """U(y) for points y with last axis of length 5."""
    y = np.asarray(y, dtype=float)
    return bubble_radial(np.linalg.norm(y, axis=-1))


def bubble_family(x, params: BubbleParams):
    """mu^{-3/2} U((x - xi)/mu)."""
    x = np.asarray(x, dtype=float)
    y = (x - np.asarray(params.xi)) / params.mu
    return params.mu**-1.5 * standard_bubble(y)


def kernel_element(i: int, y):
    """Z_i(y): d_i U for i = 1..5, the dilation mode for i = 6."""
    if i not in range(1, 7):
        raise ValueError(f"kernel index must be in 1..6, got {i}")
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1)
    if i == 6:
        return dilation_radial(r)
    return -3.0 * ALPHA * y[..., i - 1] * (1.0 + r * r) ** -2.5


def kernel_radial(i: int, r):
    """Radial profile of Z_i in its harmonic sector (mode 1 uses Z_i = U_r(r) y_i/r)."""
    if i not in range(1, 7):
        raise ValueError(f"kernel index must be in 1..6, got {i}")
    return dilation_radial(r) if i == 6 else bubble_dr(r)


# ---------------------------------------------------------------------------
# residual oracles

def pde_residual(grid: RadialGrid, alpha: float = ALPHA, method: str = "analytic") -> float:
    """max over finite nodes of |Delta U + U^p| for the profile scaled by alpha."""
    r = grid.nodes[np.isfinite(grid.nodes)]
    u = bubble_radial(r, alpha)
    if method == "analytic":
        lap = bubble_laplacian(r, alpha)
    elif method == "fd":
        lap = radial_laplacian_fd(grid, bubble_radial(grid.nodes, alpha))[np.isfinite(grid.nodes)]
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.max(np.abs(lap + u**P)))


def recover_alpha(grid: RadialGrid | None = None, bracket=(1.0, 20.0)) -> float:
    """Positive root of the nodal residual sum_j (Delta U + U^p)(r_j) as a function of alpha."""
    grid = grid or tan_grid(400)
    r = grid.nodes[np.isfinite(grid.nodes)]

    def resid(a):
        return float(np.sum(bubble_laplacian(r, a) + bubble_radial(r, a) ** P))

    return brentq(resid, *bracket, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def kernel_residual(grid: RadialGrid, i: int, method: str = "fd") -> float:
    """max over nodes of |L Z_i| (Laplacian by high-order differences in zeta)."""
    degree = 0 if i == 6 else 1
    z = np.where(np.isfinite(grid.nodes), kernel_radial(i, np.where(np.isfinite(grid.nodes), grid.nodes, 0.0)), 0.0)
    if method == "fd":
        lap = radial_laplacian_fd(grid, z, degree=degree)
    elif method == "analytic":
        r = grid.nodes
        with np.errstate(invalid="ignore", divide="ignore"):
            if degree == 0:
                lap = ALPHA * (1.5 * bubble_laplacian(r, 1.0) + _r_grad_lap(r))
            else:
                lap = bubble_drrr(r) + 4.0 * (bubble_drr(r) - bubble_dr(r) / r) / r
                lap = np.where(r > 0, lap, 0.0)
    else:
        raise ValueError(f"unknown method {method!r}")
    fin = np.isfinite(grid.nodes)
    res = lap[fin] + potential(grid.nodes[fin]) * z[fin]
    return float(np.max(np.abs(res)))


def _r_grad_lap(r):
    # Delta(r U_r) = r dr(Delta U) + 2 Delta U for the unit-amplitude profile
    s = 1.0 + r * r
    lap = -15.0 * s ** -3.5
    return r * (105.0 * r * s ** -4.5) + 2.0 * lap


# ---------------------------------------------------------------------------
# integrals over R^5

def radial_moment(a: float, b: float) -> float:
    """int_0^inf r^a (1+r^2)^{-b} dr = B((a+1)/2, b-(a+1)/2)/2."""
    return 0.5 * float(beta_fn((a + 1.0) / 2.0, b - (a + 1.0) / 2.0))


def exact_integrals() -> dict:
    """Closed forms of the core integrals (Beta functions)."""
    a = ALPHA
    I_Up = SPHERE_AREA * a**P * radial_moment(4, 3.5)
    z6sq = 2.25 * a * a * (radial_moment(4, 5) - 2 * radial_moment(6, 5) + radial_moment(8, 5))
    dU_sq = 9.0 * a * a * radial_moment(6, 5) / 5.0
    return {
        "I_Up": I_Up,
        "I_Z6sq": SPHERE_AREA * z6sq,
        "I_pUp1Z6": -1.5 * I_Up,
        "I_dU1sq": SPHERE_AREA * dU_sq,
    }


INTEGRANDS = {
    "I_Up": lambda r: bubble_radial(r) ** P,
    "I_Z6sq": lambda r: dilation_radial(r) ** 2,
    "I_pUp1Z6": lambda r: potential(r) * dilation_radial(r),
    "I_dU1sq": lambda r: bubble_dr(r) ** 2 / 5.0,
}


@dataclass(frozen=True)
class CoreIntegrals:
    values: dict
    secondary: dict
    rel_disagreement: dict

    def __getitem__(self, key):
        return self.values[key]


def _clean(f):
    def g(r):
        with np.errstate(over="ignore", invalid="ignore"):
            v = f(r)
        return np.where(np.isfinite(r), v, 0.0)

    return g


def core_integrals(eigenpair=None, r_max: float = np.inf, tol: float = 1e-7, L: float = 10.0) -> CoreIntegrals:
    """Core integrals by composite Gauss-Legendre panels and an open Clenshaw-Curtis rule.

    With an eigenpair the entry I_Z0sq (integral of Z_0^2 over the truncation ball)
    is added, using a cubic-spline representation of the discrete eigenfunction.
    """
    integrands = dict(INTEGRANDS)
    lim = {k: r_max for k in integrands}
    if eigenpair is not None:
        g = eigenpair.grid
        spl = g.spline(eigenpair.Z0)

        def z0sq(r, g=g, spl=spl):
            return spl(np.clip(g.zeta_of(r), 0.0, g.zeta[-1])) ** 2

        integrands["I_Z0sq"] = z0sq
        lim["I_Z0sq"] = min(r_max, g.r_max)
    primary, secondary, dis = {}, {}, {}
    for key, f in integrands.items():
        f = _clean(f)
        Lk = L if key != "I_Z0sq" else max(1.0, lim[key] / 8.0)
        a = gauss_panels(f, L=Lk, panels=96, order=16, r_max=lim[key])
        b = clenshaw_curtis(f, L=Lk, n=2047, r_max=lim[key])
        primary[key], secondary[key] = a, b
        dis[key] = abs(a - b) / max(abs(a), 1e-300)
        if dis[key] > tol:
            raise GridFault(f"{key}: rules disagree by {dis[key]:.2e} (> {tol:g})")
    return CoreIntegrals(primary, secondary, dis)


# ---------------------------------------------------------------------------
# cutoff

ETA_DERIV_MAX = 1.875  # max |eta0'| on [1, 2]


def eta0(s):
    """C^2 quintic step: 1 for s <= 1, 0 for s >= 2."""
    s = np.asarray(s, dtype=float)
    w = np.clip(s - 1.0, 0.0, 1.0)
    return 1.0 - w**3 * (10.0 - 15.0 * w + 6.0 * w * w)


def eta0_d1(s):
    s = np.asarray(s, dtype=float)
    w = np.clip(s - 1.0, 0.0, 1.0)
    return -30.0 * w * w * (1.0 - w) ** 2


def eta0_d2(s):
    s = np.asarray(s, dtype=float)
    w = np.clip(s - 1.0, 0.0, 1.0)
    return -60.0 * w * (1.0 - w) * (1.0 - 2.0 * w)


def cutoff_eta(y, R: float):
    """eta_R(y) = eta0(|y|/R) for points y (last axis 5)."""
    if not R > 0:
        raise ValueError("R must be positive")
    y = np.asarray(y, dtype=float)
    return eta0(np.linalg.norm(y, axis=-1) / R)


def cutoff_radial(r, R: float):
    """(eta_R, d_r eta_R, Delta eta_R) as radial profiles."""
    r = np.asarray(r, dtype=float)
    s = r / R
    e1 = eta0_d1(s) / R
    e2 = eta0_d2(s) / R**2
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = e2 + np.where(r > 0, 4.0 * e1 / np.where(r > 0, r, 1.0), 0.0)
    return eta0(s), e1, lap


# ---------------------------------------------------------------------------
# export

def export_profiles_csv(grid: RadialGrid, path) -> Path:
    """CSV with columns r, U, Z1..Z6; Z_i is sampled along the positive y_i axis."""
    path = Path(path)
    r = grid.nodes[np.isfinite(grid.nodes)]
    cols = [r, bubble_radial(r)] + [bubble_dr(r)] * 5 + [dilation_radial(r)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "U", "Z1", "Z2", "Z3", "Z4", "Z5", "Z6"])
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    return path
