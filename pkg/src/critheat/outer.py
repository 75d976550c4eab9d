"""Outer problem: Dirichlet heat flow on the unit ball about q, barrier and norms.

Fields are radial about q and stored on a sinh-mapped grid whose nodes are close
to log-uniform down to ~1e-18, so the bubble scale mu0 = (T-t)^2 stays resolved
until the last time T - eps.  Time stepping is variable-step BDF2 (backward Euler
start) with the finite-volume Laplacian; the first step is extrapolated backward Euler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .grid import RadialGrid, radial_operator, sinh_grid


def outer_grid(M: int = 400, r_floor: float = 1e-18) -> RadialGrid:
    return sinh_grid(M, r_floor=r_floor, r_max=1.0)


# ---------------------------------------------------------------------------
# heat stepper

class HeatStepper:
    """psi_t = Delta psi + g(t) with psi = 0 on |x| = 1, on the active nodes of a grid."""

    def __init__(self, grid: RadialGrid):
        self.grid = grid
        self.op = radial_operator(grid, 0)

    def run(self, t, g, psi0=None, substeps: int = 1, scheme: str = "bdf2") -> np.ndarray:
        """Integrate over the time nodes t; g (nt, nr) is interpolated linearly in t for substeps.

        Returns psi on the full node set, shape (nt, nr).
        """
        op = self.op
        t = np.asarray(t, dtype=float)
        nt = len(t)
        nr = self.grid.M + 1
        g = np.zeros((nt, nr)) if g is None else np.asarray(g, dtype=float)
        if g.shape != (nt, nr):
            raise ValueError(f"source must have shape {(nt, nr)}, got {g.shape}")
        gi = g[:, op.idx]
        cur = np.zeros(op.n) if psi0 is None else np.asarray(psi0, dtype=float)[op.idx].copy()
        prev = None
        dt_prev = None
        out = np.zeros((nt, nr))
        out[0, op.idx] = cur
        for k in range(nt - 1):
            for s in range(substeps):
                ta = t[k] + (t[k + 1] - t[k]) * s / substeps
                tb = t[k] + (t[k + 1] - t[k]) * (s + 1) / substeps
                wb = (tb - t[k]) / (t[k + 1] - t[k])
                gb = (1.0 - wb) * gi[k] + wb * gi[k + 1]
                dt = tb - ta
                if scheme == "be":
                    new = op.solve_shifted(1.0, dt, cur + dt * gb)
                elif prev is None:
                    # extrapolated backward Euler: second-order start for BDF2
                    gh = (1.0 - (wb - 0.5 / substeps)) * gi[k] + (wb - 0.5 / substeps) * gi[k + 1]
                    full = op.solve_shifted(1.0, dt, cur + dt * gb)
                    half = op.solve_shifted(1.0, 0.5 * dt, cur + 0.5 * dt * gh)
                    half = op.solve_shifted(1.0, 0.5 * dt, half + 0.5 * dt * gb)
                    new = 2.0 * half - full
                else:
                    om = dt / dt_prev
                    g0 = (1.0 + 2.0 * om) / (1.0 + om)
                    rhs = (1.0 + om) * cur - om * om / (1.0 + om) * prev + dt * gb
                    new = op.solve_shifted(g0, dt, rhs)
                prev, cur, dt_prev = cur, new, dt
            out[k + 1, op.idx] = cur
        return out

    def first_eigenmode(self, iters: int = 60):
        """(lambda1, mode) of -Delta on the discrete ball by inverse iteration; max |mode| = 1."""
        op = self.op
        v = np.cos(0.5 * np.pi * self.grid.nodes[op.idx])
        lam = 0.0
        for _ in range(iters):
            v = op.solve_shifted(0.0, -1.0, v)  # A^{-1} v up to sign
            v /= np.sqrt(np.sum(op.w * v * v))
            lam = -float(np.sum(op.w * v * op.apply(v)))
        mode = op.embed(v)
        mode /= mode[np.argmax(np.abs(mode))]
        return lam, mode


# ---------------------------------------------------------------------------
# background

@dataclass(frozen=True, eq=False)
class Background:
    grid: RadialGrid
    t: np.ndarray
    Zstar0: np.ndarray
    Zstar: np.ndarray  # (nt, nr)

    @property
    def at_q(self) -> np.ndarray:
        return self.Zstar[:, 0]

    def sup(self) -> np.ndarray:
        return np.max(np.abs(self.Zstar), axis=1)


def bump_profile(grid: RadialGrid, amplitude: float = 0.1) -> np.ndarray:
    """Z*_0(x) = -amplitude (1 - |x|^2)^2: negative at q, zero on the boundary."""
    r = grid.nodes
    return -amplitude * (1.0 - r * r) ** 2


def evolve_background(Zstar0: np.ndarray, t, grid: RadialGrid, substeps: int = 1) -> Background:
    stepper = HeatStepper(grid)
    Z = stepper.run(t, None, psi0=Zstar0, substeps=substeps)
    Z[0] = Zstar0
    return Background(grid, np.asarray(t, dtype=float), np.asarray(Zstar0, dtype=float), Z)


# ---------------------------------------------------------------------------
# Newtonian potential of (1+|y|^{2+a})^{-1} in R^5

@dataclass(frozen=True, eq=False)
class NewtonianPotential:
    a: float
    sol: object
    r0: float
    r1: float
    Q_inf: float

    @property
    def c_a(self) -> float:
        return 1.0 / (self.a * (3.0 - self.a))

    def source(self, r):
        r = np.asarray(r, dtype=float)
        return 1.0 / (1.0 + r ** (2.0 + self.a))

    def _state(self, r):
        r = np.asarray(r, dtype=float)
        s = np.log(np.clip(r, self.r0, self.r1))
        F, Q = self.sol(s.ravel()).reshape(2, *r.shape)
        small = r < self.r0
        # near the origin F = r^5/5 f(0) + ..., Q ~ r^2/10
        F = np.where(small, r**5 / 5.0, F)
        Q = np.where(small, r * r / 10.0, Q)
        return F, Q

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        F, Q = self._state(r)
        big = r > self.r1
        far = np.where(big, self.c_a * np.where(big, r, 1.0) ** -self.a, 0.0)
        return np.where(big, far, self.Q_inf - Q)

    def derivative(self, r):
        """p'(r) = -r^{-4} int_0^r s^4 f(s) ds."""
        r = np.asarray(r, dtype=float)
        F, _ = self._state(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(r > 0, -F / np.where(r > 0, r, 1.0) ** 4, 0.0)
        big = r > self.r1
        return np.where(big, -self.a * self.c_a * np.where(big, r, 1.0) ** (-self.a - 1.0), d)


def potential_residual(pot: NewtonianPotential, r_lo: float = 1e-3, r_hi: float = 1e3, n: int = 2001,
                       half_width: int = 6) -> float:
    """max |-Delta p - f| on a log-uniform grid in s = log r.

    Delta p = e^{-2s}(d_s v + 3 v) with v = d_s p = r p'(r); v is differentiated by
    central differences, so the check probes the potential's first-order structure.
    """
    from .grid import fd_weights

    s = np.linspace(np.log(r_lo), np.log(r_hi), n)
    h = s[1] - s[0]
    pad = half_width
    ss = np.r_[s[0] - h * np.arange(pad, 0, -1), s, s[-1] + h * np.arange(1, pad + 1)]
    rr = np.exp(ss)
    v = rr * pot.derivative(rr)
    w1 = fd_weights(np.arange(-pad, pad + 1), 1) / h
    win = np.lib.stride_tricks.sliding_window_view(v, 2 * pad + 1)
    lap = np.exp(-2.0 * s) * (win @ w1 + 3.0 * v[pad:-pad])
    return float(np.max(np.abs(-lap - pot.source(np.exp(s)))))


def newtonian_potential(a: float = 0.5, r0: float = 1e-6, r1: float = 1e12) -> NewtonianPotential:
    """Radial solution of -Delta p = (1+|y|^{2+a})^{-1} decaying at infinity."""
    if not 0 < a < 1:
        raise ValueError("a must lie in (0, 1)")

    def rhs(s, y):
        r = np.exp(s)
        f = 1.0 / (1.0 + r ** (2.0 + a))
        return [r**5 * f, y[0] / r**3]

    y0 = [r0**5 / 5.0, r0**2 / 10.0]
    sol = solve_ivp(rhs, (np.log(r0), np.log(r1)), y0, method="DOP853", rtol=1e-13, atol=1e-300,
                    dense_output=True)
    F1, Q1 = sol.y[:, -1]
    # beyond r1: F(s) = F1 + int_r1^s t^{2-a} (1 - t^{-2-a} + ...) dt, keep the leading power
    tail = F1 / (3.0 * r1**3) + r1 ** (-a) / (a * (3.0 - a)) - r1 ** (3.0 - a) / (3.0 - a) / (3.0 * r1**3)
    return NewtonianPotential(a, sol.sol, r0, r1, float(Q1 + tail))


# ---------------------------------------------------------------------------
# norms

def _y(grid: RadialGrid, t, T: float):
    m0 = (T - np.asarray(t, dtype=float)) ** 2
    return grid.nodes[None, :] / m0[:, None], m0


def source_weight(grid: RadialGrid, t, T: float, a: float = 0.5) -> np.ndarray:
    """mu0^{-2} (1+|y|^{2+a})^{-1} + 1 with y = (x - q)/mu0."""
    y, m0 = _y(grid, t, T)
    return 1.0 / (m0[:, None] ** 2 * (1.0 + y ** (2.0 + a))) + 1.0


def solution_weight(grid: RadialGrid, t, T: float, a: float = 0.5) -> np.ndarray:
    """(1+|y|^a)^{-1} + T^{3a/2}."""
    y, _ = _y(grid, t, T)
    return 1.0 / (1.0 + y**a) + T ** (1.5 * a)


def norm_outer_source(g, grid: RadialGrid, t, T: float, a: float = 0.5) -> float:
    return float(np.max(np.abs(g) / source_weight(grid, t, T, a)))


def norm_outer_solution(psi, grid: RadialGrid, t, T: float, a: float = 0.5) -> float:
    return float(np.max(np.abs(psi) / solution_weight(grid, t, T, a)))


# ---------------------------------------------------------------------------
# barrier

@dataclass(frozen=True, eq=False)
class Barrier:
    a: float
    T: float
    c: float
    gamma_sep: float
    min_margin: float
    argmin: tuple
    ceiling: float
    potential: NewtonianPotential
    extra: dict = field(default_factory=dict)

    @property
    def alpha(self) -> float:
        return 1.5 * self.a

    def psi2(self, t):
        t = np.asarray(t, dtype=float)
        al = self.alpha
        return t + self.c / al * (self.T**al - (self.T - t) ** al)

    def __call__(self, grid: RadialGrid, t) -> np.ndarray:
        """psi_bar(x, t) = 2 p((x - q)/mu0) + psi2(t) on the grid nodes, shape (nt, nr)."""
        y, _ = _y(grid, t, self.T)
        return 2.0 * self.potential(y) + self.psi2(t)[:, None]


def _g_tilde(pot: NewtonianPotential, y, m0, s):
    return pot.source(y) / m0**2 + 4.0 * y * pot.derivative(y) / s


def barrier_margin(a: float, T: float, c: float, gamma_sep: float | None, grid: RadialGrid, t,
                   pot: NewtonianPotential | None = None):
    """d_t psi_bar - Delta psi_bar - [mu0^{-2}(1+|y|^{2+a})^{-1} + 1] on the grid, shape (nt, nr).

    Also returns the largest |x|/sqrt(T-t) below which -g_tilde <= 0 at every time.
    """
    pot = pot or newtonian_potential(a)
    t = np.asarray(t, dtype=float)
    s = (T - t)[:, None]
    y, m0 = _y(grid, t, T)
    gt = _g_tilde(pot, y, m0[:, None], s)
    margin = gt + c * s ** (1.5 * a - 1.0)
    rho = grid.nodes[None, :] / np.sqrt(s)
    bad = -gt > 0
    sep = float(np.min(np.where(bad, rho, np.inf))) if np.any(bad) else float(np.max(rho))
    return margin, sep


def tune_barrier(a: float, T: float, grid: RadialGrid, t, pot: NewtonianPotential | None = None,
                 rel_tol: float = 1e-6) -> Barrier:
    """Smallest c (bisection) with a nonnegative margin, the separation constant and the ceiling."""
    pot = pot or newtonian_potential(a)
    lo, hi = 0.0, 1.0
    while np.min(barrier_margin(a, T, hi, None, grid, t, pot)[0]) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("barrier constant search diverged")
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if np.min(barrier_margin(a, T, mid, None, grid, t, pot)[0]) >= 0:
            hi = mid
        else:
            lo = mid
    c = hi
    margin, sep = barrier_margin(a, T, c, None, grid, t, pot)
    k, j = np.unravel_index(np.argmin(margin), margin.shape)
    b = Barrier(a, T, c, sep, float(margin[k, j]), (float(t[k]), float(grid.nodes[j])), 0.0, pot)
    ceil = float(np.max(b(grid, t) / solution_weight(grid, t, T, a)))
    return Barrier(a, T, c, sep, b.min_margin, b.argmin, ceil, pot)


# ---------------------------------------------------------------------------
# solve

@dataclass(frozen=True, eq=False)
class OuterField:
    grid: RadialGrid
    t: np.ndarray
    psi: np.ndarray  # (nt, nr)
    norms: dict


def solve_outer(g, grid: RadialGrid, t, T: float, a: float = 0.5, substeps: int = 1,
                stepper: HeatStepper | None = None) -> OuterField:
    """Heat solve with source g (nt, nr), zero initial and boundary data; norms attached."""
    t = np.asarray(t, dtype=float)
    stepper = stepper or HeatStepper(grid)
    psi = stepper.run(t, g, substeps=substeps)
    gs = norm_outer_source(g, grid, t, T, a) if g is not None else 0.0
    ps = norm_outer_solution(psi, grid, t, T, a)
    return OuterField(grid, t, psi, {"source": gs, "solution": ps, "ratio": ps / gs if gs > 0 else 0.0,
                                     "sup": float(np.max(np.abs(psi)))})


def sample_outer_sources(grid: RadialGrid, t, T: float, a: float = 0.5, n: int = 5, seed: int = 0) -> list:
    """Seeded sources with ||g|| <= 1: the saturating weight itself, then oscillating modulations of it."""
    rng = np.random.default_rng(seed)
    t = np.asarray(t, dtype=float)
    y, _ = _y(grid, t, T)
    W = source_weight(grid, t, T, a)
    out = []
    for k in range(n):
        if k == 0:
            g = W.copy()
        else:
            om, ph = rng.uniform(1.0, 6.0), rng.uniform(0.0, 2.0 * np.pi)
            g = W * (0.2 + 0.8 * np.cos(om * np.log1p(y) + ph) * np.sin(om * t / T)[:, None])
        g[:, -1] = 0.0
        out.append(g)
    return out


def barrier_slack(psi: OuterField, g, barrier: Barrier) -> float:
    """min over the grid of ||g|| psi_bar - |psi|; nonnegative when the comparison holds."""
    gn = norm_outer_source(g, psi.grid, psi.t, barrier.T, barrier.a)
    return float(np.min(gn * barrier(psi.grid, psi.t) - np.abs(psi.psi)))


def holder_diagnostic(psi: OuterField, T_prime: float, exponent: float = 0.5, n_pairs: int = 2000,
                      seed: int = 0) -> float:
    """sup over seeded random node pairs (t <= T') of |dpsi| / (|dx|^e + |dt|^{e/2})."""
    rng = np.random.default_rng(seed)
    kk = np.nonzero(psi.t <= T_prime)[0]
    if len(kk) < 2:
        return 0.0
    k1, k2 = rng.choice(kk, n_pairs), rng.choice(kk, n_pairs)
    j1, j2 = rng.integers(0, psi.grid.M + 1, n_pairs), rng.integers(0, psi.grid.M + 1, n_pairs)
    dpsi = np.abs(psi.psi[k1, j1] - psi.psi[k2, j2])
    den = np.abs(psi.grid.nodes[j1] - psi.grid.nodes[j2]) ** exponent + np.abs(psi.t[k1] - psi.t[k2]) ** (
        exponent / 2.0)
    ok = den > 0
    return float(np.max(dpsi[ok] / den[ok])) if np.any(ok) else 0.0


def export_field_csv(field_: OuterField, path, indices=None) -> None:
    import csv

    idx = range(len(field_.t)) if indices is None else indices
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "psi"])
        for k in idx:
            for j, x in enumerate(field_.grid.nodes):
                w.writerow([repr(float(field_.t[k])), repr(float(x)), repr(float(field_.psi[k, j]))])
