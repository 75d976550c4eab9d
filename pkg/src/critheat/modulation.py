"""Modulation layer: kernel projections, the leading scale law, T0/T1 and the l-functional.

At leading order the projection of the inner source on the dilation mode vanishes
when  mu' = -beta |Z*(q)| mu^{1/2},  whose solution with mu(T) = 0 is
mu_*(t) = alpha_* (T-t)^2,  alpha_* = beta^2 |Z*(q)|^2 / 4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import PchipInterpolator

from .grid import ModeField, RadialGrid
from .profile import exact_integrals, kernel_radial

MODE_OF = {j: (0 if j == 6 else 1) for j in range(1, 7)}


@dataclass(frozen=True)
class ModulationConstants:
    beta_n: float
    alpha_star: float
    gamma: float
    Zstar_at_q: float
    lambda0: float = float("nan")

    @classmethod
    def build(cls, Zq: float, lambda0: float = float("nan"), integrals=None) -> "ModulationConstants":
        b = beta_n(integrals)
        a = b * b * Zq * Zq / 4.0
        return cls(b, a, gamma_constant(b, Zq, a), Zq, lambda0)


# ---------------------------------------------------------------------------
# projections

def kernel_profiles(grid: RadialGrid) -> dict:
    """Radial profiles of Z_1..Z_6 on the grid nodes (zero at infinity)."""
    r = np.where(np.isfinite(grid.nodes), grid.nodes, 0.0)
    fin = np.isfinite(grid.nodes)
    return {j: np.where(fin, kernel_radial(j, r), 0.0) for j in range(1, 7)}


def ball_mask(grid: RadialGrid, R: float | None) -> np.ndarray:
    return np.ones(grid.M + 1, bool) if R is None else grid.nodes <= 2.0 * R * (1 + 1e-12)


def projection_vectors(grid: RadialGrid, R: float | None = None) -> dict:
    """For each j the pair (w * Z_j, int_{B_2R} Z_j^2) so that c_j = <vec, profile>/norm."""
    Z = kernel_profiles(grid)
    mask = ball_mask(grid, R)
    out = {}
    for j, z in Z.items():
        w = grid.quad_weights(MODE_OF[j]) * mask
        out[j] = (w * z, float(np.sum(w * z * z)))
    return out


def c_projection(h: ModeField, j: int, R: float | None = None, vectors=None) -> np.ndarray:
    """c_j[h](t) = int_{B_2R} h Z_j / int_{B_2R} Z_j^2 at every time of h."""
    if j not in range(1, 7):
        raise ValueError("j must be in 1..6")
    vec, nrm = (vectors or projection_vectors(h.grid, R))[j]
    prof = h.mode0 if j == 6 else h.mode1[:, j - 1, :]
    return prof @ vec / nrm


def all_projections(h: ModeField, R: float | None = None) -> np.ndarray:
    """Array (nt, 6) of c_1..c_6."""
    vecs = projection_vectors(h.grid, R)
    return np.column_stack([c_projection(h, j, R, vecs) for j in range(1, 7)])


# ---------------------------------------------------------------------------
# constants and closed forms

def beta_n(integrals=None) -> float:
    """beta_5 = (3/2) int U^p / int Z_6^2."""
    I = integrals if integrals is not None else exact_integrals()
    return 1.5 * I["I_Up"] / I["I_Z6sq"]


def mu_star(t, T: float, Zq: float, beta: float | None = None):
    t = np.asarray(t, dtype=float)
    if np.any(t > T):
        raise ValueError("mu_star is defined for t <= T only")
    b = beta_n() if beta is None else beta
    return 0.25 * b * b * Zq * Zq * (T - t) ** 2


def mu_star_dot(t, T: float, Zq: float, beta: float | None = None):
    b = beta_n() if beta is None else beta
    return -0.5 * b * b * Zq * Zq * (T - np.asarray(t, dtype=float))


def gamma_constant(beta: float | None = None, Zq: float = -0.1, alpha_star: float | None = None) -> float:
    """Exponent of the linearization mu1' = -gamma mu1/(T-t) + ... around mu_*."""
    b = beta_n() if beta is None else beta
    a = 0.25 * b * b * Zq * Zq if alpha_star is None else alpha_star
    return b * abs(Zq) / (2.0 * np.sqrt(a))


def perturbation_gamma(T: float = 0.05, Zq: float = -0.1, delta: float = 1e-6, window=(0.1, 0.9)):
    """Fit the decay exponent of mu - mu_* by integrating the nonlinear law from perturbed data.

    Returns (gamma_fit, times, differences).
    """
    b = beta_n()
    a = 0.25 * b * b * Zq * Zq
    mu0 = a * T * T * (1.0 + delta)
    t_eval = T * (1.0 - np.geomspace(1.0 - window[0], 1.0 - window[1], 60))

    def rhs(t, m):
        return [-b * abs(Zq) * np.sqrt(max(m[0], 0.0))]

    sol = solve_ivp(rhs, (0.0, t_eval[-1]), [mu0], t_eval=t_eval, method="DOP853", rtol=1e-13, atol=1e-30)
    diff = sol.y[0] - a * (T - sol.t) ** 2
    slope = np.polyfit(np.log(T - sol.t), np.log(np.abs(diff)), 1)[0]
    return float(slope), sol.t, diff


# ---------------------------------------------------------------------------
# time grid and bubble trajectories

def time_grid(T: float, eps: float | None = None, ratio: float = 0.95, layer_scale: float | None = None,
              layer_tau: float = 60.0) -> np.ndarray:
    """Times on [0, T-eps] with T-t shrinking geometrically (factor `ratio`) toward eps.

    With `layer_scale` = mu(0)^2 an initial layer t = layer_scale * tau is added so the
    inner time tau is resolved on [0, layer_tau].
    """
    eps = 1e-4 * T if eps is None else eps
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    if not 0 <= eps < T:
        raise ValueError("need 0 <= eps < T")
    s = [T]
    while s[-1] * ratio > eps * (1 + 1e-9):
        s.append(s[-1] * ratio)
    s.append(eps)
    t = T - np.asarray(s)
    if layer_scale:
        tau = np.r_[np.linspace(0.0, 4.0, 17), np.geomspace(4.0, layer_tau, 13)[1:]]
        while layer_scale * tau[-1] < t[1] / 2:
            tau = np.r_[tau, tau[-1] * 1.6]
        layer = layer_scale * tau
        layer = layer[layer < t[1] * 0.7]
        t = np.union1d(t, layer)
    t[0] = 0.0
    return t


@dataclass(frozen=True, eq=False)
class BubbleTrajectory:
    """mu = mu_* + mu1 and xi = q + xi1 on the time grid t (last time T - eps)."""

    t: np.ndarray
    T: float
    mu_star: np.ndarray
    mu1: np.ndarray
    xi1: np.ndarray
    mu_dot: np.ndarray
    xi_dot: np.ndarray
    q: np.ndarray = field(default_factory=lambda: np.zeros(5))

    @property
    def mu(self) -> np.ndarray:
        return self.mu_star + self.mu1

    @property
    def xi(self) -> np.ndarray:
        return self.q + self.xi1

    @property
    def eps(self) -> float:
        return float(self.T - self.t[-1])

    def corridor(self, T0: float | None = None) -> tuple[float, float]:
        """(min, max) of mu/mu0 with mu0 = (T-t)^2."""
        ratio = self.mu / (self.T - self.t) ** 2
        return float(ratio.min()), float(ratio.max())

    def tau(self) -> np.ndarray:
        return tau_map(self.t, self.mu, self.T)

    @classmethod
    def leading(cls, t, T: float, Zq: float, q=None) -> "BubbleTrajectory":
        t = np.asarray(t, dtype=float)
        ms = mu_star(t, T, Zq)
        return cls(t, T, ms, np.zeros_like(t), np.zeros((len(t), 5)), mu_star_dot(t, T, Zq),
                   np.zeros((len(t), 5)), np.zeros(5) if q is None else np.asarray(q, float))


def tau_map(t, mu, T: float, n_gauss: int = 8) -> np.ndarray:
    """tau(t) = int_0^t mu^{-2} ds with log mu interpolated monotonically in log(T-s)."""
    t = np.asarray(t, dtype=float)
    mu = np.asarray(mu, dtype=float)
    s = np.log(T - t)
    order = np.argsort(s)
    f = PchipInterpolator(s[order], np.log(mu[order]))
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    a, b = t[:-1, None], t[1:, None]
    ss = 0.5 * (b - a) * x + 0.5 * (a + b)
    vals = np.exp(-2.0 * f(np.log(T - ss)))
    inc = (0.5 * (b - a) * w * vals).sum(axis=1)
    return np.concatenate(([0.0], np.cumsum(inc)))


# ---------------------------------------------------------------------------
# T0, T1

def _cumulative_from_end(t, g, T, power):
    """F(t_k) = int_{t_k}^{t_end} (T-s)^power g(s) ds for piecewise-linear g, exactly."""
    shape = (-1,) + (1,) * (g.ndim - 1)
    u0 = (T - t[:-1]).reshape(shape)
    u1 = (T - t[1:]).reshape(shape)
    g0, g1 = g[:-1], g[1:]
    # on [u1, u0]: g = c + slope * u
    slope = (g0 - g1) / (u0 - u1)
    c = g1 - slope * u1
    i0 = (u0 ** (power + 1) - u1 ** (power + 1)) / (power + 1)
    i1 = (u0 ** (power + 2) - u1 ** (power + 2)) / (power + 2)
    seg = c * i0 + slope * i1
    out = np.zeros(g.shape)
    out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    return out


def T0_apply(g, gamma: float, T: float, eps: float = 0.0, t=None):
    """T0[g](t) = -(T-t)^{-gamma} int_t^{T-eps} (T-s)^{gamma+1} g(s) ds.

    `g` is either a callable (adaptive quadrature at the times `t`) or an array of
    samples at the times `t` (exact integration of the piecewise-linear
    interpolant; then t[-1] must equal T - eps).
    """
    t = np.asarray(t, dtype=float)
    if callable(g):
        vals = np.array([
            quad(lambda s: (T - s) ** (gamma + 1) * g(s), tk, T - eps, epsabs=0.0, epsrel=1e-13, limit=200)[0]
            for tk in t
        ])
    else:
        g = np.asarray(g, dtype=float)
        if abs(t[-1] - (T - eps)) > 1e-12 * T:
            raise ValueError("sampled g must end at T - eps")
        vals = _cumulative_from_end(t, g, T, gamma + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(T - t > 0, (T - t) ** -gamma, 0.0) * vals


def T0_derivative(mu1, g_at_t, gamma: float, T: float, t):
    """d/dt T0[g] = gamma mu1/(T-t) + (T-t) g(t)."""
    t = np.asarray(t, dtype=float)
    return gamma * mu1 / (T - t) + (T - t) * np.asarray(g_at_t, dtype=float)


def T1_apply(g, T: float, eps: float = 0.0, t=None):
    """T1[g](t) = int_t^{T-eps} (T-s) g(s) ds for vector-valued g (last axis = components)."""
    t = np.asarray(t, dtype=float)
    if callable(g):
        comps = len(np.atleast_1d(g(t[0])))
        out = np.zeros((len(t), comps))
        for c in range(comps):
            out[:, c] = [
                quad(lambda s: (T - s) * np.atleast_1d(g(s))[c], tk, T - eps, epsabs=1e-300, epsrel=1e-13, limit=200)[0]
                for tk in t
            ]
        return out
    g = np.asarray(g, dtype=float)
    if abs(t[-1] - (T - eps)) > 1e-12 * T:
        raise ValueError("sampled g must end at T - eps")
    return _cumulative_from_end(t, g, T, 1.0)


def T1_derivative(g_at_t, T: float, t):
    t = np.asarray(t, dtype=float)
    return -((T - t) * np.asarray(g_at_t, dtype=float).T).T


# ---------------------------------------------------------------------------
# l-functional

def _phi1(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        v = -np.expm1(-z) / z
    return np.where(small, 1.0 - z / 2.0 + z * z / 6.0, v)


def _phi2(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        v = (-np.expm1(-z) - z * np.exp(-z)) / (z * z)
    return np.where(small, 0.5 - z / 3.0 + z * z / 8.0 - z**3 / 30.0, v)


def exp_weighted_integral(tau, q, lam: float, tail: bool = True) -> float:
    """int_0^inf e^{-lam tau} q(tau) dtau, q piecewise linear on the nodes, constant after.

    Exact per interval; contributions below underflow are dropped.
    """
    tau = np.asarray(tau, dtype=float)
    q = np.asarray(q, dtype=float)
    d = np.diff(tau)
    z = lam * d
    with np.errstate(over="ignore"):
        e0 = np.exp(-lam * tau[:-1])
    seg = e0 * d * (q[:-1] * _phi1(z) + (q[1:] - q[:-1]) * _phi2(z))
    total = float(np.sum(seg[e0 > 0]))
    if tail:
        total += float(q[-1] * np.exp(-lam * tau[-1]) / lam)
    return total


def ell_functional(h: ModeField, traj, pair, lambda0: float | None = None, Z0=None) -> float:
    """Initial Z0-amplitude that keeps the unstable component of the inner solution bounded.

    l = - int_0^inf e^{-lambda0 tau} q(tau) dtau, q(t) = int h Z0 / int Z0^2, tau = int mu^{-2}.
    `traj` is a BubbleTrajectory or a pair (tau_array, None).
    """
    lam = pair.lambda0 if lambda0 is None else lambda0
    z0 = pair.on_grid(h.grid) if Z0 is None else Z0
    w = h.grid.quad_weights(0)
    q = h.mode0 @ (w * z0) / np.sum(w * z0 * z0)
    tau = traj.tau() if isinstance(traj, BubbleTrajectory) else np.asarray(traj[0], dtype=float)
    return -exp_weighted_integral(tau, q, lam)


def export_trajectory_csv(traj: BubbleTrajectory, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mu_star", "mu1", "mu", "mu_dot"] + [f"xi1_{i}" for i in range(1, 6)])
        for k in range(len(traj.t)):
            w.writerow([repr(float(v)) for v in
                        (traj.t[k], traj.mu_star[k], traj.mu1[k], traj.mu[k], traj.mu_dot[k], *traj.xi1[k])])
