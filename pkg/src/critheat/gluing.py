"""Inner-outer gluing driver for a single bubble at the center of the unit ball.

The unknowns are the dilation mu(t), the inner correction phi(y, t) on B_2R and
the outer correction psi(x, t); the translation xi stays at q = 0 because every
field is radial about q.  The approximate solution is

    u = U_{mu,xi} + Z* + mu^{-3/2} phi((x-xi)/mu) eta_R + psi.

One Picard sweep is  psi -> mu -> phi:  psi is relaxed toward T_out[G], mu is
recomputed so that the dilation projection of the inner source vanishes exactly,
and phi = T_in[H] with the bounded unstable amplitude l*.  Since psi enters
everything else, damping psi damps the whole iteration while keeping the inner
equation and the orthogonality conditions exact at every iterate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import DIM, ModeField, RadialGrid, radial_laplacian_fd
from .inner import (InnerOperator, WeightSpec, build_inner_operator, inner_grid, mu0, norm_solution,
                    norm_source, project_off_kernel, solve_inner)
from .modulation import (BubbleTrajectory, all_projections, beta_n, mu_star, mu_star_dot, projection_vectors,
                         time_grid)
from .outer import (Background, HeatStepper, bump_profile, evolve_background, norm_outer_solution,
                    outer_grid, source_weight)
from .profile import ALPHA, P, bubble_radial, cutoff_radial, dilation_radial, potential

log = logging.getLogger(__name__)


class GluingDivergence(RuntimeError):
    """Picard iteration left the trust region or stopped contracting."""


@dataclass(frozen=True)
class GluingConfig:
    T: float = 0.05
    eps_frac: float = 1e-4
    weights: WeightSpec = field(default_factory=WeightSpec)
    zstar_amp: float = 0.1
    k: int = 1
    delta0: float = 1e-2
    delta1: float = 0.5
    max_iters: int = 40
    damping: float = 0.7
    tol: float = 1e-9
    time_ratio: float = 0.95
    inner_M: int = 480
    outer_M: int = 600
    outer_substeps: int = 2
    continuation: tuple = (1.0,)
    fallback_ramp: tuple = (0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if self.k != 1:
            raise NotImplementedError("only a single bubble (k = 1) is supported")
        if not 0 < self.eps_frac < 1:
            raise ValueError("eps_frac must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not self.T > 0:
            raise ValueError("T must be positive")
        for ramp in (self.continuation, self.fallback_ramp):
            if ramp and ramp[-1] != 1.0:
                raise ValueError("a lam ramp must end at 1")
        if not self.continuation:
            raise ValueError("continuation must not be empty")

    @property
    def R(self) -> float:
        return self.weights.R

    @property
    def eps(self) -> float:
        return self.eps_frac * self.T


@dataclass(frozen=True, eq=False)
class Setup:
    """Grids, background and operators shared by all iterations."""

    cfg: GluingConfig
    t: np.ndarray
    xgrid: RadialGrid
    ygrid: RadialGrid
    background: Background
    op: InnerOperator
    stepper: HeatStepper
    Zq0: float
    vec6: np.ndarray
    I6: float


@dataclass(frozen=True, eq=False)
class GluingState:
    lam: float
    mu: np.ndarray
    mu_dot: np.ndarray
    psi: np.ndarray  # (nt, nx) on the outer grid
    G_eff: np.ndarray  # source of which psi is the exact discrete heat solve
    phi: ModeField
    H: ModeField  # inner source used for phi
    ell: float
    iteration: int = 0

    @property
    def xi1(self) -> np.ndarray:
        return np.zeros((len(self.mu), DIM))


# ---------------------------------------------------------------------------
# pointwise building blocks

def nonlinearity_N(U, Z, p: float = P, switch: float = 1e-3):
    """|U+Z|^{p-1}(U+Z) - U^p - p U^{p-1} Z for U > 0, with a Taylor branch when |Z| << U."""
    U = np.asarray(U, dtype=float)
    Z = np.asarray(Z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = Z / U
    v = U + Z
    direct = np.abs(v) ** (p - 1.0) * v - U**p - p * U ** (p - 1.0) * Z
    c = [p * (p - 1) / 2]
    for m in range(3, 6):
        c.append(c[-1] * (p - m + 1) / m)
    ss = np.where(np.abs(s) < switch, s, 0.0)
    series = U**p * ss * ss * (c[0] + ss * (c[1] + ss * (c[2] + ss * c[3])))
    return np.where(np.abs(s) < switch, series, direct)


def error_E(grid: RadialGrid, t, mu, mu_dot, xi_dot=None) -> ModeField:
    """E = mu mu' Z_6(y) + mu xi' . grad U(y) as a mode field."""
    r = grid.nodes
    fin = np.isfinite(r)
    z6 = np.where(fin, dilation_radial(np.where(fin, r, 0.0)), 0.0)
    mu = np.asarray(mu, dtype=float)
    m0 = (mu * np.asarray(mu_dot, dtype=float))[:, None] * z6[None, :]
    m1 = np.zeros((len(mu), DIM, grid.M + 1))
    if xi_dot is not None:
        from .profile import bubble_dr

        ur = np.where(fin, bubble_dr(np.where(fin, r, 0.0)), 0.0)
        m1 = (mu[:, None] * np.asarray(xi_dot, dtype=float))[:, :, None] * ur[None, None, :]
    return ModeField(grid, np.asarray(t, dtype=float), m0, m1)


def _tan_dzeta_dr(grid: RadialGrid, r):
    L = grid.map_param
    return 2.0 / (np.pi * L) / (1.0 + (r / L) ** 2)


def _sample_rows(grid: RadialGrid, values: np.ndarray, r: np.ndarray, deriv: bool = False):
    """Row k of `values` evaluated at radii r[k] (both (nt, .)); zero beyond the grid."""
    out = np.zeros(r.shape)
    dout = np.zeros(r.shape)
    inside = r <= grid.r_max
    for k in range(values.shape[0]):
        m = inside[k]
        if not np.any(m):
            continue
        sp = CubicSpline(grid.zeta, values[k])
        z = grid.zeta_of(r[k, m])
        out[k, m] = sp(z)
        if deriv:
            dout[k, m] = sp.derivative()(z) * _tan_dzeta_dr(grid, r[k, m])
    return (out, dout) if deriv else out


def _sample_outer(grid: RadialGrid, values: np.ndarray, r: np.ndarray) -> np.ndarray:
    out = np.empty(r.shape)
    for k in range(values.shape[0]):
        out[k] = CubicSpline(grid.zeta, values[k])(grid.zeta_of(np.minimum(r[k], grid.r_max)))
    return out


# ---------------------------------------------------------------------------
# setup

def build_setup(cfg: GluingConfig) -> Setup:
    T, eps = cfg.T, cfg.eps
    xgrid = outer_grid(cfg.outer_M)
    Z0 = bump_profile(xgrid, cfg.zstar_amp)
    Zq0 = float(Z0[0])
    # leading-order scale with the decaying background fixes the initial inner layer
    t_c = time_grid(T, eps, cfg.time_ratio)
    bg_c = evolve_background(Z0, t_c, xgrid, cfg.outer_substeps)
    zq = np.abs(bg_c.at_q)
    tail = np.r_[np.cumsum((0.5 * (zq[1:] + zq[:-1]) * np.diff(t_c))[::-1])[::-1], 0.0] + eps * zq[-1]
    mu_init = (0.5 * beta_n() * tail[0]) ** 2
    t = time_grid(T, eps, cfg.time_ratio, layer_scale=mu_init**2)
    bg = evolve_background(Z0, t, xgrid, cfg.outer_substeps)
    ygrid = inner_grid(cfg.R, M=cfg.inner_M)
    op = build_inner_operator(cfg.R, grid=ygrid)
    vec6, I6 = projection_vectors(ygrid, None)[6]
    return Setup(cfg, t, xgrid, ygrid, bg, op, HeatStepper(xgrid), Zq0, vec6, I6)


# ---------------------------------------------------------------------------
# inner source and the dilation law

def _coupling_field(setup: Setup, psi, mu, lam):
    """Z*_0(q) + lam (Z* + psi - Z*_0(q)) at x = mu y on the inner nodes, shape (nt, ny)."""
    y = setup.ygrid.nodes
    x = mu[:, None] * y[None, :]
    zs = _sample_outer(setup.xgrid, setup.background.Zstar, x)
    ps = _sample_outer(setup.xgrid, psi, x)
    return setup.Zq0 + lam * (zs - setup.Zq0 + ps)


def _integrate_from_end(t: np.ndarray, f: np.ndarray, T: float) -> np.ndarray:
    """int_t^{t_end} f ds, with f e^{sigma} splined in sigma = log(T - s)."""
    sig = np.log(T - t)[::-1]
    cs = CubicSpline(sig, (f * (T - t))[::-1])
    anti = cs.antiderivative()
    return (anti(sig) - anti(sig[0]))[::-1]


def solve_dilation(setup: Setup, psi: np.ndarray, lam: float, mu_guess: np.ndarray,
                   max_sweeps: int = 30, rtol: float = 1e-14):
    """mu with c_6[H] = 0 at every time:  mu' = -mu^{1/2} J / I6,  J = <p U^{p-1} coupling, Z_6>.

    The terminal datum takes J constant on [T - eps, T] so that mu vanishes at T.
    Returns (mu, mu_dot, J).
    """
    t, T, eps = setup.t, setup.cfg.T, setup.cfg.eps
    pot = potential(setup.ygrid.nodes)
    mu = np.asarray(mu_guess, dtype=float).copy()
    for _ in range(max_sweeps):
        J = (_coupling_field(setup, psi, mu, lam) * pot[None, :]) @ setup.vec6
        f = J / (2.0 * setup.I6)
        if np.any(f <= 0):
            raise GluingDivergence("dilation law lost its sign: the coupling at q must stay negative")
        s = eps * f[-1] + _integrate_from_end(t, f, T)
        new = s * s
        change = float(np.max(np.abs(new - mu) / new))
        mu = new
        if change < rtol:
            break
    J = (_coupling_field(setup, psi, mu, lam) * pot[None, :]) @ setup.vec6
    mu_dot = -np.sqrt(mu) * J / setup.I6
    return mu, mu_dot, J


def assemble_H(setup: Setup, psi: np.ndarray, mu: np.ndarray, mu_dot: np.ndarray, lam: float = 1.0) -> ModeField:
    """H = mu^{3/2} p U^{p-1} (Z* + psi)(mu y, t) + E  (coupling scaled by lam about Z*_0(q))."""
    g = setup.ygrid
    pot = potential(g.nodes)
    coup = _coupling_field(setup, psi, mu, lam)
    E = error_E(g, setup.t, mu, mu_dot)
    m0 = mu[:, None] ** 1.5 * pot[None, :] * coup + E.mode0
    return ModeField(g, setup.t, m0, E.mode1)


# ---------------------------------------------------------------------------
# outer source

def _inner_on_outer(setup: Setup, phi: ModeField, mu: np.ndarray):
    y = setup.xgrid.nodes[None, :] / mu[:, None]
    f, fr = _sample_rows(setup.ygrid, phi.mode0, y, deriv=True)
    return y, f, fr


def assemble_G(setup: Setup, state: GluingState, lam: float | None = None):
    """Outer source G and its terms on the outer nodes; returns (G, terms, norms)."""
    lam = state.lam if lam is None else lam
    cfg = setup.cfg
    mu, mud = state.mu, state.mu_dot
    y, f, fr = _inner_on_outer(setup, state.phi, mu)
    eta, eta_r, lap_eta = cutoff_radial(y, cfg.R)
    Zs = setup.background.Zstar
    m = mu[:, None]
    md = mud[:, None]
    terms = {
        "g1": potential(y) * (1.0 - eta) * (Zs + state.psi) / m**2,
        "E": m**-2.5 * md * dilation_radial(y) * (1.0 - eta),
        "A": m**-3.5 * (lap_eta * f + 2.0 * eta_r * fr),
        "B": m**-2.5 * md * (1.5 * f * eta + y * (eta_r * f + eta * fr)),
    }
    phit = m**-1.5 * f * eta
    Umu = m**-1.5 * bubble_radial(y)
    terms["N"] = nonlinearity_N(Umu, Zs + phit + state.psi)
    G = lam * sum(terms.values())
    G[:, -1] = 0.0
    t = setup.t
    norms = {k: _outer_src_norm(v, setup, t) for k, v in terms.items()}
    norms["G"] = _outer_src_norm(G, setup, t)
    return G, terms, norms


def _outer_src_norm(g, setup: Setup, t) -> float:
    return float(np.max(np.abs(g) / source_weight(setup.xgrid, t, setup.cfg.T, setup.cfg.weights.a)))


# ---------------------------------------------------------------------------
# assembled solution and diagnostics

def assemble_solution(setup: Setup, state: GluingState) -> np.ndarray:
    """u = U_{mu,q} + Z* + mu^{-3/2} phi eta_R + psi on the outer nodes, shape (nt, nx)."""
    mu = state.mu
    y, f, _ = _inner_on_outer(setup, state.phi, mu)
    eta = cutoff_radial(y, setup.cfg.R)[0]
    m = mu[:, None]
    return m**-1.5 * (bubble_radial(y) + f * eta) + setup.background.Zstar + state.psi


def u_sup(setup: Setup, state: GluingState) -> np.ndarray:
    """||u(., t)||_inf, attained at q; evaluated without forming the full field."""
    return (state.mu**-1.5 * (ALPHA + state.phi.mode0[:, 0]) + setup.background.at_q + state.psi[:, 0])


def _inner_fd_terms(setup: Setup, phi: ModeField, H: ModeField, tau: np.ndarray):
    """(residual, term scale) of  Delta phi + p U^{p-1} phi + H - phi_tau  by finite differences."""
    g = setup.ygrid
    lap = radial_laplacian_fd(g, phi.mode0, 0)
    vphi = potential(g.nodes)[None, :] * phi.mode0
    dtau = np.gradient(phi.mode0, tau, axis=0, edge_order=2)
    return lap + vphi + H.mode0 - dtau, np.abs(lap) + np.abs(vphi) + np.abs(H.mode0) + np.abs(dtau)


def _outer_fd_terms(setup: Setup, psi: np.ndarray, G: np.ndarray):
    lap = radial_laplacian_fd(setup.xgrid, psi, 0)
    dt = np.gradient(psi, setup.t, axis=0, edge_order=2)
    return lap + G - dt, np.abs(lap) + np.abs(G) + np.abs(dt)


def residual_audit(setup: Setup, state: GluingState, tau: np.ndarray | None = None) -> dict:
    """Finite-difference residuals of the glued system, relative to the size of the equation terms.

    'inner' is the weighted residual of the inner equation on B_R after removing its Z_6
    component (the multiplier that keeps phi orthogonal on the ball, reported separately
    as 'multiplier'); 'outer' is the weighted residual of the outer heat equation for
    |x - q| >= mu (closer in, the outer grid spacing is below the floating-point resolution
    of psi).  Sources are rebuilt from the current state; the floors use the sources the
    linear solves were given, so they measure only the truncation error of the solvers.
    """
    cfg, T = setup.cfg, setup.cfg.T
    w = cfg.weights
    tau = tau if tau is not None else _tau(setup, state)
    g = setup.ygrid
    ball = g.nodes <= cfg.R
    wt_in = ((1.0 + g.nodes ** (2.0 + w.a))[None, :] / mu0(setup.t, T)[:, None] ** w.nu)[:, ball]
    z6 = dilation_radial(g.nodes)
    wt_out = 1.0 / source_weight(setup.xgrid, setup.t, T, w.a)
    keep = setup.xgrid.nodes[None, :] >= state.mu[:, None]
    keep[:, -1] = False
    H_now = assemble_H(setup, state.psi, state.mu, state.mu_dot, state.lam)
    G_now = assemble_G(setup, state)[0]

    def inner_rel(H):
        r, sc = _inner_fd_terms(setup, state.phi, H, tau)
        c = r @ setup.vec6 / setup.I6
        r = r - c[:, None] * z6[None, :]
        mult = float(np.max(np.abs(c) * np.abs(z6[0]) * wt_in[:, 0]))
        scale = np.max(sc[:, ball] * wt_in)
        return float(np.max(np.abs(r[:, ball]) * wt_in) / scale), mult / scale

    def outer_rel(G):
        r, sc = _outer_fd_terms(setup, state.psi, G)
        scale = np.max(np.where(keep, sc * wt_out, 0.0))
        return float(np.max(np.where(keep, np.abs(r) * wt_out, 0.0)) / scale) if scale > 0 else 0.0

    (inner, mult), (inner_floor, _) = inner_rel(H_now), inner_rel(state.H)
    out = {"inner": inner, "outer": outer_rel(G_now), "inner_floor": inner_floor,
           "outer_floor": outer_rel(state.G_eff), "multiplier": mult}
    out["total"] = max(out["inner"], out["outer"])
    out["floor"] = max(out["inner_floor"], out["outer_floor"])
    return out


def _tau(setup: Setup, state: GluingState) -> np.ndarray:
    return _trajectory(setup, state.mu, state.mu_dot).tau()


def _trajectory(setup: Setup, mu, mu_dot) -> BubbleTrajectory:
    t, T = setup.t, setup.cfg.T
    ms = mu_star(t, T, setup.Zq0)
    return BubbleTrajectory(t, T, ms, mu - ms, np.zeros((len(t), DIM)), mu_dot, np.zeros((len(t), DIM)))


# ---------------------------------------------------------------------------
# iteration

def _inner_update(setup: Setup, psi, mu_guess, lam):
    mu, mud, _ = solve_dilation(setup, psi, lam, mu_guess)
    H = assemble_H(setup, psi, mu, mud, lam)
    H_bar, _ = project_off_kernel(H, None)
    sol = solve_inner(H_bar, None, _trajectory(setup, mu, mud), setup.cfg.weights, setup.op)
    return mu, mud, H_bar, sol


def initial_state(setup: Setup, lam: float = 1.0) -> GluingState:
    """psi = 0, with mu and phi solved exactly against it."""
    t = setup.t
    nx = setup.xgrid.M + 1
    psi = np.zeros((len(t), nx))
    guess = mu_star(t, setup.cfg.T, setup.Zq0)
    mu, mud, H, sol = _inner_update(setup, psi, guess, lam)
    return GluingState(lam, mu, mud, psi, np.zeros_like(psi), sol.phi, H, sol.ell_star, 0)


def picard_step(setup: Setup, state: GluingState, damping: float | None = None) -> GluingState:
    """One damped sweep psi -> (mu, xi) -> phi."""
    th = setup.cfg.damping if damping is None else damping
    G = assemble_G(setup, state)[0]
    G_eff = (1.0 - th) * state.G_eff + th * G
    psi = setup.stepper.run(setup.t, G_eff, substeps=setup.cfg.outer_substeps)
    mu, mud, H, sol = _inner_update(setup, psi, state.mu, state.lam)
    return GluingState(state.lam, mu, mud, psi, G_eff, sol.phi, H, sol.ell_star, state.iteration + 1)


def state_norms(setup: Setup, state: GluingState) -> dict:
    cfg, T, t = setup.cfg, setup.cfg.T, setup.t
    s = T - t
    ms = mu_star(t, T, setup.Zq0)
    mu1 = state.mu - ms
    mud1 = state.mu_dot - mu_star_dot(t, T, setup.Zq0)
    return {
        "psi_inf": float(np.max(np.abs(state.psi))),
        "psi_outer": norm_outer_solution(state.psi, setup.xgrid, t, T, cfg.weights.a),
        "phi_star": norm_solution(state.phi, cfg.weights, T),
        "H_src": norm_source(state.H, cfg.weights, T),
        "mu1_rel": float(np.max(np.abs(mu1) / s**2)),
        "mu1_dot_rel": float(np.max(np.abs(mud1) / s)),
        "mu1_dot_inf": float(np.max(np.abs(mud1))),
        "xi1_rel": 0.0,
        "ell": float(state.ell),
    }


def _increment(setup: Setup, a: GluingState, b: GluingState) -> dict:
    cfg, T, t = setup.cfg, setup.cfg.T, setup.t
    dpsi = norm_outer_solution(b.psi - a.psi, setup.xgrid, t, T, cfg.weights.a)
    npsi = norm_outer_solution(b.psi, setup.xgrid, t, T, cfg.weights.a)
    dphi = norm_solution(b.phi - a.phi, cfg.weights, T)
    nphi = norm_solution(b.phi, cfg.weights, T)
    dmu = float(np.max(np.abs(b.mu - a.mu) / b.mu))
    out = {"psi": dpsi / max(npsi, 1e-300), "phi": dphi / max(nphi, 1e-300), "mu": dmu}
    out["max"] = max(out.values())
    return out


def _check_trust(cfg: GluingConfig, norms: dict):
    if not norms["mu1_dot_inf"] <= cfg.delta0:
        raise GluingDivergence(f"|mu1'| = {norms['mu1_dot_inf']:.3e} exceeds delta0 = {cfg.delta0:g}")
    if not norms["phi_star"] + norms["psi_inf"] <= cfg.delta1:
        raise GluingDivergence(
            f"||phi||_* + ||psi||_inf = {norms['phi_star'] + norms['psi_inf']:.3e} exceeds delta1 = {cfg.delta1:g}")


@dataclass(frozen=True, eq=False)
class RateFit:
    slope: float
    intercept: float
    rms: float
    n_points: int
    decades: float


def rate_fit(t, values, T: float, window: tuple | None = None) -> RateFit:
    """Least squares log|values| = slope log(T-t) + c over T-t in `window` (default (0, T/10])."""
    s = T - np.asarray(t, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    lo, hi = (0.0, T / 10.0) if window is None else window
    m = (s > lo) & (s <= hi * (1 + 1e-12)) & (v > 0)
    if m.sum() < 3:
        raise ValueError("fewer than three points in the fit window")
    X = np.log(s[m])
    coef = np.polyfit(X, np.log(v[m]), 1)
    rms = float(np.sqrt(np.mean((np.polyval(coef, X) - np.log(v[m])) ** 2)))
    return RateFit(float(coef[0]), float(coef[1]), rms, int(m.sum()), float(np.log10(s[m].max() / s[m].min())))


@dataclass(frozen=True, eq=False)
class GluingResult:
    setup: Setup
    state: GluingState
    history: list
    converged: bool
    mu_fit: RateFit
    u_fit: RateFit
    u_sup: np.ndarray
    type_ii: bool
    norms: dict
    audit: dict
    projections_max: float


def _iterate(setup: Setup, state: GluingState, cfg: GluingConfig, history: list):
    prev_inc = None
    for _ in range(cfg.max_iters):
        new = picard_step(setup, state)
        inc = _increment(setup, state, new)
        norms = state_norms(setup, new)
        _check_trust(cfg, norms)
        audit = residual_audit(setup, new)
        proj = float(np.max(np.abs(all_projections(new.H, None))) / max(np.max(np.abs(new.H.mode0)), 1e-300))
        rec = {"lam": new.lam, "iteration": new.iteration, "increment": inc["max"],
               "contraction": inc["max"] / prev_inc if prev_inc else float("nan"),
               "audit": audit["total"], "floor": audit["floor"], "projection": proj, **norms}
        history.append(rec)
        log.info("iter %d lam %.2f increment %.3e audit %.3e", new.iteration, new.lam, inc["max"], audit["total"])
        state = new
        if not np.isfinite(inc["max"]):
            raise GluingDivergence("non-finite Picard increment")
        if prev_inc is not None and new.iteration > 3 and inc["max"] > 2.0 * prev_inc:
            raise GluingDivergence(f"Picard increments growing ({inc['max']:.3e} after {prev_inc:.3e})")
        prev_inc = inc["max"]
        if inc["max"] < cfg.tol:
            return state, True
    return state, False


def _continuation(setup: Setup, cfg: GluingConfig, ramp, history: list):
    state, converged = None, False
    for lam in ramp:
        if state is None:
            state = initial_state(setup, lam)
        else:
            mu, mud, H, sol = _inner_update(setup, state.psi, state.mu, lam)
            state = replace(state, lam=lam, mu=mu, mu_dot=mud, H=H, phi=sol.phi, ell=sol.ell_star)
        state, converged = _iterate(setup, state, cfg, history)
    return state, converged


def run_gluing(cfg: GluingConfig | None = None, setup: Setup | None = None) -> GluingResult:
    """Solve the glued system by damped Picard iteration.

    If the iteration along `cfg.continuation` leaves the trust region, it is restarted
    along the lam-ramp `cfg.fallback_ramp` (empty disables the fallback).
    """
    cfg = cfg or GluingConfig()
    setup = setup or build_setup(cfg)
    history: list = []
    try:
        state, converged = _continuation(setup, cfg, cfg.continuation, history)
    except GluingDivergence as exc:
        if not cfg.fallback_ramp or tuple(cfg.fallback_ramp) == tuple(cfg.continuation):
            raise
        log.warning("Picard iteration failed (%s); restarting with the lam ramp %s", exc, cfg.fallback_ramp)
        history.append({"restart": str(exc)})
        state, converged = _continuation(setup, cfg, cfg.fallback_ramp, history)
    t, T = setup.t, cfg.T
    us = u_sup(setup, state)
    mu_fit = rate_fit(t, state.mu, T)
    u_fit = rate_fit(t, us, T)
    s = T - t
    last = s <= s[-1] * 10.0 * (1 + 1e-12)
    ind = s[last] ** 0.75 * us[last]
    type_ii = bool(np.all(np.diff(ind) > 0))
    audit = residual_audit(setup, state)
    proj = float(np.max(np.abs(all_projections(state.H, None))) / np.max(np.abs(state.H.mode0)))
    return GluingResult(setup, state, history, converged, mu_fit, u_fit, us, type_ii,
                        state_norms(setup, state), audit, proj)


def export_glue_csv(result: GluingResult, path) -> None:
    """Per-time summary: t, mu, mu_star, mu_dot, u_sup, psi(q), phi(0), Z*(q)."""
    import csv

    st, su = result.state, result.setup
    ms = mu_star(su.t, su.cfg.T, su.Zq0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mu", "mu_star", "mu_dot", "u_sup", "psi_q", "phi_0", "zstar_q"])
        for k in range(len(su.t)):
            w.writerow([repr(float(v)) for v in (su.t[k], st.mu[k], ms[k], st.mu_dot[k], result.u_sup[k],
                                                 st.psi[k, 0], st.phi.mode0[k, 0], su.background.at_q[k])])


def export_history_csv(result: GluingResult, path) -> None:
    """One row per Picard iteration (restart markers are skipped)."""
    import csv

    rows = [rec for rec in result.history if "iteration" in rec]
    keys = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for rec in rows:
            w.writerow([repr(float(rec[k])) for k in keys])
