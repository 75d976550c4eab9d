"""Inner linear problem  mu^2 phi_t = Delta phi + p U^{p-1} phi + h  on the ball B_2R.

Discretization.  The finite-volume operator A (Dirichlet on |y| = 2R) is
restricted to the subspace of profiles orthogonal to the kernel direction of
their harmonic sector (Z_6 for degree 0, d_i U for degree 1), using the same
quadrature weights as the projections c_j.  The restricted operator is
symmetric in the cell-volume inner product and is diagonalized once per grid.
This keeps the kernel projections of phi at roundoff level at every step
(the discrete counterpart of re-projecting after each step).

In the rescaled time tau = int_0^t mu^{-2} ds each stable mode is advanced by
variable-step BDF2.  The single unstable mode (eigenvalue ~ lambda0 on the ball)
is evaluated through its bounded backward representation, which is the solution
started from the amplitude l* returned alongside; a supplied l that differs from
l* adds the exponentially growing term (l - l*) e^{lambda tau}, which is reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DIM, ModeField, RadialGrid, radial_operator, tan_grid, zeta_derivatives
from .modulation import BubbleTrajectory, _phi1, _phi2, kernel_profiles, projection_vectors, tau_map
from .profile import potential


class InnerDivergence(RuntimeError):
    """Unstable mode not canceled: the supplied l does not match the bounded solution."""


@dataclass(frozen=True)
class WeightSpec:
    a: float = 0.5
    nu: float = 1.5
    R: float = 40.0

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise ValueError("a must lie in (0, 1)")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.R >= 10:
            raise ValueError("R must be at least 10")


def inner_grid(R: float, M: int = 480, L: float = 10.0) -> RadialGrid:
    """Tan-mapped grid on the ball of radius 2R."""
    return tan_grid(M, L=L, r_max=2.0 * R)


def mu0(t, T: float):
    return (T - np.asarray(t, dtype=float)) ** 2


# ---------------------------------------------------------------------------
# norms

def source_weight(grid: RadialGrid, t, T: float, w: WeightSpec) -> np.ndarray:
    r = grid.nodes
    return (1.0 + r ** (2.0 + w.a))[None, :] / mu0(t, T)[:, None] ** w.nu


def solution_weight(grid: RadialGrid, t, T: float, w: WeightSpec) -> np.ndarray:
    r = grid.nodes
    return (1.0 + r**6)[None, :] / (mu0(t, T)[:, None] ** w.nu * w.R ** (6.0 - w.a))


def norm_source(h: ModeField, w: WeightSpec, T: float) -> float:
    """max |h| (1+|y|^{2+a}) / mu0^nu over the grid."""
    return float(np.max(h.pointwise_sup() * source_weight(h.grid, h.t, T, w)))


def norm_solution(phi: ModeField, w: WeightSpec, T: float) -> float:
    """max |phi| (1+|y|^6) / (mu0^nu R^{6-a}) over the grid."""
    return float(np.max(phi.pointwise_sup() * solution_weight(phi.grid, phi.t, T, w)))


def gradient_sup(phi: ModeField) -> np.ndarray:
    """Bound |m0'| + |m1'| + |m1|/r for sup_{|y|=r} |grad phi| (exact for radial fields)."""
    g = phi.grid
    d0 = g.derivative(phi.mode0)
    d1 = g.derivative(phi.mode1)
    r = g.nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        ang = np.where(r > 0, np.linalg.norm(phi.mode1, axis=1) / np.where(r > 0, r, 1.0), 0.0)
    ang[:, 0] = np.linalg.norm(d1[:, :, 0], axis=1)
    return np.abs(d0) + np.linalg.norm(d1, axis=1) + ang


def norm_gradient(phi: ModeField, w: WeightSpec, T: float) -> float:
    """|| (1+|y|) grad phi ||_{*a,nu}."""
    g = phi.grid
    return float(np.max((1.0 + g.nodes)[None, :] * gradient_sup(phi) * solution_weight(g, phi.t, T, w)))


# ---------------------------------------------------------------------------
# kernel projection

def project_off_kernel(h: ModeField, R: float | None = None):
    """h_bar = h - sum_j c_j[h] Z_j; returns (h_bar, coeffs of shape (nt, 6))."""
    vecs = projection_vectors(h.grid, R)
    Z = kernel_profiles(h.grid)
    c6 = h.mode0 @ vecs[6][0] / vecs[6][1]
    c1 = np.einsum("tin,n->ti", h.mode1, vecs[1][0]) / vecs[1][1]
    m0 = h.mode0 - c6[:, None] * Z[6][None, :]
    m1 = h.mode1 - c1[:, :, None] * Z[1][None, None, :]
    return ModeField(h.grid, h.t, m0, m1), np.column_stack([c1, c6])


# ---------------------------------------------------------------------------
# constrained operator

@dataclass(frozen=True, eq=False)
class SectorBasis:
    """cv-orthonormal eigenbasis of the constrained operator for one harmonic degree."""

    degree: int
    idx: np.ndarray  # active node indices
    lam: np.ndarray  # eigenvalues, descending
    modes: np.ndarray  # (n_active, n_modes), columns are cv-orthonormal profiles
    wts: np.ndarray  # cv weights on the active nodes (times angular measure)
    constraint: np.ndarray  # quadrature vector on the active nodes

    def coefficients(self, prof: np.ndarray) -> np.ndarray:
        """Mode coefficients of full-node profiles (last axis)."""
        return (prof[..., self.idx] * self.wts) @ self.modes

    def synthesize(self, coef: np.ndarray, nr: int) -> np.ndarray:
        out = np.zeros(coef.shape[:-1] + (nr,))
        out[..., self.idx] = coef @ self.modes.T
        return out


def _householder_complement(d: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of the unit vector d."""
    n = len(d)
    e = np.zeros(n)
    e[0] = 1.0
    v = d + np.sign(d[0] if d[0] != 0 else 1.0) * e
    v /= np.linalg.norm(v)
    H = np.eye(n) - 2.0 * np.outer(v, v)
    return H[:, 1:]


def sector_basis(grid: RadialGrid, degree: int, R: float | None = None, constrained: bool = True) -> SectorBasis:
    op = radial_operator(grid, degree, potential)
    d_, e_ = op.symmetric_tridiagonal()
    S = np.diag(d_) + np.diag(e_, 1) + np.diag(e_, -1)
    sw = np.sqrt(op.w)
    vecs = projection_vectors(grid, R)
    j = 6 if degree == 0 else 1
    c = vecs[j][0][op.idx]
    if constrained:
        dvec = c / sw
        dvec /= np.linalg.norm(dvec)
        Q = _householder_complement(dvec)
        lam, V = np.linalg.eigh(Q.T @ S @ Q)
        E = Q @ V
    else:
        lam, E = np.linalg.eigh(S)
    order = np.argsort(lam)[::-1]
    lam, E = lam[order], E[:, order]
    modes = E / sw[:, None]
    # Perron-type sign convention: positive at the first active node
    s = np.sign(modes[0, :])
    s[s == 0] = 1.0
    modes = modes * s
    return SectorBasis(degree, op.idx, lam, modes, op.w, c)


@dataclass(frozen=True, eq=False)
class InnerOperator:
    grid: RadialGrid
    R: float
    sectors: dict

    @property
    def lambda_unstable(self) -> float:
        return float(self.sectors[0].lam[0])

    @property
    def unstable_profile(self) -> np.ndarray:
        """Discrete unstable eigenvector of the ball (unit cv-norm, positive at the origin)."""
        s = self.sectors[0]
        return s.synthesize(np.eye(len(s.lam))[0], self.grid.M + 1)


def build_inner_operator(R: float, grid: RadialGrid | None = None, M: int = 480, L: float = 10.0) -> InnerOperator:
    grid = grid or inner_grid(R, M=M, L=L)
    sectors = {deg: sector_basis(grid, deg, R=None) for deg in (0, 1)}
    if sectors[0].lam[0] <= 0 or sectors[0].lam[1] >= 0:
        raise RuntimeError("constrained inner operator must have exactly one positive eigenvalue")
    if sectors[1].lam[0] >= 0:
        raise RuntimeError("degree-1 constrained operator must be negative definite")
    return InnerOperator(grid, R, sectors)


# ---------------------------------------------------------------------------
# time stepping

def _bdf2(times, lam, b, a0, coef=None):
    """Variable-step BDF2 for a' = c(t) (lam a + b) with c = coef (default 1).

    times (nt,), lam (m,), b (nt, ..., m), a0 (..., m); first step backward Euler.
    """
    nt = len(times)
    a = np.empty((nt,) + a0.shape)
    a[0] = a0
    c = np.ones(nt) if coef is None else coef
    for n in range(nt - 1):
        dt = times[n + 1] - times[n]
        cn = c[n + 1]
        if n == 0:
            a[1] = (a[0] + dt * cn * b[1]) / (1.0 - dt * cn * lam)
            continue
        om = dt / (times[n] - times[n - 1])
        g0 = (1.0 + 2.0 * om) / (1.0 + om)
        rhs = (1.0 + om) * a[n] - om * om / (1.0 + om) * a[n - 1] + dt * cn * b[n + 1]
        a[n + 1] = rhs / (g0 - dt * cn * lam)
    return a


def _bounded_unstable(tau, lam, b):
    """p(tau_i) = -int_{tau_i}^inf e^{-lam (s - tau_i)} b(s) ds, b piecewise linear then constant."""
    nt = len(tau)
    p = np.empty(b.shape)
    p[-1] = -b[-1] / lam
    d = np.diff(tau)
    z = lam * d
    with np.errstate(over="ignore", under="ignore"):
        decay = np.exp(-z)
    f1, f2 = _phi1(z), _phi2(z)
    # int_0^d e^{-lam s} (b_i + (b_{i+1}-b_i) s/d) ds = d (b_i phi1 + (b_{i+1}-b_i) phi2)
    for i in range(nt - 2, -1, -1):
        p[i] = decay[i] * p[i + 1] - d[i] * (b[i] * f1[i] + (b[i + 1] - b[i]) * f2[i])
    return p


@dataclass(frozen=True, eq=False)
class InnerSolution:
    phi: ModeField
    ell: float
    ell_star: float
    tau: np.ndarray
    norms: dict
    unstable_excess: float
    orth_drift: float
    diverged: bool = False
    extra: dict = field(default_factory=dict)


def solve_inner(
    h_bar: ModeField,
    ell: float | None,
    traj: BubbleTrajectory,
    w: WeightSpec,
    op: InnerOperator | None = None,
    z0_init: np.ndarray | None = None,
    time_variable: str = "tau",
    unstable: str = "exact",
    ell_rtol: float = 1e-6,
    on_divergence: str = "raise",
    bound: float | None = None,
) -> InnerSolution:
    """Solve the inner problem with phi(., 0) = ell Z0 and return phi with its norms.

    ell = None selects the bounded amplitude l* computed by the solver.  `z0_init`
    defaults to the discrete unstable eigenvector of the ball (unit cv-norm).
    """
    op = op or build_inner_operator(w.R, grid=h_bar.grid)
    grid = op.grid
    if grid is not h_bar.grid and grid.M != h_bar.grid.M:
        raise ValueError("source must live on the operator grid")
    T = traj.T
    t = np.asarray(h_bar.t, dtype=float)
    if len(t) != len(traj.t) or np.any(np.abs(t - traj.t) > 1e-14 * T):
        raise ValueError("source and trajectory must share the time grid")
    tau = tau_map(traj.t, traj.mu, T)
    nr = grid.M + 1
    s0, s1 = op.sectors[0], op.sectors[1]
    lam0 = s0.lam[0]

    b0 = s0.coefficients(h_bar.mode0)  # (nt, m0)
    b1 = s1.coefficients(h_bar.mode1)  # (nt, 5, m1)
    if z0_init is None:
        z0_coef = np.zeros(len(s0.lam))
        z0_coef[0] = 1.0
    else:
        z0_coef = s0.coefficients(np.asarray(z0_init, dtype=float))
    z0_unit = z0_coef[0]

    coef_t = 1.0 / traj.mu**2
    tt = tau if time_variable == "tau" else t
    cc = None if time_variable == "tau" else coef_t
    if time_variable not in ("tau", "t"):
        raise ValueError("time_variable must be 'tau' or 't'")

    # the bounded unstable component fixes l*; stable modes are stepped with BDF2
    p_star = _bounded_unstable(tau, lam0, b0[:, 0])
    ell_star = float(p_star[0] / z0_unit)
    ell_in = ell_star if ell is None else float(ell)
    lo = 1 if unstable == "exact" else 0
    a0 = np.zeros_like(b0)
    a0[:, lo:] = _bdf2(tt, s0.lam[lo:], b0[:, lo:], ell_in * z0_coef[lo:], cc)
    grow = np.zeros_like(tau)
    if unstable == "exact":
        a0[:, 0] = p_star
        gap = (ell_in - ell_star) * z0_unit
        scale = max(abs(p_star[0]), np.max(np.abs(p_star)), 1e-300)
        if abs(gap) > ell_rtol * scale:
            with np.errstate(over="ignore"):
                grow = gap * np.exp(lam0 * tau)
    a1 = _bdf2(tt, s1.lam, b1, np.zeros(b1.shape[1:]), cc)

    m0 = s0.synthesize(a0, nr)
    m1 = s1.synthesize(a1, nr)
    phi = ModeField(grid, t, m0, m1)
    norms = {"phi": norm_solution(phi, w, T), "grad": norm_gradient(phi, w, T)}
    diverged = bool(np.any(grow != 0))
    excess = 0.0
    if diverged:
        u0 = s0.synthesize(np.eye(len(s0.lam))[0], nr)
        with np.errstate(invalid="ignore", over="ignore"):
            m0 = m0 + grow[:, None] * u0[None, :]
            phi = ModeField(grid, t, m0, m1)
            excess = norm_solution(ModeField(grid, t, grow[:, None] * u0[None, :], np.zeros_like(m1)), w, T)
        lim = 1e6 * (bound if bound is not None else max(norms["phi"], 1e-300))
        if on_divergence == "raise" and not excess <= lim:
            raise InnerDivergence(
                f"unstable mode not canceled: |l - l*| = {abs(ell_in - ell_star):.3e}, growth norm {excess:.3e}")
        if np.all(np.isfinite(m0)):
            norms = {"phi": norm_solution(phi, w, T), "grad": norm_gradient(phi, w, T)}
        else:
            norms = {"phi": np.inf, "grad": np.inf}

    # orthogonality drift relative to the L^2 size of phi
    c6 = m0 @ s0_full(s0, nr)
    c1 = np.einsum("tin,n->ti", m1, s0_full(s1, nr))
    l2 = np.sqrt(np.sum(a0**2, axis=-1) + grow**2 + np.sum(a1**2, axis=(-1, -2))) + 1e-300
    znorm0 = np.sqrt(np.sum(s0.constraint**2 / s0.wts))
    znorm1 = np.sqrt(np.sum(s1.constraint**2 / s1.wts))
    with np.errstate(invalid="ignore"):
        drift = float(max(np.max(np.abs(c6) / (l2 * znorm0)), np.max(np.abs(c1) / (l2[:, None] * znorm1))))
    return InnerSolution(phi, ell_in, ell_star, tau, norms, excess, drift, diverged,
                         {"lambda_unstable": float(lam0)})


def s0_full(sector: SectorBasis, nr: int) -> np.ndarray:
    out = np.zeros(nr)
    out[sector.idx] = sector.constraint
    return out


# ---------------------------------------------------------------------------
# contract measurement

def sample_sources(grid: RadialGrid, t, T: float, w: WeightSpec, n: int = 4, seed: int = 0) -> list:
    """Seeded smooth sources of unit-order ||.||_{2+a,nu} norm, projected off the kernel.

    The first sample is the norm-saturating profile mu0^nu / (1+|y|^{2+a}); the
    others modulate it by 1 + 0.8 cos(omega |y|/R + phase) and a slow time factor, and
    odd-numbered ones carry a degree-1 part of the same decay.
    """
    rng = np.random.default_rng(seed)
    r = grid.nodes
    t = np.asarray(t, dtype=float)
    m0t = mu0(t, T) ** w.nu
    out = []
    for k in range(n):
        om = rng.uniform(1.0, 6.0)
        ph = rng.uniform(0, 2 * np.pi)
        ft = 1.0 + 0.5 * np.sin(rng.uniform(1, 6) * np.pi * t / T + ph)
        if k == 0:
            ft = np.ones_like(t)
            prof = 1.0 / (1.0 + r ** (2.0 + w.a))
        else:
            prof = (1.0 + 0.8 * np.cos(om * r / w.R + ph)) / (1.0 + r ** (2.0 + w.a))
        m0 = m0t[:, None] * ft[:, None] * prof[None, :]
        m1 = np.zeros((len(t), DIM, grid.M + 1))
        if k % 2:
            dirn = rng.normal(size=DIM)
            dirn /= np.linalg.norm(dirn)
            prof1 = r / (1.0 + r) * np.sin(om * r / w.R + ph) / (1.0 + r ** (2.0 + w.a))
            m1 = (m0t * ft)[:, None, None] * dirn[None, :, None] * prof1[None, None, :]
        h, _ = project_off_kernel(ModeField(grid, t, m0, m1))
        out.append(h)
    return out


def measure_Tin_constant(w: WeightSpec, sample_sources: list, traj: BubbleTrajectory,
                         op: InnerOperator | None = None) -> tuple[float, list]:
    """max over samples of (|l| + ||(1+|y|) grad phi||_* + ||phi||_*) / ||h||_{2+a,nu}."""
    if not sample_sources:
        raise ValueError("need at least one sample source")
    op = op or build_inner_operator(w.R, grid=sample_sources[0].grid)
    ratios = []
    for h in sample_sources:
        sol = solve_inner(h, None, traj, w, op=op)
        hn = norm_source(h, w, traj.T)
        ratios.append((abs(sol.ell) + sol.norms["grad"] + sol.norms["phi"]) / hn)
    return float(max(ratios)), ratios


def elliptic_solve(op: InnerOperator, h_bar: np.ndarray, degree: int = 0) -> np.ndarray:
    """Solve A phi + h = 0 on the ball with the kernel constraint (bordered sparse system)."""
    from scipy.sparse import bmat, csr_matrix, diags
    from scipy.sparse.linalg import spsolve

    fv = radial_operator(op.grid, degree, potential)
    A = diags([fv.lower, fv.diag, fv.upper], [-1, 0, 1], format="csr")
    c = op.sectors[degree].constraint
    v = c / fv.w  # cv-orthogonal complement direction of the constraint
    K = bmat([[A, csr_matrix(v[:, None])], [csr_matrix(c[None, :]), None]], format="csc")
    rhs = np.r_[-h_bar[fv.idx], 0.0]
    sol = spsolve(K, rhs)
    return fv.embed(sol[:-1])


def export_snapshots_csv(sol: InnerSolution, path, indices=None) -> None:
    import csv

    phi = sol.phi
    idx = range(phi.nt) if indices is None else indices
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "r", "phi_mode0", "phi_mode1"])
        for k in idx:
            m1 = np.linalg.norm(phi.mode1[k], axis=0)
            for j, r in enumerate(phi.grid.nodes):
                wr.writerow([repr(float(phi.t[k])), repr(float(r)), repr(float(phi.mode0[k, j])), repr(float(m1[j]))])
