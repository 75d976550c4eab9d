"""Unstable eigenpair of L0 = Delta + p U^{p-1} in R^5.

The top eigenvalue is computed with the finite-volume operator on a truncated
tan-mapped grid (Dirichlet at R_trunc), refined once and Richardson-extrapolated;
a Chebyshev collocation solve serves as the independent cross-check.  The
eigenfunction decays like r^{-2} e^{-sqrt(lambda0) r}; beyond a matching radius
it is continued by integrating the Riccati equation for (log Z0)' inward from far
out, which keeps the far tail accurate down to 1e-100 and below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eig, eigh_tridiagonal

from .grid import RadialGrid, radial_operator, tan_grid, zeta_derivatives
from .profile import potential


class SpectrumError(RuntimeError):
    """No positive eigenvalue, or a degenerate top eigenvalue."""


class DecayFitError(RuntimeError):
    """Decay fit residual too large (tail contaminated by truncation)."""


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Top eigenpair with Z0 sampled on `grid` and normalized to unit L^2 norm."""

    lambda0: float
    Z0: np.ndarray
    grid: RadialGrid
    decay_rate: float
    decay_power: float
    lambda_second: float
    gap: float
    R_trunc: float
    lambda_coarse: float
    lambda_fine: float
    lambda_cheb: float
    r_match: float
    log_match: float
    tail: object

    def log_Z0(self, r):
        """log Z0(r), from the interior profile for r <= r_match and the Riccati tail beyond."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inner = r <= self.r_match
        out[inner] = np.log(self.grid.interpolate(self.Z0, r[inner]))
        rr = r[~inner]
        out[~inner] = self.log_match + self._tail_log(rr) - self._tail_log(np.array([self.r_match]))[0]
        return out

    def _tail_log(self, r):
        sol, r_far = self.tail
        k = np.sqrt(self.lambda0)
        inside = r <= r_far
        out = np.empty_like(r)
        out[inside] = sol(r[inside])[1]
        ro = r[~inside]
        base = sol(np.array([r_far]))[1][0]
        out[~inside] = base - k * (ro - r_far) - 2.0 * np.log(ro / r_far) + np.log(
            (1.0 + 1.0 / (k * ro)) / (1.0 + 1.0 / (k * r_far))
        )
        return out

    def on_grid(self, grid: RadialGrid) -> np.ndarray:
        """Z0 sampled at the nodes of another grid (zero at infinite nodes)."""
        r = grid.nodes
        out = np.zeros_like(r)
        fin = np.isfinite(r)
        out[fin] = np.exp(self.log_Z0(r[fin]))
        return out


def fv_top_eigenvalues(R_trunc: float, M: int, L: float = 5.0, k: int = 2) -> np.ndarray:
    """Largest k eigenvalues (descending) of the finite-volume L0 on the Dirichlet ball."""
    op = radial_operator(tan_grid(M, L=L, r_max=R_trunc), 0, potential)
    d, e = op.symmetric_tridiagonal()
    w = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(op.n - k, op.n - 1))
    return w[::-1]


def _fv_eigvec(R_trunc: float, M: int, L: float, iters: int = 6):
    """Top eigenpair of the finite-volume operator by shifted inverse iteration."""
    grid = tan_grid(M, L=L, r_max=R_trunc)
    op = radial_operator(grid, 0, potential)
    d, e = op.symmetric_tridiagonal()
    n = op.n
    w = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(n - 2, n - 1))
    lam_top, lam_2 = w[1], w[0]
    shift = lam_top + 1e-3 * (lam_top - lam_2)
    v = np.exp(-np.minimum(grid.nodes[:n], 50.0))
    lam = lam_top
    for _ in range(iters):
        v = op.solve_shifted(-shift, -1.0, v)
        v /= np.sqrt(np.sum(op.w * v * v))
        lam = float(np.sum(op.w * v * op.apply(v)))
    if v[0] < 0:
        v = -v
    return grid, op.embed(v), lam, lam_2


def _cheb(N: int):
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.r_[2.0, np.ones(N - 1), 2.0] * (-1.0) ** np.arange(N + 1)
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return D, x


def collocation_eigenvalue(N: int = 121, R_trunc: float = 40.0, L: float = 3.0) -> float:
    """Top eigenvalue by Chebyshev collocation of the even extension on [-R, R].

    Nodes r = L tan(theta x) with x the Chebyshev points (N odd, so r = 0 is not a
    node); the even symmetry folds the matrix to the positive half.
    """
    if N % 2 == 0:
        raise ValueError("N must be odd")
    D, x = _cheb(N)
    th = np.arctan(R_trunc / L)
    r = L * np.tan(th * x)
    drdx = L * th / np.cos(th * x) ** 2
    d2rdx2 = 2.0 * L * th**2 * np.tan(th * x) / np.cos(th * x) ** 2
    Dr = D / drdx[:, None]
    D2r = (D @ D) / drdx[:, None] ** 2 - (d2rdx2 / drdx**3)[:, None] * D
    A = D2r + (4.0 / r)[:, None] * Dr + np.diag(potential(r))
    A = A[1:-1, 1:-1]
    idx = np.arange(1, N)
    pos = idx[x[idx] > 0]
    neg = idx[x[idx] < 0][::-1]
    B = (A[:, pos - 1] + A[:, neg - 1])[pos - 1]
    w = eig(B, right=False)
    return float(np.max(w.real))


def _riccati_tail(lam: float, r_match: float, r_far: float):
    """Dense solution of (w, log Z) with w = (log Z)', integrated inward from r_far."""
    k = np.sqrt(lam)

    def rhs(r, y):
        w = y[0]
        return [-w * w - 4.0 * w / r - potential(r) + lam, w]

    w_far = -k - 2.0 / r_far - 1.0 / (k * r_far**2) / (1.0 + 1.0 / (k * r_far))
    sol = solve_ivp(rhs, (r_far, r_match), [w_far, 0.0], method="DOP853",
                    rtol=1e-12, atol=1e-12, dense_output=True)
    if not sol.success:
        raise SpectrumError(f"tail integration failed: {sol.message}")
    return sol.sol


def solve_eigenpair(
    grid: RadialGrid | None = None,
    R_trunc: float | None = None,
    M: int = 2000,
    L: float = 5.0,
    r_match: float = 8.0,
    r_far: float = 120.0,
    tol_exp: float = 1e-10,
    cheb_N: int = 121,
) -> EigenPair:
    """Top eigenpair of L0, sampled on `grid` (default: tan grid to r = 100).

    R_trunc is enlarged by 1.5x until exp(-sqrt(lambda0) R_trunc) < tol_exp.
    """
    grid = grid or tan_grid(800, L=10.0, r_max=100.0)
    R = R_trunc or 12.0
    while True:
        gc, vc, lam_c, _ = _fv_eigvec(R, M, L)
        gf, vf, lam_f, lam2 = _fv_eigvec(R, 2 * M, L)
        lam = (4.0 * lam_f - lam_c) / 3.0
        if lam <= 0:
            raise SpectrumError("no positive eigenvalue found")
        if np.exp(-np.sqrt(lam) * R) < tol_exp:
            break
        R *= 1.5
    gap = lam - lam2
    if gap <= 1e-6 * abs(lam):
        raise SpectrumError(f"top eigenvalue not simple (gap {gap:.3e})")

    r_match = min(r_match, 0.8 * R)
    # Richardson combination of the normalized discrete eigenvectors
    rin = grid.nodes[grid.nodes <= r_match]
    zc = gc.interpolate(vc, rin)
    zf = gf.interpolate(vf, rin)
    z_in = (4.0 * zf - zc) / 3.0
    z_m = (4.0 * gf.interpolate(vf, np.array([r_match])) - gc.interpolate(vc, np.array([r_match]))) / 3.0

    tail = (_riccati_tail(lam, r_match, r_far), r_far)
    proto = EigenPair(lam, np.zeros_like(grid.nodes), grid, np.nan, np.nan, lam2, gap, R,
                      lam_c, lam_f, np.nan, r_match, float(np.log(z_m[0])), tail)
    z = np.zeros_like(grid.nodes)
    inner = grid.nodes <= r_match
    z[inner] = z_in
    outer = (~inner) & np.isfinite(grid.nodes)
    z[outer] = np.exp(proto.log_Z0(grid.nodes[outer]))
    if np.any(z[np.isfinite(grid.nodes)] <= 0):
        raise SpectrumError("eigenfunction changes sign")
    # normalization: interior by grid quadrature plus the far tail
    norm2 = grid.integrate(z * z)
    z /= np.sqrt(norm2)
    log_shift = -0.5 * np.log(norm2)
    lam_cheb = collocation_eigenvalue(cheb_N) if cheb_N else np.nan
    pair = EigenPair(lam, z, grid, np.nan, np.nan, lam2, gap, R, lam_c, lam_f, lam_cheb,
                     r_match, proto.log_match + log_shift, tail)
    _, rate, power, _ = decay_fit(pair)
    return EigenPair(lam, z, grid, rate, power, lam2, gap, R, lam_c, lam_f, lam_cheb,
                     r_match, pair.log_match, tail)


def fit_decay(r, logz, max_rms: float = 1e-3):
    """Least squares log z = log A - rate r - power log r; returns (A, rate, power, rms)."""
    r = np.asarray(r, dtype=float)
    logz = np.asarray(logz, dtype=float)
    X = np.column_stack([np.ones_like(r), -r, -np.log(r)])
    coef, *_ = np.linalg.lstsq(X, logz, rcond=None)
    rms = float(np.sqrt(np.mean((X @ coef - logz) ** 2)))
    if rms > max_rms:
        raise DecayFitError(f"decay fit rms {rms:.2e} exceeds {max_rms:g}")
    return float(np.exp(coef[0])), float(coef[1]), float(coef[2]), rms


def decay_fit(pair: EigenPair, window=(20.0, 60.0), n: int = 400):
    """Fit of log Z0 on the window; returns (amplitude, rate, power, rms)."""
    r = np.linspace(window[0], window[1], n)
    return fit_decay(r, pair.log_Z0(r))


def rayleigh_quotient(pair: EigenPair) -> float:
    """(int -|Z0'|^2 + p U^{p-1} Z0^2) / int Z0^2 on the sampling grid."""
    g = pair.grid
    d1, _ = zeta_derivatives(g, pair.Z0, parity=1)
    num = g.integrate(-d1 * d1 + potential(g.nodes) * pair.Z0**2)
    return float(num / g.integrate(pair.Z0**2))


def export_eigenpair_csv(pair: EigenPair, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "Z0"])
        for r, z in zip(pair.grid.nodes, pair.Z0):
            if np.isfinite(r):
                w.writerow([repr(float(r)), repr(float(z))])
