import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critheat.grid import ModeField
from critheat.inner import (InnerDivergence, WeightSpec, build_inner_operator, elliptic_solve, gradient_sup,
                            export_snapshots_csv, inner_grid, measure_Tin_constant, mu0, norm_gradient, norm_solution,
                            norm_source, project_off_kernel, sample_sources, solve_inner)
from critheat.modulation import BubbleTrajectory, all_projections, kernel_profiles
from critheat.spectrum import fv_top_eigenvalues

T = 0.05
LAMBDA_BALL_FROZEN = 5.745998021173097  # constrained unstable eigenvalue of the discrete ball, R = 40
H4_SUP_FROZEN = 1.138100946674094  # max_r (1 + r^2.5)/(1 + r^4)
TIN_FROZEN = {20: 3.6130881660431875, 40: 4.3712123821381, 80: 5.083986179020047}


def _const_traj(nt=401, tau_end=2.0):
    t = np.linspace(0.0, tau_end, nt)
    z = np.zeros_like(t)
    return BubbleTrajectory(t, 10.0 * tau_end, np.ones_like(t), z, np.zeros((nt, 5)), z, np.zeros((nt, 5)))


def _mode0_field(grid, t, prof):
    return ModeField(grid, t, np.tile(prof, (len(t), 1)), np.zeros((len(t), 5, grid.M + 1)))


def test_weight_spec_validation():
    with pytest.raises(ValueError):
        WeightSpec(a=1.0)
    with pytest.raises(ValueError):
        WeightSpec(nu=0.0)
    with pytest.raises(ValueError):
        WeightSpec(R=5.0)
    assert WeightSpec().nu == 1.5


def test_norm_source_examples(inner_traj, weights, inner_op):
    g, t = inner_op.grid, inner_traj.t
    r = g.nodes
    m = mu0(t, T)[:, None] ** weights.nu
    h = ModeField(g, t, m / (1 + r ** (2 + weights.a))[None, :], np.zeros((len(t), 5, g.M + 1)))
    assert norm_source(h, weights, T) == pytest.approx(1.0, rel=1e-13)
    assert norm_source(ModeField.zeros(g, t), weights, T) == 0.0
    # for a faster-decaying profile the weighted sup is the nodal max of the weight ratio,
    # attained near |y| = 0.8 (the ratio at the grid edge is O(r_max^{a-2}))
    h4 = ModeField(g, t, m / (1 + r**4)[None, :], np.zeros((len(t), 5, g.M + 1)))
    ratio = (1 + r ** (2 + weights.a)) / (1 + r**4)
    assert norm_source(h4, weights, T) == pytest.approx(np.max(ratio), rel=1e-12)
    assert norm_source(h4, weights, T) == pytest.approx(H4_SUP_FROZEN, rel=1e-4)
    assert ratio[-1] == pytest.approx(r[-1] ** (weights.a - 2), rel=1e-3)


def test_norm_solution_examples(inner_traj, weights, inner_op):
    g, t = inner_op.grid, inner_traj.t
    r = g.nodes
    m = mu0(t, T)[:, None] ** weights.nu
    R = weights.R
    phi = ModeField(g, t, m * R ** (6 - weights.a) / (1 + r**6)[None, :], np.zeros((len(t), 5, g.M + 1)))
    assert norm_solution(phi, weights, T) == pytest.approx(1.0, rel=1e-13)
    assert norm_solution(ModeField.zeros(g, t), weights, T) == 0.0
    # a-decay profile mu0^nu/(1+|y|^a) at |y| = R
    val = (1 + R**6) / (R ** (6 - weights.a) * (1 + R**weights.a))
    assert val <= 1.0 + 1e-12


def test_gradient_norm_radial_exact(inner_traj, weights, inner_op):
    g, t = inner_op.grid, inner_traj.t[:3]
    r = g.nodes
    phi = _mode0_field(g, t, np.exp(-r * r / 16))
    assert np.allclose(gradient_sup(phi)[0], r / 8 * np.exp(-r * r / 16), rtol=0, atol=1e-6)
    assert norm_gradient(phi, weights, T) > 0


def test_project_off_kernel_examples(inner_op):
    g = inner_op.grid
    Z = kernel_profiles(g)
    t = np.zeros(1)
    m1 = np.zeros((1, 5, g.M + 1))
    m1[0, 2] = Z[3]
    hb, c = project_off_kernel(ModeField(g, t, np.zeros((1, g.M + 1)), m1))
    assert np.max(np.abs(hb.mode1)) < 1e-12 * np.max(np.abs(Z[3]))
    assert c[0, 2] == pytest.approx(1.0, rel=1e-13)
    rng = np.random.default_rng(7)
    h = ModeField(g, t, rng.normal(size=(1, g.M + 1)) * np.exp(-g.nodes / 8), rng.normal(size=(1, 5, g.M + 1)))
    hb, _ = project_off_kernel(h)
    hb2, c2 = project_off_kernel(hb)
    assert np.max(np.abs(c2)) < 1e-12
    assert np.allclose(hb2.mode0, hb.mode0, rtol=0, atol=1e-13)


def test_zero_data_zero_solution(inner_traj, weights, inner_op):
    sol = solve_inner(ModeField.zeros(inner_op.grid, inner_traj.t), 0.0, inner_traj, weights, inner_op)
    assert np.all(sol.phi.mode0 == 0) and np.all(sol.phi.mode1 == 0)
    assert sol.ell_star == 0.0 and not sol.diverged


def test_ball_eigenvalue(inner_op):
    assert inner_op.lambda_unstable == pytest.approx(LAMBDA_BALL_FROZEN, rel=1e-10)
    # the unconstrained ball eigenvalue converges to lambda0 as the ball grows
    assert fv_top_eigenvalues(80.0, 4000)[0] == pytest.approx(5.730285414259086, rel=2e-5)


def test_growth_rate_matches_ball_eigenvalue(weights, inner_op):
    traj = _const_traj()
    zero = ModeField.zeros(inner_op.grid, traj.t)
    sol = solve_inner(zero, 1.0, traj, weights, inner_op, unstable="step", on_divergence="ignore")
    g = inner_op.grid
    nrm = np.sqrt(np.sum(g.cv * sol.phi.mode0**2, axis=1))
    rate = np.polyfit(sol.tau[100:], np.log(nrm[100:]), 1)[0]
    assert rate == pytest.approx(inner_op.lambda_unstable, rel=1e-2)


def test_unbounded_amplitude_is_reported(weights, inner_op):
    traj = _const_traj(401, 10.0)
    zero = ModeField.zeros(inner_op.grid, traj.t)
    with pytest.raises(InnerDivergence):
        solve_inner(zero, 1.0, traj, weights, inner_op, bound=1e-12)
    sol = solve_inner(zero, 1.0, traj, weights, inner_op, on_divergence="ignore")
    assert sol.diverged and sol.unstable_excess > 0


def test_elliptic_limit(inner_traj, weights, inner_op):
    g = inner_op.grid
    r = g.nodes
    t = inner_traj.t
    hb, _ = project_off_kernel(_mode0_field(g, t, np.exp(-r / 5) * (1 - r * r / 50)))
    sol = solve_inner(hb, None, inner_traj, weights, inner_op)
    el = elliptic_solve(inner_op, hb.mode0[0])
    diff = ModeField(g, t[-1:], sol.phi.mode0[-1:] - el[None, :], np.zeros((1, 5, g.M + 1)))
    ref = ModeField(g, t[-1:], el[None, :], np.zeros((1, 5, g.M + 1)))
    assert norm_solution(diff, weights, T) / norm_solution(ref, weights, T) < 1e-4


def test_tau_and_t_paths_agree(inner_traj, weights, inner_op):
    h = sample_sources(inner_op.grid, inner_traj.t, T, weights, n=2, seed=0)[1]
    a = solve_inner(h, None, inner_traj, weights, inner_op, time_variable="tau")
    b = solve_inner(h, None, inner_traj, weights, inner_op, time_variable="t")
    assert norm_solution(a.phi - b.phi, weights, T) / a.norms["phi"] < 1e-6
    with pytest.raises(ValueError):
        solve_inner(h, None, inner_traj, weights, inner_op, time_variable="x")


@settings(max_examples=8, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(inner_traj, weights, inner_op, a, b):
    h1, h2 = sample_sources(inner_op.grid, inner_traj.t, T, weights, n=2, seed=3)
    s12 = solve_inner(h1.scale(a) + h2.scale(b), None, inner_traj, weights, inner_op)
    s1 = solve_inner(h1, None, inner_traj, weights, inner_op)
    s2 = solve_inner(h2, None, inner_traj, weights, inner_op)
    d = s12.phi - s1.phi.scale(a) - s2.phi.scale(b)
    scale = max(s1.norms["phi"], s2.norms["phi"]) * (abs(a) + abs(b) + 1)
    assert norm_solution(d, weights, T) < 1e-10 * scale
    assert s12.ell == pytest.approx(a * s1.ell + b * s2.ell, abs=1e-12 * (abs(s1.ell) + abs(s2.ell)))


def test_orthogonality_preserved(inner_traj, weights, inner_op):
    for h in sample_sources(inner_op.grid, inner_traj.t, T, weights, n=4, seed=1):
        sol = solve_inner(h, None, inner_traj, weights, inner_op)
        assert sol.orth_drift <= 1e-8
        c = all_projections(sol.phi, None)
        assert np.max(np.abs(c)) <= 1e-8 * np.max(np.abs(sol.phi.mode0) + 1e-300)


def test_initial_value_is_ell_z0(inner_traj, weights, inner_op):
    h = sample_sources(inner_op.grid, inner_traj.t, T, weights, n=1)[0]
    sol = solve_inner(h, None, inner_traj, weights, inner_op)
    z0 = inner_op.unstable_profile
    assert np.allclose(sol.phi.mode0[0], sol.ell * z0, rtol=0, atol=1e-12 * np.max(np.abs(sol.phi.mode0[0])))


def test_gradient_consistency(inner_traj, weights, inner_op):
    h = sample_sources(inner_op.grid, inner_traj.t, T, weights, n=2, seed=0)[1]
    sol = solve_inner(h, None, inner_traj, weights, inner_op)
    g = inner_op.grid
    r = g.nodes
    ph = sol.phi.mode0[len(r) // 4 if len(inner_traj.t) > len(r) // 4 else len(inner_traj.t) // 2]
    d = g.derivative(ph)
    fd = np.gradient(ph, r)
    m = (r > 0.5) & (r < 60)
    assert np.max(np.abs(d - fd)[m]) < 5e-3 * np.max(np.abs(d))


def test_sample_sources_deterministic(inner_traj, weights, inner_op):
    a = sample_sources(inner_op.grid, inner_traj.t, T, weights, n=3, seed=5)
    b = sample_sources(inner_op.grid, inner_traj.t, T, weights, n=3, seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.mode0, y.mode0) and np.array_equal(x.mode1, y.mode1)


def test_Tin_constant_frozen(inner_traj, weights, inner_op):
    C, ratios = measure_Tin_constant(weights, sample_sources(inner_op.grid, inner_traj.t, T, weights, n=4),
                                     inner_traj, inner_op)
    assert C == pytest.approx(TIN_FROZEN[40], rel=1e-6)
    # the saturating source is one of the samples
    assert ratios[0] <= C
    with pytest.raises(ValueError):
        measure_Tin_constant(weights, [], inner_traj, inner_op)


def test_export_snapshots(tmp_path, inner_traj, weights, inner_op):
    h = sample_sources(inner_op.grid, inner_traj.t, T, weights, n=1)[0]
    sol = solve_inner(h, None, inner_traj, weights, inner_op)
    export_snapshots_csv(sol, tmp_path / "snap.csv", [0, 5])
    with open(tmp_path / "snap.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "r", "phi_mode0", "phi_mode1"]
    assert len(rows) == 1 + 2 * (inner_op.grid.M + 1)


def test_operator_grid_mismatch(inner_traj, weights, inner_op):
    other = inner_grid(40.0, M=100)
    with pytest.raises(ValueError):
        solve_inner(ModeField.zeros(other, inner_traj.t), None, inner_traj, weights, inner_op)


def test_operator_spectrum_structure():
    op = build_inner_operator(20.0, M=200)
    assert op.sectors[0].lam[0] > 0 > op.sectors[0].lam[1]
    assert op.sectors[1].lam[0] < 0
