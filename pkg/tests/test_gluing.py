import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critheat.gluing import (GluingConfig, GluingDivergence, GluingState, RateFit, _increment, assemble_G, assemble_H,
                             assemble_solution, build_setup, error_E, export_glue_csv, export_history_csv,
                             initial_state, nonlinearity_N, picard_step, rate_fit, residual_audit, solve_dilation,
                             state_norms, u_sup)
from critheat.grid import ModeField, tan_grid
from critheat.modulation import all_projections, mu_star
from critheat.profile import ALPHA, P

H_CONST_FROZEN = {0.05: 0.0006375231118647913, 0.025: 0.0012932234852840805, 0.0125: 0.0018769260085578642}


@pytest.fixture(scope="module")
def setup():
    return build_setup(GluingConfig())


@pytest.fixture(scope="module")
def state0(setup):
    return initial_state(setup)


def _zero_state(setup):
    t = setup.t
    nx = setup.xgrid.M + 1
    mu = mu_star(t, setup.cfg.T, setup.Zq0)
    psi = np.zeros((len(t), nx))
    z = ModeField.zeros(setup.ygrid, t)
    return GluingState(1.0, mu, np.zeros_like(mu), psi, psi.copy(), z, z, 0.0)


def test_config_validation():
    with pytest.raises(NotImplementedError):
        GluingConfig(k=2)
    with pytest.raises(ValueError):
        GluingConfig(eps_frac=0.0)
    with pytest.raises(ValueError):
        GluingConfig(damping=1.5)
    with pytest.raises(ValueError):
        GluingConfig(continuation=(0.5,))
    assert GluingConfig().eps == pytest.approx(5e-6, rel=1e-14)


def test_error_E():
    g = tan_grid(100, r_max=50.0)
    t = np.zeros(3)
    mu = np.array([1.0, 0.5, 0.25])
    assert np.all(error_E(g, t, mu, np.zeros(3)).mode0 == 0.0)
    E = error_E(g, t, mu, np.array([2.0, 1.0, -1.0]))
    assert np.allclose(E.mode0[:, 0], mu * np.array([2.0, 1.0, -1.0]) * 1.5 * ALPHA, rtol=1e-14)
    assert np.all(E.mode1 == 0.0)


def test_nonlinearity_zero_and_quadratic():
    U = np.geomspace(1e-6, 10.0, 30)
    assert np.all(nonlinearity_N(U, np.zeros_like(U)) == 0.0)
    Z = 1e-3 * U
    taylor = 0.5 * P * (P - 1) * U ** (P - 2) * Z**2
    assert np.allclose(nonlinearity_N(U, Z) / taylor, 1.0, rtol=1e-2)
    # vanishing derivative at Z = 0
    h = 1e-7 * U
    assert np.all(np.abs(nonlinearity_N(U, h) - nonlinearity_N(U, -h)) / (2 * h) < 1e-5 * U ** (P - 1))


def test_nonlinearity_branches_agree():
    U = np.ones(4)
    Z = np.array([0.999e-3, 1.001e-3, -0.999e-3, -1.001e-3])
    exact = np.abs(1 + Z) ** (P - 1) * (1 + Z) - 1 - P * Z
    assert np.allclose(nonlinearity_N(U, Z), exact, rtol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 10.0), st.floats(-5.0, 5.0))
def test_nonlinearity_matches_definition(U, s):
    Z = s * U
    v = U + Z
    direct = abs(v) ** (P - 1) * v - U**P - P * U ** (P - 1) * Z
    assert float(nonlinearity_N(U, Z)) == pytest.approx(direct, rel=1e-6, abs=1e-9 * U**P)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 10.0), st.floats(-0.5, 0.5))
def test_nonlinearity_homogeneous(U, s):
    # N(cU, cZ) = c^p N(U, Z)
    c = 3.0
    assert float(nonlinearity_N(c * U, c * s * U)) == pytest.approx(c**P * float(nonlinearity_N(U, s * U)),
                                                                   rel=1e-9, abs=1e-300)


def test_constant_coupling_dilation_law(setup):
    t = setup.t
    psi = np.zeros((len(t), setup.xgrid.M + 1))
    ms = mu_star(t, setup.cfg.T, setup.Zq0)
    mu, mud, _ = solve_dilation(setup, psi, 0.0, ms)
    # a constant background gives the scale law up to a fixed factor from the ball projection
    ratio = mu / ms
    assert np.max(ratio) / np.min(ratio) - 1 < 1e-6
    H = assemble_H(setup, psi, mu, mud, 0.0)
    c = all_projections(H, None)
    assert np.max(np.abs(c)) < 1e-12 * np.max(np.abs(H.mode0))


def test_zero_background_is_fixed_point(setup):
    s = _zero_state(setup)
    import dataclasses

    from critheat.outer import Background

    z = np.zeros_like(setup.background.Zstar)
    su = dataclasses.replace(setup, background=Background(setup.xgrid, setup.t, z[0], z), Zq0=0.0)
    H = assemble_H(su, s.psi, s.mu, s.mu_dot)
    assert np.all(H.mode0 == 0.0) and np.all(H.mode1 == 0.0)
    G, terms, _ = assemble_G(su, s)
    assert np.all(G == 0.0)
    with pytest.raises(GluingDivergence):
        solve_dilation(su, s.psi, 1.0, s.mu)


def test_G_term_supports(setup, state0):
    _, terms, norms = assemble_G(setup, state0)
    y = setup.xgrid.nodes[None, :] / state0.mu[:, None]
    R = setup.cfg.R
    for k in ("A", "g1", "E"):
        assert np.all(terms[k][y < R * (1 - 1e-12)] == 0.0)
    for k in ("A", "B"):
        assert np.all(terms[k][y > 2 * R * (1 + 1e-12)] == 0.0)
    assert set(norms) == {"g1", "E", "A", "B", "N", "G"}


def test_initial_state_bounds(setup, state0):
    n = state_norms(setup, state0)
    assert n["psi_inf"] == 0.0
    assert n["mu1_dot_inf"] <= setup.cfg.delta0
    assert n["mu1_rel"] == pytest.approx(0.0012770282081839704, rel=1e-4)
    assert n["mu1_dot_rel"] == pytest.approx(0.002554056416368081, rel=1e-4)


def test_H_constant_stable_in_T():
    vals = {}
    for T in (0.025, 0.0125):
        su = build_setup(GluingConfig(T=T))
        n = state_norms(su, initial_state(su))
        vals[T] = n["H_src"] / (n["psi_inf"] + float(np.max(np.abs(su.background.Zstar))))
        assert vals[T] == pytest.approx(H_CONST_FROZEN[T], rel=1e-3)
    assert 0.5 <= vals[0.0125] / vals[0.025] <= 2.0


def test_rate_fit_synthetic():
    T = 0.05
    t = T - np.geomspace(1e-6, 1e-2, 50)
    f = rate_fit(t, 3.0 * (T - t) ** 2, T)
    assert isinstance(f, RateFit)
    assert f.slope == pytest.approx(2.0, abs=1e-10)
    assert np.exp(f.intercept) == pytest.approx(3.0, rel=1e-9)
    inside = (T - t)[(T - t) <= T / 10]
    assert f.n_points == len(inside)
    assert f.decades == pytest.approx(np.log10(inside.max() / inside.min()), rel=1e-12)
    with pytest.raises(ValueError):
        rate_fit(t[:2], t[:2], T, window=(0.0, 1.0))


def test_run_converged(gluing_run):
    assert gluing_run.converged
    rows = [h for h in gluing_run.history if "iteration" in h]
    assert all(h["projection"] <= 1e-8 for h in rows)
    assert gluing_run.projections_max <= 1e-8
    assert gluing_run.audit["total"] <= 10 * gluing_run.audit["floor"]


def test_run_bounds(gluing_run):
    cfg = gluing_run.setup.cfg
    n = gluing_run.norms
    assert n["mu1_dot_inf"] <= cfg.delta0
    assert n["phi_star"] + n["psi_inf"] <= cfg.delta1
    assert n["xi1_rel"] == 0.0
    assert np.all(gluing_run.state.xi1 == 0.0)


def test_extra_sweep_is_order_independent(gluing_run):
    su, s = gluing_run.setup, gluing_run.state
    more = picard_step(su, s)
    assert _increment(su, s, more)["max"] < 10 * su.cfg.tol
    # a fully relaxed sweep reproduces the fixed point too
    assert _increment(su, s, picard_step(su, s, damping=1.0))["max"] < 10 * su.cfg.tol


def test_assembled_solution_consistent(gluing_run):
    su, s = gluing_run.setup, gluing_run.state
    u = assemble_solution(su, s)
    assert np.allclose(u[:, 0], u_sup(su, s), rtol=1e-10)
    assert np.allclose(np.max(np.abs(u), axis=1), gluing_run.u_sup, rtol=1e-10)
    # at t = 0 the bubble dominates the corrections at q
    bubble = s.mu[0] ** -1.5 * ALPHA
    assert abs(u[0, 0] - bubble) < 1e-2 * bubble


def test_audit_keys(gluing_run):
    a = residual_audit(gluing_run.setup, gluing_run.state)
    assert {"inner", "outer", "inner_floor", "outer_floor", "multiplier", "total", "floor"} <= set(a)
    assert a["total"] == pytest.approx(gluing_run.audit["total"], rel=1e-12)


def test_exports(tmp_path, gluing_run):
    export_glue_csv(gluing_run, tmp_path / "glue.csv")
    export_history_csv(gluing_run, tmp_path / "hist.csv")
    with open(tmp_path / "glue.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "mu", "mu_star", "mu_dot", "u_sup", "psi_q", "phi_0", "zstar_q"]
    assert len(rows) == 1 + len(gluing_run.setup.t)
    with open(tmp_path / "hist.csv") as fh:
        hist = list(csv.DictReader(fh))
    assert len(hist) == len([h for h in gluing_run.history if "iteration" in h])
    assert "contraction" in hist[0]
