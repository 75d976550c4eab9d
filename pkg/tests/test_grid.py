import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from critheat.grid import (SPHERE_AREA, ModeField, clenshaw_curtis, fd_weights, gauss_panels, radial_laplacian_fd,
                           radial_operator, refine, sinh_grid, tan_grid)


def _inv4(r):
    return (1.0 + r * r) ** -4.0


REF_INV4 = SPHERE_AREA * quad(lambda r: r**4 * _inv4(r), 0, np.inf, epsabs=0, epsrel=1e-13)[0]


def test_sphere_area():
    assert SPHERE_AREA == pytest.approx(8 * np.pi**2 / 3, rel=1e-15)


def test_nodes_strictly_increasing_from_zero():
    g = tan_grid(400)
    assert g.nodes[0] == 0.0
    fin = g.nodes[np.isfinite(g.nodes)]
    assert np.all(np.diff(fin) > 0)
    assert g.map_param == 10.0


def test_grid_quadrature_matches_adaptive_oracle():
    g = tan_grid(400)
    r = np.where(np.isfinite(g.nodes), g.nodes, 0.0)
    val = g.integrate(_inv4(r) * np.isfinite(g.nodes))
    assert val == pytest.approx(REF_INV4, rel=1e-8)


def test_two_rules_agree_with_oracle():
    assert gauss_panels(_inv4) == pytest.approx(REF_INV4, rel=1e-12)
    assert clenshaw_curtis(_inv4) == pytest.approx(REF_INV4, rel=1e-12)


def test_volume_of_unit_ball_on_sinh_grid():
    g = sinh_grid(400, r_floor=1e-12)
    vol = SPHERE_AREA / 5.0
    # cell volumes are exact; the Boole rule is limited by the strong stretching near |x| = 1
    assert g.integrate_cv(np.ones(g.M + 1)) == pytest.approx(vol, rel=1e-12)
    assert g.integrate(np.ones(g.M + 1)) == pytest.approx(vol, rel=1e-5)


def test_refine_doubles_intervals():
    g = tan_grid(100, r_max=50.0)
    assert refine(g).M == 200
    assert refine(g).nodes[-1] == 50.0


def test_odd_interval_count_rejected():
    with pytest.raises(ValueError):
        tan_grid(101)


@given(st.integers(min_value=1, max_value=4))
def test_fd_weights_exact_on_polynomials(order):
    offs = np.arange(-4, 5)
    w = fd_weights(offs, order)
    for k in range(0, 9):
        exact = float(math.factorial(order)) if k == order else 0.0
        assert w @ offs.astype(float) ** k == pytest.approx(exact, abs=1e-9)


def test_fd_laplacian_of_gaussian():
    g = tan_grid(400, L=3.0, r_max=20.0)
    r = g.nodes
    f = np.exp(-r * r)
    exact = (4 * r * r - 10.0) * f
    lap = radial_laplacian_fd(g, f)
    assert np.max(np.abs(lap - exact)[:-8]) < 1e-7


def test_fv_operator_symmetric_in_cell_inner_product():
    g = tan_grid(200, r_max=30.0)
    op = radial_operator(g, 1)
    A = op.dense()
    W = np.diag(op.w)
    assert np.allclose(W @ A, (W @ A).T, rtol=0, atol=1e-10 * np.max(np.abs(W @ A)))


def test_solve_shifted_inverts():
    g = tan_grid(200, r_max=30.0)
    op = radial_operator(g, 0)
    rhs = np.linspace(1.0, 2.0, op.n)
    u = op.solve_shifted(1.0, 0.1, rhs)
    assert np.allclose(u - 0.1 * op.apply(u), rhs, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_modefield_linear_ops(s, shift):
    g = tan_grid(40, r_max=10.0)
    t = np.linspace(0.0, 1.0, 3)
    a = ModeField.radial(g, t, lambda r, tt: np.exp(-r) * (1.0 + tt))
    b = ModeField.radial(g, t, lambda r, tt: shift + 0.0 * r)
    c = (a + b).scale(s) - b.scale(s)
    assert np.allclose(c.mode0, s * a.mode0, atol=1e-12)


def test_modefield_evaluate_degree_one():
    g = tan_grid(40, r_max=10.0)
    t = np.zeros(1)
    m1 = np.zeros((1, 5, g.M + 1))
    m1[0, 2] = g.nodes
    f = ModeField(g, t, np.zeros((1, g.M + 1)), m1)
    y = np.array([0.3, -0.2, 0.5, 0.1, 0.0])
    assert f.evaluate(y, 0) == pytest.approx(np.linalg.norm(y) * y[2] / np.linalg.norm(y), rel=1e-8)
