import csv

import numpy as np
import pytest

from critheat.modulation import time_grid
from critheat.outer import (Barrier, HeatStepper, OuterField, _g_tilde, barrier_margin, barrier_slack, bump_profile,
                            evolve_background, export_field_csv, holder_diagnostic, newtonian_potential,
                            norm_outer_solution, norm_outer_source, outer_grid, potential_residual, sample_outer_sources,
                            solution_weight, solve_outer, source_weight, tune_barrier)

T = 0.05
A = 0.5
LAMBDA1_FROZEN = 19.89450309026295  # first Dirichlet eigenvalue of the discrete unit ball, M = 400
J32_SQ = 4.493409457909064**2  # continuum value
BARRIER_C_FROZEN = 0.9627151489257812
BARRIER_SEP_FROZEN = 0.7908196343424192
CEILING_FROZEN = 2.4064784550256872


@pytest.fixture(scope="module")
def ogrid():
    return outer_grid()


@pytest.fixture(scope="module")
def stepper(ogrid):
    return HeatStepper(ogrid)


@pytest.fixture(scope="module")
def eigenmode(stepper):
    return stepper.first_eigenmode()


@pytest.fixture(scope="module")
def pot():
    return newtonian_potential(A)


@pytest.fixture(scope="module")
def tg():
    return time_grid(T)


@pytest.fixture(scope="module")
def barrier(ogrid, tg, pot):
    return tune_barrier(A, T, ogrid, tg, pot)


def test_grid_reaches_bubble_scale(ogrid):
    assert ogrid.nodes[0] == 0.0 and ogrid.nodes[-1] == 1.0
    assert ogrid.nodes[1] <= 1e-17


def test_first_eigenvalue_converges_second_order():
    lams = [HeatStepper(outer_grid(M)).first_eigenmode()[0] for M in (400, 800)]
    assert lams[0] == pytest.approx(LAMBDA1_FROZEN, rel=1e-10)
    e0, e1 = J32_SQ - lams[0], J32_SQ - lams[1]
    assert 3.5 < e0 / e1 < 4.5


def test_eigenmode_decays_exactly(stepper, eigenmode):
    lam, mode = eigenmode
    t = np.linspace(0.0, T, 8001)
    psi = stepper.run(t, None, psi0=mode)
    assert np.max(np.abs(psi - np.exp(-lam * t)[:, None] * mode[None, :])) < 1e-8


def test_eigenmode_duhamel(stepper, eigenmode):
    lam, mode = eigenmode
    t = np.linspace(0.0, T, 8001)
    forcing = np.exp(-lam * t)[:, None] * mode[None, :]
    psi = stepper.run(t, forcing)
    assert np.max(np.abs(psi - t[:, None] * forcing)) < 1e-8


def test_second_order_in_time(stepper, eigenmode):
    lam, mode = eigenmode
    errs = []
    for n in (1001, 2001):
        t = np.linspace(0.0, T, n)
        errs.append(np.max(np.abs(stepper.run(t, None, psi0=mode) - np.exp(-lam * t)[:, None] * mode)))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_source_shape_checked(stepper):
    with pytest.raises(ValueError):
        stepper.run(np.linspace(0, 1, 3), np.zeros((3, 7)))


def test_background_maximum_principle(ogrid, tg):
    bg = evolve_background(bump_profile(ogrid), tg, ogrid)
    s = bg.sup()
    assert s[0] == pytest.approx(0.1, rel=1e-14)
    assert np.all(np.diff(s) <= 1e-15)
    assert np.all(bg.at_q < 0)
    assert np.all(bg.Zstar[:, -1] == 0.0)


def test_potential_properties(pot):
    assert pot.c_a == pytest.approx(0.8, rel=1e-15)
    assert potential_residual(pot) < 1e-10
    r = np.geomspace(1e2, 1e3, 50)
    plateau = r**A * pot(r)
    assert np.max(plateau) / np.min(plateau) - 1 < 1e-4
    r = np.geomspace(1e3, 1e6, 50)
    assert np.polyfit(np.log(r), np.log(pot(r)), 1)[0] == pytest.approx(-A, abs=1e-6)
    assert pot.derivative(np.array([0.0]))[0] == 0.0
    with pytest.raises(ValueError):
        newtonian_potential(1.5)


def test_norm_examples(ogrid, tg):
    W = source_weight(ogrid, tg, T, A)
    assert norm_outer_source(W, ogrid, tg, T, A) == pytest.approx(1.0, rel=1e-14)
    assert norm_outer_source(np.ones_like(W), ogrid, tg, T, A) <= 1.0
    # a pure constant T^{3a/2} saturates only where the bubble part is negligible
    const = np.full_like(W, T ** (1.5 * A))
    assert norm_outer_solution(const, ogrid, tg, T, A) == pytest.approx(0.99995, abs=1e-4)
    S = solution_weight(ogrid, tg, T, A)
    assert norm_outer_solution(S, ogrid, tg, T, A) == pytest.approx(1.0, rel=1e-14)
    # mixed profile: the bubble part and the constant part each carry norm at most one
    y = ogrid.nodes[None, :] / ((T - tg) ** 2)[:, None]
    mixed = 0.5 / (1 + y**A) + 0.5 * T ** (1.5 * A)
    assert norm_outer_solution(mixed, ogrid, tg, T, A) == pytest.approx(0.5, rel=1e-12)


def test_barrier_tuned(barrier):
    assert isinstance(barrier, Barrier)
    assert barrier.c == pytest.approx(BARRIER_C_FROZEN, rel=1e-6)
    assert barrier.min_margin >= 0.0
    assert barrier.gamma_sep == pytest.approx(BARRIER_SEP_FROZEN, rel=1e-6)
    assert barrier.ceiling == pytest.approx(CEILING_FROZEN, rel=1e-6)
    assert barrier.alpha == 0.75


def test_barrier_margin_sign_change(ogrid, tg, pot, barrier):
    margin, _ = barrier_margin(A, T, 0.9 * barrier.c, None, ogrid, tg, pot)
    assert np.min(margin) < 0


def test_separation_region(ogrid, tg, pot, barrier):
    s = (T - tg)[:, None]
    y = ogrid.nodes[None, :] / s**2
    gt = _g_tilde(pot, y, s**2, s)
    rho = ogrid.nodes[None, :] / np.sqrt(s)
    assert np.max(-gt[rho < barrier.gamma_sep]) <= 0.0


def test_barrier_ceiling_stable_under_halving_T(ogrid, pot, barrier):
    half = tune_barrier(A, T / 2, ogrid, time_grid(T / 2), pot)
    assert half.c == pytest.approx(barrier.c, rel=1e-6)
    assert 0.5 < barrier.ceiling / half.ceiling < 2.0


def test_barrier_dominates_solutions(ogrid, tg, barrier):
    for g in sample_outer_sources(ogrid, tg, T, A, n=5):
        psi = solve_outer(g, ogrid, tg, T, A)
        assert barrier_slack(psi, g, barrier) >= 0.0
        assert np.all(np.abs(psi.psi) <= norm_outer_source(g, ogrid, tg, T, A) * barrier(ogrid, tg) + 1e-15)
        assert psi.norms["solution"] <= barrier.ceiling * psi.norms["source"]


def test_sample_sources_bounded_and_seeded(ogrid, tg):
    a = sample_outer_sources(ogrid, tg, T, A, n=3, seed=2)
    b = sample_outer_sources(ogrid, tg, T, A, n=3, seed=2)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
        assert norm_outer_source(x, ogrid, tg, T, A) <= 1.0 + 1e-12


def test_zero_source_zero_solution(ogrid, tg):
    f = solve_outer(None, ogrid, tg, T, A)
    assert f.norms["solution"] == 0.0 and f.norms["ratio"] == 0.0


def test_holder_diagnostic(ogrid, stepper, eigenmode):
    _, mode = eigenmode
    t = np.linspace(0.0, T, 2001)
    f = OuterField(ogrid, t, stepper.run(t, None, psi0=mode), {})
    q = [holder_diagnostic(f, 0.04, n_pairs=n) for n in (1000, 2000, 4000)]
    assert max(q) / min(q) < 1.1
    const = OuterField(ogrid, t, np.ones((len(t), ogrid.M + 1)), {})
    assert holder_diagnostic(const, 0.04) == 0.0
    assert holder_diagnostic(f, -1.0) == 0.0


def test_export_field(tmp_path, ogrid, stepper, eigenmode):
    _, mode = eigenmode
    t = np.linspace(0.0, 0.01, 5)
    f = OuterField(ogrid, t, stepper.run(t, None, psi0=mode), {})
    export_field_csv(f, tmp_path / "psi.csv", indices=[0, 4])
    with open(tmp_path / "psi.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "psi"]
    assert len(rows) == 1 + 2 * (ogrid.M + 1)
    assert float(rows[1 + ogrid.M][2]) == 0.0
