import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mffbsde.backward import (backward_sweep, bsde_estimate_report, implicit_lipschitz,
                              solve_mf_bsde)
from mffbsde.core import (BlowUpError, DomainError, InconsistencyError, StepContractionError,
                          TimeGrid)
from mffbsde.forward import forward_sweep, sde_estimate_report, solve_mf_sde, timed
from mffbsde.noise import make_tree, sample_mc


# ---------------------------------------------------------------------------
# forward


@given(st.floats(-2.0, 2.0), st.floats(-1.0, 1.0))
@settings(max_examples=25, deadline=None)
def test_mean_field_linear_drift_matches_euler_recursion(a, abar):
    tree = make_tree(TimeGrid(0.0, 1.0, 4))
    x = solve_mf_sde(lambda k, x, xb: a * x + abar * xb,
                     lambda k, x, xb: np.ones(x.shape + (1,)), [1.0], tree)
    # the mean follows m_{k+1} = (1 + (a + abar) h) m_k exactly
    m = (1.0 + (a + abar) * tree.grid.h) ** np.arange(5)
    np.testing.assert_allclose([tree.mean(x[k])[0] for k in range(5)], m, rtol=1e-12)


def test_additive_noise_variance(tree8):
    x = solve_mf_sde(lambda k, x, xb: np.zeros_like(x),
                     lambda k, x, xb: np.full(x.shape + (1,), 0.5), [0.0], tree8)
    assert tree8.mean(x[-1] ** 2)[0] == pytest.approx(0.25)


def test_forward_sweep_agrees_with_solver(tree4):
    rng = np.random.default_rng(0)
    drift = rng.normal(size=(4, tree4.n_paths, 2))
    diff = rng.normal(size=(4, tree4.n_paths, 2, 1))
    a = forward_sweep([1.0, -1.0], drift, diff, tree4)
    b = solve_mf_sde(lambda k, x, xb: drift[k], lambda k, x, xb: diff[k], [1.0, -1.0], tree4)
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_timed_wrapper(grid4):
    seen = []
    f = timed(lambda s, x, xb: seen.append(s) or x, grid4)
    f(2, np.zeros(1), np.zeros(1))
    assert seen == [0.5]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_step():
    tree = make_tree(TimeGrid(0.0, 1.0, 4))
    with pytest.raises(BlowUpError):
        solve_mf_sde(lambda k, x, xb: 1e200 * x ** 2, lambda k, x, xb: np.zeros(x.shape + (1,)),
                     [1e200], tree)


def test_bad_initial_shape(tree4):
    with pytest.raises(DomainError):
        solve_mf_sde(lambda k, x, xb: x, lambda k, x, xb: x[..., None], np.zeros((3, 1)), tree4)


def test_sde_report_identical_systems(tree4):
    coeffs = (lambda k, x, xb: -x, lambda k, x, xb: np.ones(x.shape + (1,)))
    x = solve_mf_sde(*coeffs, [1.0], tree4)
    rep = sde_estimate_report(x, x, coeffs, coeffs, [1.0], [1.0], tree4)
    assert rep["lhs"] == 0.0 and np.isnan(rep["ratio"])


def test_sde_report_detects_inconsistency(tree4):
    coeffs = (lambda k, x, xb: -x, lambda k, x, xb: np.ones(x.shape + (1,)))
    x = solve_mf_sde(*coeffs, [1.0], tree4)
    with pytest.raises(InconsistencyError):
        sde_estimate_report(x, x + 1.0, coeffs, coeffs, [1.0], [1.0], tree4)


# ---------------------------------------------------------------------------
# backward


def test_martingale_representation(tree4):
    # y_T = W(T): then y_k = W(s_k) and z = 1
    WT = tree4.brownian(4)
    y, z = solve_mf_bsde(lambda k, y, yb, z, zb: np.zeros_like(y), WT, tree4)
    for k in range(5):
        np.testing.assert_allclose(y[k], tree4.brownian(k), atol=1e-14)
    np.testing.assert_allclose(z, 1.0, atol=1e-14)


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
@settings(max_examples=25, deadline=None)
def test_linear_driver_implicit_recursion(a, c):
    tree = make_tree(TimeGrid(0.0, 1.0, 4))
    h = tree.grid.h
    y, _ = solve_mf_bsde(lambda k, y, yb, z, zb: a * y + c, np.ones((1,)), tree)
    # y_k = (y_{k+1} - h c) / (1 + h a) on deterministic data
    expect = 1.0
    for _ in range(4):
        expect = (expect - h * c) / (1.0 + h * a)
    assert y[0, 0, 0] == pytest.approx(expect, rel=1e-10)


def test_backward_sweep_agrees_with_solver(tree4):
    rng = np.random.default_rng(1)
    drv = np.stack([tree4.cond_exp(k, rng.normal(size=(tree4.n_paths, 2))) for k in range(4)])
    yT = rng.normal(size=(tree4.n_paths, 2))
    a = backward_sweep(drv, yT, tree4)
    b = solve_mf_bsde(lambda k, y, yb, z, zb: drv[k], yT, tree4)
    np.testing.assert_allclose(a[0], b[0], atol=1e-13)
    np.testing.assert_allclose(a[1], b[1], atol=1e-13)


def test_step_contraction_guard(tree4):
    with pytest.raises(StepContractionError):
        solve_mf_bsde(lambda k, y, yb, z, zb: -10.0 * y, np.ones(1), tree4)
    assert implicit_lipschitz(lambda k, y, yb, z, zb: -10.0 * y, tree4, 1) == pytest.approx(10.0)


def test_mean_field_driver(tree4):
    # g = E y: the mean solves m_k = m_{k+1} - h m_k
    y, _ = solve_mf_bsde(lambda k, y, yb, z, zb: np.broadcast_to(yb, y.shape),
                         tree4.brownian(4) + 1.0, tree4)
    assert tree4.mean(y[0])[0] == pytest.approx((1.0 / 1.25) ** 4, rel=1e-10)


def test_terminal_validation(tree4):
    with pytest.raises(DomainError):
        solve_mf_bsde(lambda *a: 0.0, np.ones((3, 1)), tree4)
    with pytest.raises(BlowUpError):
        solve_mf_bsde(lambda *a: 0.0, np.array([np.inf]), tree4)


def test_monte_carlo_bsde_close_to_tree():
    grid = TimeGrid(0.0, 1.0, 4)
    tree, mc = make_tree(grid), sample_mc(9, 20_000, grid)
    g = lambda k, y, yb, z, zb: -0.5 * y + 0.2 * z[..., 0]
    yt, _ = solve_mf_bsde(g, np.sin(tree.brownian(4)) + 1.0, tree)
    ym, _ = solve_mf_bsde(g, np.sin(mc.brownian(4)) + 1.0, mc)
    assert abs(tree.mean(yt[0])[0] - mc.mean(ym[0])[0]) < 0.02


def test_bsde_report_shapes(tree4):
    g = lambda k, y, yb, z, zb: -y
    sA = solve_mf_bsde(g, np.ones(1), tree4)
    sB = solve_mf_bsde(g, np.zeros(1), tree4)
    rep = bsde_estimate_report(sA, sB, g, g, np.ones(1), np.zeros(1), tree4)
    assert rep["rhs_core"] == pytest.approx(1.0)
    # g = -y grows backwards: y_0 = (1 - h)^{-4}, the largest gap on the grid
    assert rep["ratio"] == pytest.approx((4.0 / 3.0) ** 8)
