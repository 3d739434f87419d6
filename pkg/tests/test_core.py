import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mffbsde.core import (CASE_A, CASE_B, DomainError, DominationWeights, LinearCoefficients,
                          PerturbationTriple, SolutionEnsemble, TimeGrid, blend,
                          coefficients_from_json, coefficients_to_json, flatten_z, h_norm,
                          m2_norm, operator_norm, pairwise_sum, split_theta, stack_theta,
                          unflatten_z, zero_coefficients)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestTimeGrid:
    def test_step_and_times(self):
        g = TimeGrid(0.5, 1.5, 4)
        assert g.h == pytest.approx(0.25)
        np.testing.assert_allclose(g.times, [0.5, 0.75, 1.0, 1.25, 1.5])
        assert g.time(2) == pytest.approx(1.0)

    @pytest.mark.parametrize("t0,T,N", [(1.0, 1.0, 4), (0.0, 1.0, 0), (0.0, 1.0, 2.5)])
    def test_rejects_bad_grids(self, t0, T, N):
        with pytest.raises(DomainError):
            TimeGrid(t0, T, N)


@given(arrays(np.float64, st.integers(1, 300), elements=finite))
def test_pairwise_sum_matches_fsum(values):
    import math
    assert pairwise_sum(values) == pytest.approx(math.fsum(values), abs=1e-9)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 5))
def test_z_flattening_roundtrip(n, d, P):
    z = np.arange(P * n * d, dtype=float).reshape(P, n, d)
    np.testing.assert_array_equal(unflatten_z(flatten_z(z), n, d), z)


def test_theta_stacking_roundtrip():
    rng = np.random.default_rng(0)
    x, y, z = rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), rng.normal(size=(5, 2, 3))
    th = stack_theta(x, y, z)
    assert th.shape == (5, 2 * (2 + 3))
    xs, ys, zs = split_theta(th, 2, 3)
    np.testing.assert_array_equal(xs, x)
    np.testing.assert_array_equal(ys, y)
    np.testing.assert_array_equal(zs, z)


class TestEnsemble:
    def test_shape_validation(self, grid4):
        with pytest.raises(DomainError):
            SolutionEnsemble(grid4, np.zeros((4, 2, 1)), np.zeros((4, 2, 1)),
                             np.zeros((4, 2, 1, 1)))
        with pytest.raises(DomainError):
            SolutionEnsemble(grid4, np.zeros((5, 2, 1)), np.zeros((5, 2, 1)),
                             np.zeros((4, 2, 1)))

    def test_m2_norm_of_constant_paths(self, grid4, tree4):
        P = tree4.n_paths
        th = SolutionEnsemble(grid4, np.full((5, P, 1), 2.0), np.zeros((5, P, 1)),
                              np.ones((4, P, 1, 1)), tree4)
        # sup |x|^2 = 4, integral of |z|^2 = 1
        assert m2_norm(th) == pytest.approx(np.sqrt(5.0))

    def test_m2_norm_rejects_nan(self, grid4):
        th = SolutionEnsemble.zeros(grid4, 2, 1, 1)
        th.x[0, 0, 0] = np.nan
        with pytest.raises(Exception):
            m2_norm(th)

    def test_arithmetic_and_transform(self, grid4):
        a = SolutionEnsemble.zeros(grid4, 2, 1, 1)
        b = a.transformed(1.0, -1.0, -1.0)
        assert m2_norm(a - b) == 0.0
        assert m2_norm(a + a) == 0.0


def test_h_norm_of_xi_only(grid4):
    p = PerturbationTriple.from_parts(grid4, [3.0, 4.0], np.zeros((2, 2)))
    assert h_norm(p) == pytest.approx(5.0)


def test_perturbation_blocks(grid4):
    p = PerturbationTriple.from_parts(grid4, [0.0], np.zeros((3, 1)), phi=1.0, psi=2.0,
                                      gamma=np.full((1, 1), 3.0))
    assert p.n == 1 and p.d == 1
    assert np.all(p.phi == 1.0) and np.all(p.psi == 2.0) and np.all(p.gamma == 3.0)


@given(arrays(np.float64, (70, 70), elements=st.floats(-1, 1)))
@settings(max_examples=10, deadline=None)
def test_operator_norm_power_iteration(A):
    assert operator_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-5, abs=1e-8)


class TestCoefficients:
    def test_linear_evaluation(self):
        c = LinearCoefficients(1, 1, psi_mat=[[2.0]], psi_off=[1.0], phi_mat=[[3.0]],
                               phi_bar=[[1.0]], gamma_mat=np.eye(3))
        assert c.psi(np.array([1.0]))[0] == pytest.approx(3.0)
        assert c.phi(np.array([[1.0]]), np.array([2.0]))[0, 0] == pytest.approx(5.0)
        np.testing.assert_allclose(c.gamma(0.0, np.array([1.0, 2.0, 3.0]), np.zeros(3)),
                                   [1.0, 2.0, 3.0])

    def test_wrong_shape(self):
        with pytest.raises(DomainError, match="expected"):
            LinearCoefficients(2, 1, psi_mat=np.eye(3))

    def test_blend_endpoints(self):
        a = LinearCoefficients(1, 1, psi_mat=[[1.0]], gamma_mat=np.eye(3))
        b = zero_coefficients(1, 1)
        y = np.array([0.7])
        assert blend(a, b, 1.0).psi(y) == pytest.approx(a.psi(y))
        assert blend(a, b, 0.0).psi(y) == pytest.approx(0.0)
        with pytest.raises(DomainError):
            blend(a, b, 1.5)

    def test_json_roundtrip(self):
        rng = np.random.default_rng(1)
        c = LinearCoefficients(2, 1, psi_mat=rng.normal(size=(2, 2)), psi_off=rng.normal(size=2),
                               gamma_mat=rng.normal(size=(6, 6)))
        doc = json.loads(json.dumps(coefficients_to_json(c)))
        back = coefficients_from_json(doc)
        np.testing.assert_array_equal(back.psi_mat, c.psi_mat)
        np.testing.assert_array_equal(back.gamma_mat, c.gamma_mat)

    def test_json_rejects_time_dependent(self):
        c = LinearCoefficients(1, 1, gamma_mat=lambda s: s * np.eye(3))
        with pytest.raises(DomainError):
            coefficients_to_json(c)

    def test_json_schema_tag(self):
        with pytest.raises(DomainError, match="schema"):
            coefficients_from_json({"schema": "other", "n": 1, "d": 1})


class TestWeights:
    def test_case_inferred(self):
        assert DominationWeights.build(1, 1, mu=0.5).case == CASE_A
        assert DominationWeights.build(1, 1, nu=0.5).case == CASE_B

    @pytest.mark.parametrize("mu,nu,case", [(0.5, 0.5, CASE_A), (0.0, 0.0, CASE_B),
                                            (-1.0, 0.0, CASE_A)])
    def test_inconsistent(self, mu, nu, case):
        with pytest.raises(DomainError):
            DominationWeights.build(1, 1, mu=mu, nu=nu, case=case)
