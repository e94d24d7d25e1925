import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqfit.diagnostics import (
    MIXED,
    RELIABLE,
    UNIDENTIFIABLE,
    classify,
    ellipsoid,
    ellipsoid_svd,
    eta,
    relative_jacobian,
    reliability,
    scaled_jacobian,
    zeta,
)
from freqfit.eig import freq_jacobian, solve_modes
from freqfit.errors import SingularScaling
from freqfit.global_opt import solve_global
from freqfit.local_opt import solve_local
from freqfit.model import AffinePencil, ParamBox, UpdatingProblem
from oracles import chain_dense, eta_secular, fd_jacobian_dense


def _matrices(max_q=6, max_p=4):
    return st.integers(1, max_p).flatmap(
        lambda p: st.integers(p, max_q).flatmap(
            lambda q: arrays(np.float64, (q, p), elements=st.one_of(st.just(0.0), st.floats(1e-3, 10.0), st.floats(-10.0, -1e-3)))
        )
    )


def _one_param_problem(stiffness: bool):
    rng = np.random.default_rng(1)
    A = rng.standard_normal((5, 5))
    S = sp.csr_matrix(A @ A.T + 5 * np.eye(5))
    B = sp.eye(5, format="csr")
    pencil = AffinePencil(None, B, [S], [None]) if stiffness else AffinePencil(S, None, [None], [B])
    targets = solve_modes(pencil, [1.3], 3).freqs
    return UpdatingProblem(pencil, ParamBox([0.5], [3.0]), targets)


class TestScaling:
    @pytest.mark.parametrize("stiffness,expected", [(True, 0.5), (False, -0.5)])
    def test_homogeneous_parameter(self, stiffness, expected):
        prob = _one_param_problem(stiffness)
        rec = solve_local(prob, x_start=[2.0])
        Js = scaled_jacobian(prob, rec).Js
        np.testing.assert_allclose(Js[:, 0], expected, rtol=1e-8)

    def test_chain_against_dense_differences(self, chain_problem):
        x = np.array([1.4, 0.6])
        J = freq_jacobian(chain_problem.pencil, solve_modes(chain_problem.pencil, x, 2)).J
        J_ref = fd_jacobian_dense(lambda y: chain_dense(2, [[0], [1]], y), x, 2)
        np.testing.assert_allclose(
            relative_jacobian(J, x, chain_problem.targets),
            relative_jacobian(J_ref, x, chain_problem.targets),
            rtol=1e-6,
        )

    def test_zero_reference_frequency(self):
        with pytest.raises(SingularScaling):
            relative_jacobian(np.ones((2, 1)), [1.0], [0.0, 1.0])


class TestZetaEta:
    def test_worked_matrix(self):
        A = np.array([[1.0, 1.0], [0.0, 0.1]])
        np.testing.assert_allclose(zeta(A), [1.0, np.sqrt(1.01)], rtol=1e-15)
        # v_2 = -1 / 1.01 lies inside the unit ball: the least-squares path applies.
        assert abs(eta(A, 0).value - 0.1 / np.sqrt(1.01)) <= 1e-12
        assert eta(A, 0).path == "unconstrained"
        # For x_2 the least-squares step is exactly -1, on the ball's boundary.
        assert abs(eta(A, 1).value - 0.1) <= 1e-12

    def test_identity(self):
        np.testing.assert_array_equal(zeta(np.eye(3)), np.ones(3))
        assert all(eta(np.eye(3), j).value == 1.0 for j in range(3))

    @settings(max_examples=50, deadline=None)
    @given(_matrices())
    def test_zero_zeta_iff_zero_column(self, A):
        z = zeta(A)
        for j in range(A.shape[1]):
            assert (z[j] == 0) == (not np.any(A[:, j]))

    def test_single_parameter(self):
        A = np.array([[3.0], [4.0]])
        assert eta(A, 0).value == zeta(A)[0] == 5.0

    def test_dependent_columns_have_zero_eta(self):
        A = np.array([[1.0, 2.0], [2.0, 4.0], [0.5, 1.0]])
        res = eta(A, 0)
        assert res.path == "unconstrained"
        assert res.value <= 1e-12
        # Cancelling x_2 would need x_1 to move twice as fast, outside the ball.
        res = eta(A, 1)
        assert res.path == "constrained"
        assert abs(res.value - np.linalg.norm(A[:, 0])) <= 1e-9

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            eta(np.eye(2), 2)

    @settings(max_examples=200, deadline=None)
    @given(_matrices(), st.data())
    def test_matches_secular_oracle(self, A, data):
        j = data.draw(st.integers(0, A.shape[1] - 1))
        res = eta(A, j)
        ref = eta_secular(A, j)
        assert res.value <= zeta(A)[j]
        assert abs(res.value - ref) <= 1e-9 * zeta(A)[j] + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(_matrices(), st.data())
    def test_direction_is_feasible_and_attains_value(self, A, data):
        j = data.draw(st.integers(0, A.shape[1] - 1))
        res = eta(A, j)
        assert res.v[j] == 1.0
        assert np.linalg.norm(np.delete(res.v, j)) <= 1.0 + 1e-12
        assert abs(np.linalg.norm(A @ res.v) - res.value) <= 1e-9 * (1 + res.value)

    @settings(max_examples=100, deadline=None)
    @given(_matrices(), st.data())
    def test_unconstrained_path_is_least_squares(self, A, data):
        j = data.draw(st.integers(0, A.shape[1] - 1))
        res = eta(A, j)
        if res.path != "unconstrained" or A.shape[1] == 1:
            return
        B = np.delete(A, j, axis=1)
        z = np.linalg.lstsq(B, -A[:, j], rcond=None)[0]
        assert abs(res.value - np.linalg.norm(A[:, j] + B @ z)) <= 1e-9 * (1 + zeta(A)[j])

    @settings(max_examples=50, deadline=None)
    @given(_matrices(), st.data())
    def test_unconstrained_path_is_locally_optimal(self, A, data):
        j = data.draw(st.integers(0, A.shape[1] - 1))
        res = eta(A, j)
        if res.path != "unconstrained" or A.shape[1] == 1:
            return
        rng = np.random.default_rng(j)
        base = np.linalg.norm(A @ res.v)
        for _ in range(100):
            d = rng.standard_normal(A.shape[1])
            d[j] = 0.0
            d *= 1e-3 / max(np.linalg.norm(d), 1e-300)
            assert np.linalg.norm(A @ (res.v + d)) >= base - 1e-9

    @settings(max_examples=50, deadline=None)
    @given(_matrices(), st.floats(1e-3, 1e3))
    def test_homogeneous_in_scale(self, A, c):
        for j in range(A.shape[1]):
            assert abs(eta(c * A, j).value - c * eta(A, j).value) <= 1e-9 * c * zeta(A)[j] + 1e-12


class TestClassify:
    @pytest.mark.parametrize(
        "z,e,expected",
        [
            (0.01, 0.005, UNIDENTIFIABLE),
            (1.2, 0.9, RELIABLE),
            (1.2, 0.05, MIXED),
            (0.1, 0.5, MIXED),
            (0.1, 0.51, RELIABLE),
        ],
    )
    def test_thresholds(self, z, e, expected):
        assert classify(z, e) == expected

    def test_custom_thresholds(self):
        assert classify(0.15, 0.1, small_thr=0.2) == UNIDENTIFIABLE
        assert classify(0.9, 0.3, large_thr=0.25) == RELIABLE

    def test_report_on_chain(self, chain_problem):
        rec = solve_local(chain_problem, x_start=[1.0, 1.0])
        rep = reliability(scaled_jacobian(chain_problem, rec), labels=["k1", "k2"])
        assert [q.label for q in rep.params] == ["k1", "k2"]
        np.testing.assert_allclose(rep.zeta[0], rep.zeta[1], rtol=1e-12)
        np.testing.assert_allclose([q.inv_zeta for q in rep.params], 1 / rep.zeta)
        assert np.all(rep.eta <= rep.zeta)


class TestEllipsoid:
    def test_svd_reconstructs(self):
        rng = np.random.default_rng(0)
        Js = rng.standard_normal((4, 3))
        sigma, U = ellipsoid_svd(Js)
        np.testing.assert_allclose(U @ U.T, np.eye(3), atol=1e-14)
        # ||diag(sigma) U^T d|| equals ||Js d|| for every displacement d.
        for d in rng.standard_normal((5, 3)):
            assert abs(np.linalg.norm(sigma * (U.T @ d)) - np.linalg.norm(Js @ d)) <= 1e-12

    def test_identity_jacobian_gives_ball(self):
        sigma, U = ellipsoid_svd(np.eye(3))
        np.testing.assert_array_equal(sigma, np.ones(3))
        d = np.array([0.3, -0.4, 1.2])
        assert abs(np.linalg.norm(sigma * (U.T @ d)) - np.linalg.norm(d)) <= 1e-15

    def test_rank_deficient_padding(self):
        Js = np.array([[1.0, 1.0]])
        sigma, U = ellipsoid_svd(Js)
        assert sigma.shape == (2,) and sigma[1] == 0.0
        assert abs(np.linalg.norm(sigma * (U.T @ np.array([5.0, -5.0])))) <= 1e-14

    def test_membership_on_chain(self, chain_problem):
        reg = solve_global(chain_problem)
        rec = reg.global_minimum
        ell = ellipsoid(chain_problem, rec)
        assert ell.contains(rec.x_star)
        assert ell.epsilon == chain_problem.epsilon
        assert not ell.contains([2.0, 0.5])

    def test_weakest_direction_points_to_other_minimum(self, chain_problem):
        # In log coordinates the two solutions differ by (ln 2, -ln 2); the
        # least-determined parameter combination at (1, 1) is that direction.
        rec = solve_local(chain_problem, x_start=[1.0, 1.0])
        rep = reliability(scaled_jacobian(chain_problem, rec))
        v = rep.right_vectors[:, -1]
        d = np.array([np.log(2.0), -np.log(2.0)])
        assert abs(v @ d) / np.linalg.norm(d) >= 0.999
