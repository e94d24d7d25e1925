import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chain3_problem
from freqfit.diagnostics import scaled_jacobian, zeta
from freqfit.errors import ConfigError, ConvergenceError, NotPositiveDefinite
from freqfit.global_opt import solve_global
from freqfit.model import ParamBox
from freqfit.sensitivity import EETDesign, elementary_effects, importance, lhs_sample

UNIT3 = ParamBox(np.zeros(3), np.ones(3))


class TestLatinHypercube:
    def test_one_point_per_stratum(self):
        box = ParamBox([1.0, -2.0], [3.0, 2.0])
        n = 16
        pts = lhs_sample(box, n, seed=4)
        u = box.to_unit(pts)
        for j in range(2):
            assert sorted(np.floor(u[:, j] * n).astype(int)) == list(range(n))

    def test_single_point(self):
        box = ParamBox([1.0, -2.0], [3.0, 2.0])
        pts = lhs_sample(box, 1, seed=0)
        assert pts.shape == (1, 2) and box.contains(pts[0])

    def test_ten_points_ten_bins(self):
        pts = lhs_sample(ParamBox([0.0, 0.0], [1.0, 1.0]), 10, seed=3)
        for j in range(2):
            counts, _ = np.histogram(pts[:, j], bins=10, range=(0.0, 1.0))
            assert np.all(counts == 1)

    def test_deterministic_per_seed(self):
        np.testing.assert_array_equal(lhs_sample(UNIT3, 5, 1), lhs_sample(UNIT3, 5, 1))
        assert not np.array_equal(lhs_sample(UNIT3, 5, 1), lhs_sample(UNIT3, 5, 2))

    def test_rejects_empty_sample(self):
        with pytest.raises(ConfigError):
            lhs_sample(UNIT3, 0)


class TestDesign:
    def test_default_step(self):
        assert EETDesign(UNIT3, levels=4).step == pytest.approx(2.0 / 3.0)
        assert EETDesign(UNIT3, levels=2).step == 1.0

    def test_evaluation_count(self):
        assert EETDesign(UNIT3, r=7).evaluations == 28

    @pytest.mark.parametrize("kwargs", [{"r": 0}, {"levels": 3}, {"levels": 0}, {"delta": 0.0}, {"delta": 1.5}])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            EETDesign(UNIT3, **kwargs)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 30), st.sampled_from([2, 4, 6, 8]), st.integers(0, 1000))
    def test_points_on_grid_and_inside_box(self, r, levels, seed):
        design = EETDesign(UNIT3, r=r, levels=levels, seed=seed)
        trajs = design.trajectories()
        assert len(trajs) == r
        for base, steps in trajs:
            k = base * (levels - 1)
            np.testing.assert_allclose(k, np.round(k), atol=1e-12)
            moved = base + steps
            assert np.all(moved >= -1e-12) and np.all(moved <= 1 + 1e-12)
            np.testing.assert_allclose(np.abs(steps), design.step)


class TestElementaryEffects:
    @pytest.mark.parametrize("r", [1, 2, 8])
    def test_single_linear_term(self, r):
        box = ParamBox([0.0, 0.0], [1.0, 1.0])
        rep = elementary_effects(lambda x: np.array([3.0 * x[0] + 0.0 * x[1]]), EETDesign(box, r=r, seed=2))
        np.testing.assert_allclose(rep.mu_star, [[3.0, 0.0]], atol=1e-12)
        np.testing.assert_allclose(rep.sigma, 0.0, atol=1e-12)

    def test_effects_are_per_unit_box_fraction(self):
        box = ParamBox([0.0, 0.0], [2.0, 5.0])
        rep = elementary_effects(lambda x: np.array([x[0] + x[1]]), EETDesign(box, r=4))
        np.testing.assert_allclose(rep.mu_star, [[2.0, 5.0]], atol=1e-12)

    def test_interaction_shows_in_sigma(self):
        box = ParamBox([0.0, 0.0], [1.0, 1.0])
        rep = elementary_effects(lambda x: np.array([x[0] * x[1]]), EETDesign(box, r=20, seed=1))
        assert np.all(rep.sigma > 0)
        assert np.all(rep.mu_star > 0)

    def test_vector_output_shape(self):
        rep = elementary_effects(lambda x: np.array([x[0], 2 * x[1], x[2] ** 2]), EETDesign(UNIT3, r=3))
        assert rep.mu_star.shape == (3, 3) and rep.sigma.shape == (3, 3)
        assert rep.effects.shape == (3, 3, 3)

    @settings(max_examples=20, deadline=None)
    @given(
        st.lists(st.floats(0.1, 10.0), min_size=2, max_size=2),
        st.lists(st.floats(-5.0, 5.0), min_size=2, max_size=2),
        st.integers(0, 100),
    )
    def test_invariant_under_affine_reparameterization(self, scale, shift, seed):
        scale, shift = np.array(scale), np.array(shift)

        def g(x):
            return np.array([np.sin(x[0]) * x[1], x[0] ** 2 - x[1]])

        base_box = ParamBox([0.0, 1.0], [2.0, 3.0])
        moved_box = ParamBox(base_box.lower * scale + shift, base_box.upper * scale + shift)
        a = elementary_effects(g, EETDesign(base_box, r=6, seed=seed))
        b = elementary_effects(lambda y: g((y - shift) / scale), EETDesign(moved_box, r=6, seed=seed))
        np.testing.assert_allclose(b.mu_star, a.mu_star, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(b.sigma, a.sigma, rtol=1e-9, atol=1e-9)

    def test_budget(self):
        calls = []
        design = EETDesign(UNIT3, r=6)
        rep = elementary_effects(lambda x: calls.append(1) or np.zeros(1), design)
        assert len(calls) == rep.evaluations == design.evaluations == 24

    def test_threads_match_serial(self):
        def g(x):
            return np.array([x[0] * x[1] + x[2], np.exp(x[0])])

        design = EETDesign(UNIT3, r=12, seed=9)
        a = elementary_effects(g, design)
        b = elementary_effects(g, design, threads=4)
        np.testing.assert_array_equal(a.mu_star, b.mu_star)
        np.testing.assert_array_equal(a.sigma, b.sigma)

    def _failing_model(self, design, n_bad):
        bad = [UNIT3.from_unit(base) for base, _ in design.trajectories()[:n_bad]]

        def g(x):
            if any(np.array_equal(x, b) for b in bad):
                raise NotPositiveDefinite("forced")
            return np.array([x.sum()])

        return g

    def test_failed_trajectories_are_dropped(self):
        design = EETDesign(UNIT3, r=10, seed=5)
        rep = elementary_effects(self._failing_model(design, 2), design)
        assert rep.dropped == 2 and rep.r_used == 8
        assert rep.evaluations == 8 * 4
        np.testing.assert_allclose(rep.mu_star, 1.0, atol=1e-12)

    def test_too_many_failures(self):
        design = EETDesign(UNIT3, r=10, seed=5)
        with pytest.raises(ConvergenceError):
            elementary_effects(self._failing_model(design, 3), design)

    @pytest.mark.parametrize("groups", [[[0], [1, 2]], [[0, 1], [2]]])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_dominant_parameter_agrees_with_zeta(self, groups, seed):
        prob = chain3_problem(groups, 3)
        rec = solve_global(prob).global_minimum
        z = zeta(scaled_jacobian(prob, rec))
        rep = elementary_effects(prob, EETDesign(prob.box, r=20, seed=seed))
        assert int(np.argmax(importance(rep.mu_star, prob.targets))) == int(np.argmax(z))

    def test_problem_input(self, chain_problem):
        rep = elementary_effects(chain_problem, EETDesign(chain_problem.box, r=5))
        assert rep.labels == ["k1", "k2"]
        assert rep.mu_star.shape == (2, 2)
        assert np.all(rep.mu_star > 0)


class TestImportance:
    def test_column_norms(self):
        np.testing.assert_allclose(importance([[3.0, 0.0], [4.0, 1.0]]), [5.0, 1.0])

    def test_reference_scaling(self):
        np.testing.assert_allclose(importance([[2.0, 1.0], [4.0, 4.0]], reference=[2.0, 4.0]), [np.sqrt(2.0), np.sqrt(1.25)])
