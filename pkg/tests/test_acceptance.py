"""Acceptance gate: one test per criterion, each reported as PASS/FAIL in the
terminal summary (see conftest.py)."""

import json
import time

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from conftest import chain3_problem
from freqfit import cli
from freqfit.diagnostics import eta, scaled_jacobian, zeta
from freqfit.eig import SolverOptions, freq_jacobian, lanczos_shift_invert, solve_modes
from freqfit.global_opt import is_same_minimum, solve_global
from freqfit.local_opt import solve_local
from freqfit.model import ParamBox, Segment, UpdatingProblem, build_cantilever_beam, build_spring_chain
from freqfit.sensitivity import EETDesign, elementary_effects, importance
from oracles import chain_dense, chain_phi_grid, dense_freqs, fd_jacobian_dense, grid_minima

criterion = pytest.mark.criterion


def _scaled_distance(x, y, box):
    return float(np.linalg.norm((np.asarray(x) - np.asarray(y)) / box.width))


@criterion(1, "two-minima recovery on the 2-DOF chain")
def test_two_minima_recovery(chain_problem):
    t0 = time.perf_counter()
    reg = solve_global(chain_problem)
    wall = time.perf_counter() - t0
    xs = sorted((r.x_star for r in reg.records), key=tuple)
    assert len(xs) == 2
    np.testing.assert_allclose(xs[0], [1.0, 1.0], atol=1e-4)
    np.testing.assert_allclose(xs[1], [2.0, 0.5], atol=1e-4)
    assert all(r.phi <= 1e-12 for r in reg.records)
    assert reg.evaluations <= 100
    assert wall <= 1.0


@criterion(2, "unique minimum with a third target matches the grid oracle")
def test_unique_minimum_matches_grid_oracle():
    groups = [[0, 1], [2]]
    problem = chain3_problem(groups, 3)
    reg = solve_global(problem)
    assert len(reg.records) == 1

    t, w = problem.targets, problem.weights
    lower, upper = problem.box.lower, problem.box.upper
    axes, grid = chain_phi_grid(3, groups, t, w, lower, upper, 200)

    def phi(x):
        r = w * (dense_freqs(*chain_dense(3, groups, x), 3) - t)
        return float(r @ r)

    oracle = grid_minima(phi, axes, grid, lower, upper)
    assert len(oracle) == 1
    assert _scaled_distance(reg.records[0].x_star, oracle[0], problem.box) <= 1e-3


def _random_spd_pencil(rng, n):
    density = min(1.0, 6.0 / n)
    R = sp.random(n, n, density=density, random_state=rng, data_rvs=lambda k: rng.uniform(-1, 1, k))
    S = (R + R.T).tocsr()
    K = S + sp.diags(np.abs(S).sum(axis=1).A1 + rng.uniform(0.1, 2.0, n))
    M = sp.diags(rng.uniform(0.5, 2.0, n)) + 0.1 * sp.diags(rng.uniform(-1, 1, n - 1), 1)
    M = (M + M.T) * 0.5 + sp.eye(n) * 0.2
    return K.tocsr(), M.tocsr()


@criterion(3, "Lanczos matches dense eigenvalues on 50 random SPD pencils")
def test_lanczos_vs_dense():
    rng = np.random.default_rng(2024)
    opts = SolverOptions()
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(20, 601))
        q = int(rng.integers(1, 11))
        K, M = _random_spd_pencil(rng, n)
        lam, _, _, _, _ = lanczos_shift_invert(K, M, q, opts)
        ref = sla.eigh(K.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[0, q - 1])
        worst = max(worst, float(np.max(np.abs(lam - ref) / np.abs(ref))))
    assert worst <= 1e-9
    assert time.perf_counter() - t0 <= 30.0


def _jacobian_models():
    chain = build_spring_chain(20, np.linspace(1.0, 2.0, 20), [list(range(0, 7)), list(range(7, 14)), list(range(14, 20))])
    beam = build_cantilever_beam([Segment(1.0, 0, 2, elements=3), Segment(0.8, 1, 2, elements=3)], n_params=3)
    return [(chain, 4, 0.5, 2.0), (beam, 4, 0.5, 2.0)]


@criterion(4, "analytic frequency Jacobian matches central differences")
def test_jacobian_vs_fd():
    rng = np.random.default_rng(7)
    checked = 0
    for pencil, q, lo, hi in _jacobian_models():
        def assemble(x, pencil=pencil):
            K, M = pencil.assemble(x)
            return K.toarray(), M.toarray()

        for _ in range(50):
            x = rng.uniform(lo, hi, pencil.p)
            sol = solve_modes(pencil, x, q)
            if not np.all(sol.gap_ok):
                continue
            J = freq_jacobian(pencil, sol).J
            J_fd = fd_jacobian_dense(assemble, x, q, rel_step=1e-6)
            scale = np.linalg.norm(J_fd, axis=1, keepdims=True)
            assert np.all(np.abs(J - J_fd) <= 1e-5 * scale)
            checked += 1
    assert checked == 100


@criterion(5, "eta <= zeta, worked matrix, orthogonal columns")
def test_zeta_eta():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        p = int(rng.integers(1, 6))
        q = int(rng.integers(p, p + 4))
        A = rng.standard_normal((q, p)) * rng.uniform(0.01, 10.0, p)
        z = zeta(A)
        for j in range(p):
            assert eta(A, j).value <= z[j]
    A = np.array([[1.0, 1.0], [0.0, 0.1]])
    assert abs(eta(A, 0).value - 0.099504) <= 1e-6
    assert abs(zeta(A)[1] - 1.004988) <= 1e-6
    Q, _ = np.linalg.qr(rng.standard_normal((5, 3)))
    A = Q * np.array([0.3, 2.0, 7.0])
    z = zeta(A)
    for j in range(3):
        assert abs(eta(A, j).value - z[j]) <= 1e-12


@criterion(6, "pseudominimum membership symmetry, worked example, registry distinctness")
def test_pseudominimum(chain_problem):
    rng = np.random.default_rng(5)
    sigma = np.array([2.0, 1.0])
    U = np.eye(2)

    def dist(x, x0):
        return float(np.linalg.norm(sigma * (U.T @ (np.asarray(x) - np.asarray(x0)))))

    for _ in range(200):
        x0, x1 = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        assert dist(x1, x0) == dist(x0, x1)
    value = dist([0.04, 0.05], [0.0, 0.0])
    assert abs(value - 0.0943) <= 5e-5 and value <= 0.1

    problems = [chain_problem, chain3_problem([[0], [1, 2]], 2), chain3_problem([[0, 1], [2]], 2)]
    for prob in problems:
        reg = solve_global(prob)
        for a in reg.records:
            for b in reg.records:
                if a is not b:
                    assert not is_same_minimum(a, b, reg.epsilon, prob.box.width)


@criterion(7, "elementary effects are exact on a linear model")
@pytest.mark.parametrize("r", [1, 5, 50])
def test_eet_linear(r):
    a = np.array([3.0, -1.5, 0.0, 0.25])
    box = ParamBox(np.zeros(4), np.ones(4))
    rep = elementary_effects(lambda x: np.array([a @ x]), EETDesign(box, r=r, seed=r))
    np.testing.assert_allclose(rep.mu_star[0], np.abs(a), rtol=0, atol=1e-12)
    assert rep.evaluations == r * (4 + 1)


@criterion(8, "scaling stiffness by 4 doubles frequencies and leaves diagnostics unchanged")
def test_scale_equivariance(chain_problem):
    pencil = chain_problem.pencil
    scaled = pencil.scaled(k_factor=4.0)
    rng = np.random.default_rng(3)
    for x in rng.uniform(0.25, 4.0, (20, 2)):
        f1 = solve_modes(pencil, x, 2).freqs
        f4 = solve_modes(scaled, x, 2).freqs
        np.testing.assert_array_equal(f4, 2.0 * f1)

    p4 = UpdatingProblem(scaled, chain_problem.box, 2.0 * chain_problem.targets)
    r1 = solve_global(chain_problem)
    r4 = solve_global(p4)
    assert len(r1.records) == len(r4.records)
    for a, b in zip(r1.records, r4.records):
        np.testing.assert_allclose(b.freqs, 2.0 * a.freqs, rtol=1e-14)
        sa, sb = scaled_jacobian(chain_problem, a), scaled_jacobian(p4, b)
        np.testing.assert_allclose(sb.Js, sa.Js, atol=1e-10)
        np.testing.assert_allclose(zeta(sb), zeta(sa), atol=1e-10)
        for j in range(2):
            assert abs(eta(sb, j).value - eta(sa, j).value) <= 1e-10
        np.testing.assert_allclose(b.sigma, a.sigma, atol=1e-10)
        # Singular vectors are defined up to sign.
        np.testing.assert_allclose(np.abs(b.U.T @ a.U), np.eye(2), atol=1e-10)


def _five_segment_problem():
    segs = [Segment(1.0, j, 5, elements=2) for j in range(5)]
    labels = [f"E{j + 1}" for j in range(5)] + ["rho"]
    pencil = build_cantilever_beam(segs, n_params=6, labels=labels)
    x_true = np.ones(6)
    targets = solve_modes(pencil, x_true, 6).freqs
    return UpdatingProblem(pencil, ParamBox(0.5 * x_true, 2.0 * x_true, tuple(labels)), targets), x_true


@criterion(9, "last parameter by mu_star is last by zeta on a 5-segment cantilever")
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_diagnostics_sensitivity_concordance(seed):
    problem, x_true = _five_segment_problem()
    rec = solve_local(problem, x_start=x_true)
    assert rec.phi <= 1e-20
    z = zeta(scaled_jacobian(problem, rec))
    rep = elementary_effects(problem, EETDesign(problem.box, r=20, seed=seed))
    imp = importance(rep.mu_star, problem.targets)
    assert int(np.argmin(imp)) == int(np.argmin(z))


@criterion(10, "update and sensitivity outputs are byte-identical across runs")
def test_determinism(tmp_path):
    cfg = {
        "model": {"builder": "spring_chain", "n_dof": 2, "masses": [1, 1], "param_groups": [[0], [1]], "labels": ["k1", "k2"]},
        "box": {"lower": [0.25, 0.25], "upper": [4, 4]},
        "targets": {"from_parameters": [1, 1], "modes": 2},
        "weights": "relative",
        "sensitivity": {"r": 10, "levels": 4, "seed": 3},
    }
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli.main(["update", str(path), "--out", str(out), "--seed", "1"]) == 0
        assert cli.main(["sensitivity", str(path), "--out", str(out), "--seed", "1"]) == 0
        outs.append(out)
    for name in ("minima.json", "summary.csv", "eet.json", "eet.csv", "eet_long.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
