import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from dataset.lattice import build_neighbor_graph, lattice_from_tiles
from model.basis import BasisSystem
from model.estimator import (CollectiveEstimator, FitOptions, ModelFit, aic, degrees_of_freedom, fit, initialize,
                             load_fit, objective, pen2, save_fit, update_basis_coeffs, update_lambda, update_scores,
                             weighted_scores)
from model.spectrum import periodogram_set, smoothed_log_periodogram
from utils.errors import ValidationError

SHAPES = [(2, 3), (1, 4), (2, 2), (3, 2), (1, 6)]


def random_instance(gen):
    rows, cols = SHAPES[gen.integers(len(SHAPES))]
    side = int(gen.choice([6, 8]))
    tiles = gen.standard_normal((rows * cols, side, side)) * gen.uniform(0.5, 2.0, (rows * cols, 1, 1))
    lat = lattice_from_tiles(tiles, rows, cols)
    est = CollectiveEstimator(periodogram_set(lat), BasisSystem.build(side, 4), build_neighbor_graph(rows, cols))
    K = int(gen.integers(1, 3))
    theta = torch.as_tensor(0.2 * gen.standard_normal((16, K)))
    A = torch.as_tensor(0.5 * gen.standard_normal((rows * cols, K)))
    lam1, lam2 = gen.uniform(0.1, 10.0, 2)
    return est, theta, A, float(lam1), float(lam2)


def central_difference(f, x, eps=1e-6):
    out = torch.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.clone(), x.clone()
        xp[idx] += eps
        xm[idx] -= eps
        out[idx] = (f(xp) - f(xm)) / (2 * eps)
    return out


def rel_err(a, b):
    return float(torch.linalg.norm(a - b) / max(float(torch.linalg.norm(b)), 1e-300))


class TestDerivatives:
    def test_gradients_match_finite_differences(self):
        gen = np.random.default_rng(11)
        for _ in range(20):
            est, theta, A, lam1, lam2 = random_instance(gen)
            fd_A = central_difference(lambda X: float(est.objective(theta, X, lam1, lam2)), A)
            fd_T = central_difference(lambda X: float(est.objective(X, A, lam1, lam2)), theta)
            assert rel_err(est.score_gradient(theta, A, lam2), fd_A) <= 1e-5
            assert rel_err(est.basis_gradient(theta, A, lam1), fd_T) <= 1e-5

    def test_hessians_match_gradient_jacobians(self):
        gen = np.random.default_rng(12)
        for _ in range(5):
            est, theta, A, lam1, lam2 = random_instance(gen)
            H = est.score_hessians(theta, A, lam2)
            for i in range(A.shape[0]):
                def grad_row(a_i, i=i):
                    X = A.clone()
                    X[i] = a_i
                    return est.score_gradient(theta, X, lam2)[i]
                J = torch.stack([central_difference(lambda a: float(grad_row(a)[r]), A[i].clone())
                                 for r in range(A.shape[1])])
                assert rel_err(2.0 * H[i], J) <= 1e-5
            for k in range(theta.shape[1]):
                def grad_col(t_k, k=k):
                    X = theta.clone()
                    X[:, k] = t_k
                    return est.basis_gradient(X, A, lam1)[:, k]
                Jk = torch.autograd.functional.jacobian(grad_col, theta[:, k].clone())
                assert rel_err(2.0 * est.basis_hessian(theta, A, k, lam1), Jk) <= 1e-8


class TestSweeps:
    def test_score_sweep_does_not_increase_objective(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        theta, A = initialize(P, basis, 2)
        A = A + 0.3
        before = objective(theta, A, P, basis, graph, 1.0, 5.0)
        A_new = update_scores(theta, A, P, basis, graph, 5.0)
        assert objective(theta, A_new, P, basis, graph, 1.0, 5.0) <= before

    def test_basis_sweep_does_not_increase_objective(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        theta, A = initialize(P, basis, 2)
        theta = theta + 0.1
        before = objective(theta, A, P, basis, graph, 2.0, 0.0)
        theta_new = update_basis_coeffs(theta, A, P, basis, 2.0)
        assert objective(theta_new, A, P, basis, graph, 2.0, 0.0) <= before

    def test_stationary_point_is_kept(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        theta, _ = initialize(P, basis, 1)
        A = np.zeros((P.m, 1))
        theta = np.zeros_like(theta)
        # at U = 0 with I = 1 every gradient vanishes
        P1 = type(P)(I=np.ones_like(P.I), floor=P.floor, side=P.side)
        assert_allclose(update_scores(theta, A, P1, basis, graph, 1.0), A)


class TestFit:
    def test_monotone_descent_within_sweeps(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        model = fit(P, basis, graph, 2, FitOptions(max_iter=25))
        assert len(model.trace) == model.iterations
        for rec in model.trace:
            assert rec.objective <= rec.objective_start + 1e-12 * abs(rec.objective_start)

    def test_unconverged_flag(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        model = fit(P, basis, graph, 2, FitOptions(max_iter=1))
        assert not model.converged
        assert model.iterations == 1

    def test_spatial_off_equals_zero_fixed_lambda2(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        off = fit(P, basis, graph, 2, FitOptions(max_iter=6, spatial=False))
        zero = fit(P, basis, graph, 2, FitOptions(max_iter=6, spatial=True, lambda2=0.0, tune_lambda2=False))
        assert_allclose(off.theta, zero.theta, rtol=1e-12, atol=1e-14)
        assert_allclose(off.A, zero.A, rtol=1e-12, atol=1e-14)
        assert_allclose([r.objective for r in off.trace], [r.objective for r in zero.trace], rtol=1e-12)

    def test_fusion_shrinks_neighbour_differences(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        opts = dict(max_iter=10, tune_lambda1=False, tune_lambda2=False)
        loose = fit(P, basis, graph, 2, FitOptions(spatial=False, **opts))
        tight = fit(P, basis, graph, 2, FitOptions(spatial=True, lambda2=1e3, **opts))
        assert pen2(tight.A, graph) < pen2(loose.A, graph)

    def test_aic_matches_trace(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        model = fit(P, basis, graph, 2, FitOptions(max_iter=8))
        assert_allclose(aic(model, P, basis, graph), model.trace[-1].aic, rtol=1e-10)
        df1, df2 = degrees_of_freedom(model, P, basis, graph)
        assert_allclose([df1, df2], [model.trace[-1].df1, model.trace[-1].df2], rtol=1e-10)

    def test_save_and_load(self, small_problem, tmp_path):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        model = fit(P, basis, graph, 2, FitOptions(max_iter=3))
        save_fit(model, str(tmp_path), meta={'side': 8})
        loaded, meta = load_fit(str(tmp_path))
        assert_allclose(loaded.theta, model.theta, rtol=0, atol=0)
        assert_allclose(loaded.A, model.A, rtol=0, atol=0)
        assert loaded.lambda1 == model.lambda1 and loaded.lambda2 == model.lambda2
        assert len(loaded.trace) == len(model.trace)
        assert meta['side'] == '8' and meta['K'] == '2'


class TestInitialize:
    def test_best_rank_k(self, small_problem):
        P, basis = small_problem['P'], small_problem['basis']
        theta, A = initialize(P, basis, 2)
        U_sp = smoothed_log_periodogram(P, basis)
        u, d, vt = np.linalg.svd(U_sp, full_matrices=False)
        assert_allclose(basis.B @ theta @ A.T, (u[:, :2] * d[:2]) @ vt[:2], atol=1e-10)
        assert_allclose(A.T @ A, np.eye(2), atol=1e-12)

    def test_rank_too_large(self, small_problem):
        with pytest.raises(ValidationError):
            initialize(small_problem['P'], small_problem['basis'], 7)


class TestDegreesOfFreedom:
    def test_limits(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        est = CollectiveEstimator(P, basis, graph)
        theta, A = est.initialize(2)
        df1, df2 = est.degrees_of_freedom(theta, A, 0.0, 0.0)
        assert df1 == 2 * basis.L
        assert df2 == pytest.approx(2 * P.m)
        stiff, _ = est.degrees_of_freedom(theta, A, 1e12, 0.0)
        assert abs(stiff - 4 * 2) < 1e-3
        middle, _ = est.degrees_of_freedom(theta, A, 1.0, 1e6)
        assert 8 < middle < 2 * basis.L

    def test_score_df_matches_eigenvalue_sum(self, small_problem):
        P, basis, graph = small_problem['P'], small_problem['basis'], small_problem['graph']
        est = CollectiveEstimator(P, basis, graph)
        theta, A = est.initialize(2)
        h = np.clip(np.linalg.eigvalsh(est.likelihood_score_hessians(theta, A).numpy()), 0.0, None)
        q = np.diag(graph.fusion_matrix())
        previous = 2 * P.m
        for lam2 in (0.1, 10.0, 1e3, 1e6, 1e12):
            _, df2 = est.degrees_of_freedom(theta, A, 1.0, lam2)
            assert df2 == pytest.approx(np.sum(h / (h + lam2 * q[:, None])), rel=1e-10)
            assert df2 < previous
            previous = df2
        assert previous < 1e-3


class TestLambdaUpdate:
    def test_plain_update(self):
        assert update_lambda(1.0, 5.0) == 5.0

    def test_damped_when_jumping(self):
        assert update_lambda(1.0, 100.0) == pytest.approx(50.5)
        assert update_lambda(1.0, 0.01) == pytest.approx(0.505)

    def test_clamped(self):
        assert update_lambda(1e-8, 0.0) == 1e-8
        assert update_lambda(1e8, np.inf) == 1e8


class TestWeightedScores:
    def test_rank_one_truth(self, small_problem, rng):
        basis = small_problem['basis']
        t = rng.standard_normal(16)
        model = ModelFit(theta=np.stack([t, 0.5 * t], axis=1), A=rng.standard_normal((6, 2)), lambda1=1.0,
                         lambda2=1.0, spatial=True)
        ws = weighted_scores(model, basis)
        assert ws.singular_values[1] / ws.singular_values[0] < 1e-10
        assert_allclose(ws.weights.sum(), 1.0)

    def test_surface_preserved_and_sign_invariant(self, small_problem, rng):
        basis = small_problem['basis']
        theta, A = rng.standard_normal((16, 2)), rng.standard_normal((6, 2))
        model = ModelFit(theta=theta, A=A, lambda1=1.0, lambda2=1.0, spatial=True)
        ws = weighted_scores(model, basis)
        assert_allclose(basis.B @ ws.theta @ ws.A.T, basis.B @ theta @ A.T, atol=1e-10)
        assert np.all(np.diff(ws.singular_values) <= 0)
        flip = np.array([1.0, -1.0])
        flipped = weighted_scores(ModelFit(theta=theta * flip, A=A * flip, lambda1=1.0, lambda2=1.0, spatial=True),
                                  basis)
        assert_allclose(flipped.Astar, ws.Astar, atol=1e-12)
