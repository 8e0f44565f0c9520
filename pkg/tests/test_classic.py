"""Classic solvers: FCLS, supervised per-pixel fits, block descent."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlmunmix.classic import (
    SolverConfig,
    fcls,
    fcls_all,
    mlmp_p_step,
    mlmp_unmix,
    project_simplex,
    project_simplex_rows,
    solve_pixel_supervised,
    supervised_unmix_all,
)
from mlmunmix.metrics import match_endmembers, rmse_abundance
from mlmunmix.scene import generate_scene, mlm_mix, SceneConfig, synth_endmembers


class TestSimplexProjection:
    def test_already_on_simplex_is_fixed(self):
        v = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(project_simplex(v), v, atol=1e-15)

    def test_known_case(self):
        np.testing.assert_allclose(project_simplex(np.array([1.0, 1.0])), [0.5, 0.5])

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_output_is_on_simplex_and_idempotent(self, vals):
        v = np.asarray(vals, dtype=np.float64)
        p = project_simplex(v)
        assert p.min() >= 0
        assert abs(p.sum() - 1) < 1e-9
        np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)

    def test_rows_match_single(self):
        rng = np.random.default_rng(0)
        V = rng.normal(0, 2, (20, 5))
        rows = project_simplex_rows(V)
        for i in range(20):
            np.testing.assert_allclose(rows[i], project_simplex(V[i]), atol=1e-12)


class TestFcls:
    def test_recovers_interior_abundance(self):
        rng = np.random.default_rng(1)
        E = synth_endmembers(48, 4, seed=0)
        a_true = rng.dirichlet(np.ones(4) * 5)
        res = fcls(E @ a_true, E)
        assert res.converged
        assert np.sqrt(np.mean((res.a - a_true) ** 2)) < 1e-4

    def test_single_endmember_is_trivial(self):
        E = synth_endmembers(32, 1, seed=1)
        res = fcls(E[:, 0] * 0.7, E)
        np.testing.assert_allclose(res.a, [1.0])

    def test_vertex_case(self):
        E = synth_endmembers(48, 4, seed=2)
        res = fcls(E[:, 2], E)
        expected = np.zeros(4)
        expected[2] = 1.0
        assert np.abs(res.a - expected).max() < 1e-4

    def test_kkt_residual_small(self):
        rng = np.random.default_rng(3)
        E = synth_endmembers(64, 5, seed=3)
        X = rng.dirichlet(np.ones(5), size=100) @ E.T + rng.normal(0, 0.02, (100, 64))
        _, residual, converged = fcls_all(X, E)
        assert converged
        assert residual <= 1e-8

    def test_every_row_on_simplex(self):
        rng = np.random.default_rng(4)
        E = synth_endmembers(32, 3, seed=4)
        A, _, _ = fcls_all(rng.uniform(0, 1, (50, 32)), E)
        assert A.min() >= -1e-12
        assert np.abs(A.sum(1) - 1).max() < 1e-8


class TestSupervised:
    def test_linear_pixel_recovers_fcls_and_zero_p(self):
        rng = np.random.default_rng(5)
        E = synth_endmembers(48, 3, seed=5)
        a_true = rng.dirichlet(np.ones(3) * 4)
        x = E @ a_true  # transition probability exactly zero
        res = solve_pixel_supervised(x, E)
        ref = fcls(x, E)
        assert abs(res.p) < 1e-3
        assert np.abs(res.a - ref.a).max() < 1e-3

    def test_nonlinear_pixels_inverted(self):
        rng = np.random.default_rng(6)
        E = synth_endmembers(48, 3, seed=6)
        n = 40
        A_true = rng.dirichlet(np.ones(3) * 2, size=n)
        X = np.stack([mlm_mix(E, A_true[i], 0.4) for i in range(n)])
        cfg = SolverConfig(multi_start=3, seed=0)
        A, P, _ = supervised_unmix_all(X, E, cfg)
        rmse_rows = np.sqrt(np.mean((A - A_true) ** 2, axis=1))
        assert rmse_rows.max() < 1e-2
        assert np.abs(P - 0.4).max() < 5e-2

    def test_solution_at_least_as_good_as_truth(self):
        rng = np.random.default_rng(7)
        E = synth_endmembers(32, 3, seed=7)
        a_true = rng.dirichlet(np.ones(3))
        p_true = 0.3
        x = mlm_mix(E, a_true, p_true)
        res = solve_pixel_supervised(x, E)
        y = E @ a_true
        truth_obj = float(((x - (1 - p_true) * y / (1 - p_true * y)) ** 2).sum())
        assert res.objective <= truth_obj + 1e-10

    def test_returned_p_below_one(self):
        rng = np.random.default_rng(8)
        E = synth_endmembers(32, 2, seed=8)
        x = rng.uniform(0.2, 0.9, 32)
        res = solve_pixel_supervised(x, E)
        assert res.p <= 1 - 1e-6
        assert res.a.min() >= -1e-12
        assert abs(res.a.sum() - 1) < 1e-8


class TestPStep:
    def test_hand_case(self):
        p = mlmp_p_step(np.array([1 / 3, 1 / 3]), np.array([0.5, 0.5]))
        np.testing.assert_allclose(p, 0.5, atol=1e-12)

    def test_equal_vectors_give_zero(self):
        y = np.array([0.4, 0.6])
        assert mlmp_p_step(y.copy(), y) == 0.0

    def test_matches_grid_search(self):
        rng = np.random.default_rng(9)
        grid = np.linspace(0.0, 1.0, 10001)
        for _ in range(60):
            y = rng.uniform(0.05, 0.95, 24)
            x = rng.uniform(0.05, 0.95, 24)
            closed = mlmp_p_step(x, y)
            resid = (1 - grid)[:, None] * y + grid[:, None] * (y * x) - x
            best = grid[np.argmin((resid ** 2).sum(1))]
            assert abs(closed - best) <= 2e-4


@pytest.fixture(scope="module")
def small_scene():
    cfg = SceneConfig(height=32, width=32, endmembers=3, bands=32, snr_db=None,
                      length_scale=8.0, seed=3)
    cube, A, P, E = generate_scene(cfg)
    return cube.as_pixel_matrix(), A.reshape(-1, 3), P.ravel(), E


class TestMlmp:

    def test_objective_trace_non_increasing(self, small_scene):
        X, _, _, E = small_scene
        res = mlmp_unmix(X, 3, cfg=SolverConfig(max_outer=25, seed=0))
        trace = np.asarray(res.trace)
        assert np.all(np.diff(trace) <= 1e-9 * np.maximum(trace[:-1], 1.0))

    def test_noise_free_abundance_recovery(self, small_scene):
        X, A_true, _, E_true = small_scene
        res = mlmp_unmix(X, 3, cfg=SolverConfig(max_outer=60, seed=0))
        perm = match_endmembers(res.endmembers, E_true)
        err = rmse_abundance(res.abundance.reshape(32, 32, 3), A_true.reshape(32, 32, 3), perm)
        assert err < 5e-2

    def test_fixed_truth_endmembers_on_linear_data_reduces_to_fcls(self):
        rng = np.random.default_rng(13)
        E = synth_endmembers(32, 3, seed=13)
        A_true = rng.dirichlet(np.ones(3), size=200)
        X = A_true @ E.T  # all transition probabilities zero
        res = mlmp_unmix(X, 3, E_init=E, update_endmembers=False,
                         cfg=SolverConfig(max_outer=40, seed=0))
        A_ref, _, _ = fcls_all(X, E)
        assert np.abs(res.abundance - A_ref).max() < 1e-3

    def test_constraints_hold(self, small_scene):
        X, _, _, _ = small_scene
        res = mlmp_unmix(X, 3, cfg=SolverConfig(max_outer=10, seed=1))
        assert res.abundance.min() >= -1e-8
        assert np.abs(res.abundance.sum(1) - 1).max() < 1e-8
        assert res.p.max() <= 1.0
        assert res.p.min() >= 0.0
        assert res.endmembers.min() >= 0.0
        assert res.endmembers.max() <= 1.0
