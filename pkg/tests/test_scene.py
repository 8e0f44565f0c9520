"""Scene generator stages and the multilinear mixing identity."""

import math

import numpy as np
import pytest

from mlmunmix.hsi import HsiCube, validate_abundance
from mlmunmix.metrics import spectral_angle
from mlmunmix.scene import (
    SceneConfig,
    _mlm_mix_all,
    add_awgn,
    gen_abundance_field,
    generate_scene,
    interaction_series,
    mlm_mix,
    sample_transition_probs,
    synth_endmembers,
)


class TestSynthEndmembers:
    def test_paper_scale_dimensions_and_range(self):
        E = synth_endmembers(224, 4, seed=0)
        assert E.shape == (224, 4)
        assert E.min() >= 0.05 - 1e-12
        assert E.max() <= 0.95 + 1e-12

    def test_single_spectrum(self):
        E = synth_endmembers(32, 1, seed=3)
        assert E.shape == (32, 1)

    def test_determinism(self):
        a = synth_endmembers(64, 3, seed=11)
        b = synth_endmembers(64, 3, seed=11)
        assert np.array_equal(a, b)

    def test_pairwise_separation(self):
        E = synth_endmembers(96, 5, seed=1)
        for i in range(5):
            for j in range(i + 1, 5):
                assert spectral_angle(E[:, i], E[:, j]) >= 0.1

    def test_too_few_bands(self):
        with pytest.raises(ValueError):
            synth_endmembers(4, 2, seed=0)


class TestAbundanceField:
    def test_simplex_everywhere(self):
        A = gen_abundance_field(16, 16, 4, 5.0, seed=2)
        assert A.min() >= 0
        assert np.abs(A.sum(axis=2) - 1).max() <= 1e-12

    def test_unit_length_scale_is_nearly_independent(self):
        A = gen_abundance_field(256, 256, 4, 1.0, seed=0)
        ch = A[:, :, 0] - A[:, :, 0].mean()
        lag1 = (ch[:, :-1] * ch[:, 1:]).mean() / ch.var()
        assert abs(lag1) < 0.3

    def test_determinism(self):
        a = gen_abundance_field(8, 8, 3, 4.0, seed=5)
        b = gen_abundance_field(8, 8, 3, 4.0, seed=5)
        assert np.array_equal(a, b)


class TestTransitionProbs:
    def test_seeded_mean_matches_half_normal(self):
        p = sample_transition_probs(1000, 1000, 0.3, seed=0)
        assert abs(p.mean() - 0.3 * math.sqrt(2 / math.pi)) < 1e-3

    def test_all_in_unit_interval(self):
        p = sample_transition_probs(200, 200, 0.3, seed=1)
        assert p.min() >= 0
        assert p.max() <= 1

    def test_zero_replacement_fraction_is_small(self):
        # analytic tail mass beyond 1 is 2*(1 - Phi(1/0.3)) ~ 8.6e-4
        p = sample_transition_probs(1000, 1000, 0.3, seed=0)
        assert (p == 0).mean() < 0.002

    def test_determinism(self):
        a = sample_transition_probs(16, 16, 0.3, seed=9)
        b = sample_transition_probs(16, 16, 0.3, seed=9)
        assert np.array_equal(a, b)


class TestMlmMix:
    def test_p_zero_is_linear_mix(self):
        rng = np.random.default_rng(4)
        E = rng.uniform(0, 1, (12, 3))
        a = rng.dirichlet(np.ones(3))
        x = mlm_mix(E, a, 0.0)
        assert np.abs(x - E @ a).max() < 1e-12

    def test_hand_case(self):
        E = np.array([[0.8, 0.2], [0.4, 0.6]])
        a = np.array([0.5, 0.5])
        x = mlm_mix(E, a, 0.5)
        np.testing.assert_allclose(x, [1 / 3, 1 / 3], atol=1e-12)

    def test_domain_error_when_denominator_vanishes(self):
        E = np.ones((4, 1))
        with pytest.raises(ValueError, match="undefined"):
            mlm_mix(E, np.array([1.0]), 1.0)

    def test_matches_interaction_series(self):
        # The closed form is the limit of the interaction series.  A fixed
        # 30-term truncation only reaches 1e-9 when (P*y)^30 is tiny, so the
        # sum is extended until its analytic geometric tail drops below
        # 1e-10; the literal 30-term cut is checked against its own tail
        # bound alongside.
        rng = np.random.default_rng(6)
        for _ in range(200):
            E = rng.uniform(0, 1, (16, 3))
            a = rng.dirichlet(np.ones(3))
            p = rng.uniform(0, 0.9)
            y = E @ a
            x = mlm_mix(E, a, p)
            pymax = float(p * y.max())
            order = 30
            if pymax > 0:
                tail_target = 1e-10 * (1 - pymax) / max((1 - p) * y.max(), 1e-300)
                if 0 < tail_target < 1:
                    order = max(30, math.ceil(math.log(tail_target) / math.log(pymax)))
            assert np.abs(x - interaction_series(E, a, p, order)).max() <= 1e-9
            tail30 = (1 - p) * y * (p * y) ** 30 / (1 - p * y)
            assert np.abs(x - interaction_series(E, a, p, 30)).max() <= tail30.max() + 1e-12


class TestAwgn:
    def test_realized_snr_within_tenth_of_db(self):
        rng = np.random.default_rng(7)
        cube = HsiCube(rng.uniform(0.1, 0.9, (256, 256, 224)))
        noisy = add_awgn(cube, 30.0, seed=0)
        noise = noisy.values - cube.values
        snr = 10 * np.log10(np.mean(cube.values ** 2) / np.mean(noise ** 2))
        assert abs(snr - 30.0) < 0.1

    def test_none_means_noise_free(self):
        cube = HsiCube(np.full((4, 4, 6), 0.5))
        out = add_awgn(cube, None, seed=0)
        assert np.array_equal(out.values, cube.values)

    def test_determinism(self):
        cube = HsiCube(np.full((8, 8, 12), 0.5))
        a = add_awgn(cube, 25.0, seed=3)
        b = add_awgn(cube, 25.0, seed=3)
        assert np.array_equal(a.values, b.values)


class TestGenerateScene:
    def test_paper_shapes(self):
        cfg = SceneConfig(height=32, width=32, endmembers=4, bands=224, snr_db=30.0, seed=0)
        cube, A, P, E = generate_scene(cfg)
        assert cube.values.shape == (32, 32, 224)
        assert A.shape == (32, 32, 4)
        assert P.shape == (32, 32)
        assert E.shape == (224, 4)
        validate_abundance(A, tol=1e-12)
        assert P.min() >= 0 and P.max() <= 1

    def test_zero_transition_probability_gives_linear_scene(self):
        rng = np.random.default_rng(8)
        E = rng.uniform(0, 1, (16, 3))
        A = rng.dirichlet(np.ones(3), size=10)
        X = _mlm_mix_all(E, A, np.zeros(10))
        assert np.abs(X - A @ E.T).max() < 1e-12

    def test_bitwise_determinism(self):
        cfg = SceneConfig(height=8, width=8, endmembers=3, bands=32, snr_db=25.0,
                          length_scale=3.0, seed=42)
        c1, a1, p1, e1 = generate_scene(cfg)
        c2, a2, p2, e2 = generate_scene(cfg)
        assert np.array_equal(c1.values, c2.values)
        assert np.array_equal(a1, a2)
        assert np.array_equal(p1, p2)
        assert np.array_equal(e1, e2)

    def test_supplied_endmembers_are_used(self):
        E = synth_endmembers(32, 3, seed=1)
        cfg = SceneConfig(height=4, width=4, endmembers=3, bands=32, snr_db=None,
                          length_scale=2.0, seed=0)
        _, _, _, E_out = generate_scene(cfg, E=E)
        assert np.array_equal(E_out, E)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SceneConfig(height=0)
        with pytest.raises(ValueError):
            SceneConfig(sigma=0.0)
        with pytest.raises(ValueError):
            SceneConfig(length_scale=0.5)
