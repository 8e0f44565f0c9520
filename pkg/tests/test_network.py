"""Architecture builders, forward invariants, training loop, checkpoints."""

import numpy as np
import pytest

from mlmunmix.autodiff import constant, sad_loss
from mlmunmix.hsi import HsiCube
from mlmunmix.network import (
    ArchitectureError,
    NetworkSpec,
    TrainConfig,
    TrainingDivergedError,
    _forward,
    build_dnnsc,
    build_encoder_1d,
    build_encoder_3d,
    extract_endmembers,
    forward_unmix,
    infer_maps,
    init_network,
    load_checkpoint,
    save_checkpoint,
    train,
)
from mlmunmix.optim import gradient_check
from mlmunmix.scene import SceneConfig, generate_scene


class TestEncoder1d:
    def test_full_scale_trace(self):
        plan = build_encoder_1d(224, 4)
        assert plan.spectral_trace == [224, 218, 72, 66, 22, 16, 5, 1]
        assert [b.kernel for b in plan.blocks] == [(7,), (7,), (7,), (5,)]
        assert [b.channels for b in plan.blocks] == [32, 16, 8, 4]
        assert [b.pool for b in plan.blocks] == [True, True, True, False]

    def test_156_bands_adapts_final_kernel(self):
        plan = build_encoder_1d(156, 3)
        assert plan.spectral_trace == [156, 150, 50, 44, 14, 8, 2, 1]
        assert plan.blocks[-1].kernel == (2,)

    def test_downsized_network_still_builds(self):
        # shrunken kernels and dropped pools keep tiny band counts viable
        plan = build_encoder_1d(32, 3)
        assert plan.spectral_trace[-1] == 1
        assert [b.channels for b in plan.blocks] == [24, 12, 6, 3]

    def test_too_few_bands_is_an_architecture_error(self):
        with pytest.raises(ArchitectureError, match="block 1"):
            build_encoder_1d(6, 3)


class TestEncoder3d:
    def test_full_scale_trace(self):
        plan = build_encoder_3d(224, 4, 5)
        assert plan.spatial_trace == [5, 3, 1]
        assert plan.spectral_trace == [224, 218, 72, 66, 22, 16, 5, 1]
        assert plan.blocks[0].kernel == (3, 3, 7)   # max(3, odd(ceil(5/3))) = 3
        assert plan.blocks[1].kernel == (3, 3, 7)
        assert plan.blocks[2].kernel == (1, 1, 7)
        assert plan.blocks[3].kernel == (1, 1, 5)

    def test_patch3_uses_unit_spatial_kernel_in_block2(self):
        plan = build_encoder_3d(224, 4, 3)
        assert plan.spatial_trace == [3, 1, 1]
        assert plan.blocks[1].kernel[0] == 1

    def test_larger_patches_reach_one(self):
        for s in (7, 9):
            plan = build_encoder_3d(224, 4, s)
            assert plan.spatial_trace[-1] == 1

    def test_even_patch_rejected(self):
        with pytest.raises(ArchitectureError):
            build_encoder_3d(224, 4, 4)


class TestLadder:
    def test_full_scale_dims(self):
        plan = build_dnnsc(224)
        assert (plan.feature, plan.mid1, plan.half) == (448, 224, 112)
        assert (plan.mid2, plan.out) == (28, 2)

    def test_156_dims(self):
        plan = build_dnnsc(156)
        assert (plan.feature, plan.mid1, plan.half, plan.mid2) == (312, 156, 78, 19)

    def test_output_always_two(self):
        for b in (16, 17, 100, 224):
            assert build_dnnsc(b).out == 2

    def test_minimum_width_floor(self):
        assert build_dnnsc(17).mid2 == 4

    def test_too_narrow_rejected(self):
        with pytest.raises(ArchitectureError):
            build_dnnsc(8)


@pytest.fixture(scope="module")
def tiny_scene():
    cfg = SceneConfig(height=12, width=12, endmembers=3, bands=36, snr_db=30.0,
                      length_scale=4.0, seed=7)
    return generate_scene(cfg)


@pytest.fixture(scope="module")
def tiny_net(tiny_scene):
    _, _, _, E = tiny_scene
    spec = NetworkSpec("1d", 36, 3, seed=1)
    return init_network(spec, np.clip(E, 0, 1))


class TestInit:
    def test_decoder_weights_equal_initializer(self, tiny_scene):
        *_, E = tiny_scene
        net = init_network(NetworkSpec("1d", 36, 3, seed=0), E)
        np.testing.assert_array_equal(extract_endmembers(net), E)

    def test_same_seed_same_parameters(self, tiny_scene):
        *_, E = tiny_scene
        spec = NetworkSpec("1d", 36, 3, seed=5)
        n1, n2 = init_network(spec, E), init_network(spec, E)
        for a, b in zip(n1.parameters(), n2.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_different_seeds_differ_except_decoder(self, tiny_scene):
        *_, E = tiny_scene
        n1 = init_network(NetworkSpec("1d", 36, 3, seed=1), E)
        n2 = init_network(NetworkSpec("1d", 36, 3, seed=2), E)
        assert np.array_equal(n1.decoder_weights.data, n2.decoder_weights.data)
        diffs = [not np.array_equal(a.data, b.data)
                 for (na, a), (nb, b) in zip(n1.params.items(), n2.params.items())
                 if na != "decoder.weights"]
        assert all(diffs)

    def test_initializer_shape_checked(self):
        with pytest.raises(ValueError):
            init_network(NetworkSpec("1d", 36, 3), np.ones((36, 4)) * 0.5)


class TestForward:
    def test_abundance_on_simplex(self, tiny_net):
        rng = np.random.default_rng(0)
        a, p, _ = forward_unmix(tiny_net, rng.uniform(0, 1, 36))
        assert a.min() > 0
        assert abs(a.sum() - 1.0) < 1e-12
        assert 0.0 < p < 1.0

    def test_probability_strictly_inside_unit_interval(self, tiny_net):
        rng = np.random.default_rng(1)
        batch = rng.uniform(0, 1, (64, 36))
        _, p, _ = forward_unmix(tiny_net, batch)
        assert np.all(p > 0) and np.all(p < 1)

    def test_forced_negligible_probability_reduces_to_linear_mix(self, tiny_net):
        rng = np.random.default_rng(2)
        x = rng.uniform(0.1, 0.9, 36)
        a, p, xhat = forward_unmix(tiny_net, x, override_logits=(40.0, -40.0))
        assert p < 1e-30
        yhat = extract_endmembers(tiny_net) @ a
        assert np.abs(xhat - yhat).max() < 1e-12

    def test_batched_forward_matches_single(self, tiny_net):
        # identical math; summation order may differ by a few ulp in BLAS
        rng = np.random.default_rng(3)
        batch = rng.uniform(0, 1, (5, 36))
        ab, pb, rb = forward_unmix(tiny_net, batch)
        for i in range(5):
            a, p, r = forward_unmix(tiny_net, batch[i])
            np.testing.assert_allclose(ab[i], a, rtol=0, atol=1e-12)
            np.testing.assert_allclose(rb[i], r, rtol=0, atol=1e-12)

    def test_3d_uses_patch_center(self):
        rng = np.random.default_rng(4)
        spec = NetworkSpec("3d", 20, 2, patch=3, seed=0)
        net = init_network(spec, rng.uniform(0.2, 0.8, (20, 2)))
        patch = rng.uniform(0.1, 0.9, (3, 3, 20))
        a, p, xhat = forward_unmix(net, patch, override_logits=(40.0, -40.0))
        yhat = extract_endmembers(net) @ a
        assert np.abs(xhat - yhat).max() < 1e-12


class TestFullNetworkGradients:
    def test_1d_gradients_match_finite_differences(self, tiny_net):
        rng = np.random.default_rng(5)
        x = rng.uniform(0.1, 0.9, 36)

        def loss_fn():
            _, _, recon, xpix = _forward(tiny_net, constant(x))
            return sad_loss(xpix, recon)

        report = gradient_check(loss_fn, tiny_net.parameters(), max_coords=40, seed=0)
        assert report.max_rel_error < 1e-4

    def test_3d_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        spec = NetworkSpec("3d", 17, 3, patch=3, seed=3)
        net = init_network(spec, rng.uniform(0.2, 0.8, (17, 3)))
        patch = rng.uniform(0.1, 0.9, (3, 3, 17))

        def loss_fn():
            _, _, recon, xpix = _forward(net, constant(patch))
            return sad_loss(xpix, recon)

        report = gradient_check(loss_fn, net.parameters(), max_coords=40, seed=0)
        assert report.max_rel_error < 1e-4


class TestTraining:
    def test_loss_history_and_projection(self, tiny_scene):
        cube, *_ , E = tiny_scene
        net = init_network(NetworkSpec("1d", 36, 3, seed=2), E)
        tcfg = TrainConfig(batch_size=32, epochs=4, shuffle_seed=0)
        history = train(net, cube, tcfg)
        assert len(history) == 4
        assert history[-1] < history[0]
        W = net.decoder_weights.data
        assert W.min() >= 0.0 and W.max() <= 1.0

    def test_reproducible_history(self, tiny_scene):
        cube, *_, E = tiny_scene
        runs = []
        for _ in range(2):
            net = init_network(NetworkSpec("1d", 36, 3, seed=2), E)
            runs.append(train(net, cube, TrainConfig(batch_size=32, epochs=3, shuffle_seed=1)))
        assert runs[0] == runs[1]

    def test_3d_training_smoke(self, tiny_scene):
        cube, *_, E = tiny_scene
        net = init_network(NetworkSpec("3d", 36, 3, patch=3, seed=2), E)
        history = train(net, cube, TrainConfig(batch_size=48, epochs=2, shuffle_seed=0))
        assert len(history) == 2
        assert np.isfinite(history).all()

    def test_band_mismatch_rejected(self, tiny_scene):
        *_, E = tiny_scene
        net = init_network(NetworkSpec("1d", 36, 3, seed=0), E)
        with pytest.raises(ValueError, match="bands"):
            train(net, HsiCube(np.zeros((4, 4, 20))), TrainConfig(epochs=1))

    def test_divergence_reports_location(self, tiny_scene):
        cube, *_, E = tiny_scene
        net = init_network(NetworkSpec("1d", 36, 3, seed=0), E)
        net.params["ladder.block1.main_in"].data[:] = np.nan
        with pytest.raises(TrainingDivergedError, match="epoch 0"):
            train(net, cube, TrainConfig(batch_size=32, epochs=1))


class TestInference:
    def test_maps_satisfy_invariants(self, tiny_scene, tiny_net):
        cube, *_ = tiny_scene
        A, P, recon = infer_maps(tiny_net, cube, chunk=50)
        assert A.shape == (12, 12, 3)
        assert np.abs(A.sum(2) - 1).max() < 1e-6
        assert A.min() >= 0
        assert P.min() >= 0 and P.max() <= 1
        assert recon.values.shape == cube.values.shape

    def test_reconstruction_loss_matches_training_loss(self, tiny_scene):
        # same net, same data: the mean angle of inference reconstructions
        # equals a full-batch training-loss evaluation
        cube, *_, E = tiny_scene
        net = init_network(NetworkSpec("1d", 36, 3, seed=4), E)
        _, _, recon = infer_maps(net, cube)
        from mlmunmix.metrics import sad_pixels
        inferred = sad_pixels(cube.values, recon.values)
        hist = train(net, cube, TrainConfig(batch_size=cube.n_pixels, epochs=1, shuffle_seed=0))
        assert abs(hist[0] - inferred) < 1e-9


class TestCheckpoint:
    def test_roundtrip_is_exact(self, tiny_net, tmp_path):
        path = tmp_path / "net.mlmnet"
        save_checkpoint(tiny_net, path)
        back = load_checkpoint(path)
        assert back.spec == tiny_net.spec
        for (na, a), (nb, b) in zip(tiny_net.params.items(), back.params.items()):
            assert na == nb
            assert np.array_equal(a.data, b.data)

    def test_roundtrip_preserves_forward(self, tiny_net, tmp_path):
        path = tmp_path / "net.mlmnet"
        save_checkpoint(tiny_net, path)
        back = load_checkpoint(path)
        x = np.random.default_rng(8).uniform(0, 1, 36)
        for got, want in zip(forward_unmix(back, x), forward_unmix(tiny_net, x)):
            np.testing.assert_array_equal(got, want)

    def test_truncated_payload_rejected(self, tiny_net, tmp_path):
        path = tmp_path / "net.mlmnet"
        save_checkpoint(tiny_net, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(path)
