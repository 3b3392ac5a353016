import numpy as np
import pytest

from headfit.camera import Landmarks2D
from headfit.synth import Dataset, Observation, SynthConfig, make_dataset
from headfit.training import (Adam, FitConfig, TrainConfig, ablate_ring_size,
                              build_ring_batch, fit_single, train)

FAST = TrainConfig(ring_size=3, slices=1, steps=4, hidden=32, seed=5)


def test_adam_matches_reference_update(rng):
    # one step from zero moments: update direction is -lr * sign(grad)
    params = {"w": np.array([1.0, -2.0])}
    grads = {"w": np.array([0.5, -3.0])}
    opt = Adam(learning_rate=0.1)
    opt.step(params, grads)
    expect = np.array([1.0, -2.0]) - 0.1 * np.sign([0.5, -3.0]) \
        / (1.0 + 1e-8 / np.sqrt(1 - 0.999))
    assert np.allclose(params["w"], expect, atol=1e-6)


def test_ring_batch_slice_structure(tiny_dataset, rng):
    batch = build_ring_batch(tiny_dataset, rng, ring_size=3, n_slices=5)
    assert len(batch) == 5
    for chunk in batch:
        assert len(chunk) == 3
        matched = {obs.identity for obs in chunk[:-1]}
        assert len(matched) == 1
        assert chunk[-1].identity not in matched


def test_ring_batch_replicates_scarce_identities(small_model, rng):
    # two observations per identity but rings need five matched slots
    ds = make_dataset(small_model, SynthConfig(identities=2, per_identity=2,
                                               seed=3))
    batch = build_ring_batch(ds, rng, ring_size=6, n_slices=2)
    for chunk in batch:
        matched = chunk[:-1]
        assert len(matched) == 5
        assert len({obs.identity for obs in matched}) == 1
        # duplicates must differ through augmentation jitter
        positions = [obs.landmarks.positions.tobytes() for obs in matched]
        assert len(set(positions)) > 1


def test_ring_batch_needs_two_identities(small_model, rng):
    ds = make_dataset(small_model, SynthConfig(identities=2, per_identity=3,
                                               seed=3))
    lone = Dataset([o for o in ds.observations if o.identity == 0],
                   ds.n_shape, ds.n_expr, ds.n_landmarks)
    with pytest.raises(ValueError):
        build_ring_batch(lone, rng, ring_size=3, n_slices=1)
    with pytest.raises(ValueError):
        build_ring_batch(ds, rng, ring_size=1, n_slices=1)


def test_zero_steps_returns_initial_weights(small_model, tiny_dataset):
    config = TrainConfig(steps=0, hidden=16, seed=1)
    weights, history = train(tiny_dataset, small_model, config)
    assert history == []
    fresh, _ = train(tiny_dataset, small_model, config)
    for name, block in weights.blocks().items():
        assert np.array_equal(block, fresh.blocks()[name])


def test_training_smoke_halves_loss(small_model):
    ds = make_dataset(small_model, SynthConfig(identities=4, per_identity=6,
                                               seed=13))
    config = TrainConfig(ring_size=3, slices=1, steps=200, hidden=64, seed=2)
    _, history = train(ds, small_model, config)
    assert history[-1].total < 0.5 * history[0].total


def test_training_trend_is_decreasing(small_model):
    ds = make_dataset(small_model, SynthConfig(identities=4, per_identity=6,
                                               seed=13))
    config = TrainConfig(ring_size=3, slices=1, steps=200, hidden=64, seed=2)
    _, history = train(ds, small_model, config)
    totals = [row.total for row in history]
    tail = np.mean(totals[-len(totals) // 10:])
    head = np.mean(totals[:len(totals) // 10])
    assert tail < head


def test_training_deterministic_per_seed(small_model, tiny_dataset):
    w1, h1 = train(tiny_dataset, small_model, FAST)
    w2, h2 = train(tiny_dataset, small_model, FAST)
    assert h1 == h2
    for name, block in w1.blocks().items():
        assert np.array_equal(block, w2.blocks()[name])


def test_training_ignores_hidden_truth(small_model, tiny_dataset):
    scrambled = Dataset(
        [Observation(o.landmarks, o.identity,
                     type(o.truth).zeros(tiny_dataset.n_shape,
                                         tiny_dataset.n_expr))
         for o in tiny_dataset.observations],
        tiny_dataset.n_shape, tiny_dataset.n_expr, tiny_dataset.n_landmarks)
    _, h_real = train(tiny_dataset, small_model, FAST)
    _, h_fake = train(scrambled, small_model, FAST)
    assert h_real == h_fake


def test_epochs_map_to_steps(small_model, tiny_dataset):
    config = TrainConfig(ring_size=3, slices=2, epochs=2, hidden=16, seed=0)
    _, history = train(tiny_dataset, small_model, config)
    # 24 observations / (3 * 2) per step = 4 steps per epoch
    assert len(history) == 8


# ---------------------------------------------------------------------------
# fit_single


def test_fit_single_fixed_point(small_model):
    config = SynthConfig(pixel_noise=0.0, drop_prob=0.0, seed=21)
    ds = make_dataset(small_model, SynthConfig(identities=2, per_identity=1,
                                               pixel_noise=0.0, drop_prob=0.0,
                                               seed=21))
    obs = ds.observations[0]
    fitted = fit_single(obs, small_model, init=obs.truth,
                        config=FitConfig(iters=25))
    assert np.array_equal(fitted.to_vector(), obs.truth.to_vector())
    del config


def test_fit_single_from_zero_reaches_subpixel_residual(small_model):
    ds = make_dataset(small_model, SynthConfig(identities=2, per_identity=1,
                                               pixel_noise=0.0, drop_prob=0.0,
                                               seed=33))
    obs = ds.observations[0]
    fitted = fit_single(obs, small_model,
                        config=FitConfig(iters=600, learning_rate=0.05))

    from headfit import autodiff as ad
    from headfit.camera import landmarks3d, project, yaw_from_rotation
    from headfit.headmodel import decode
    mesh = decode(small_model, fitted)
    with ad.no_grad():
        yaw = yaw_from_rotation(ad.rodrigues(fitted.global_rot)).item()
        pts = landmarks3d(mesh.vertices, small_model.faces,
                          small_model.landmarks, yaw).value
        cam = small_model.cam_link.params_from_raw(
            fitted.cam, small_model.cam_link.anchor(obs.landmarks))
        projected = project(pts, cam)
    residual = np.abs(projected - obs.landmarks.positions).mean()
    assert residual < 1.0


def test_fit_single_rejects_unconfident_observation(small_model):
    sparse = Landmarks2D(np.zeros((10, 2)), np.zeros(10))
    with pytest.raises(ValueError):
        fit_single(sparse, small_model)


# ---------------------------------------------------------------------------
# ablation


def test_ablation_rows_and_determinism(small_model):
    train_ds = make_dataset(small_model, SynthConfig(identities=3,
                                                     per_identity=4, seed=1))
    val_ds = make_dataset(small_model, SynthConfig(identities=2,
                                                   per_identity=2, seed=99))
    config = TrainConfig(slices=1, steps=5, hidden=16, seed=4)
    rows = ablate_ring_size(train_ds, val_ds, small_model, [3, 4], config,
                            align="landmarks")
    assert [row.ring_size for row in rows] == [3, 4]
    for row in rows:
        assert row.median_mm >= 0.0 and row.std_mm >= 0.0

    again = ablate_ring_size(train_ds, val_ds, small_model, [3], config,
                             align="landmarks")
    assert again[0] == rows[0]


def test_ablation_rejects_small_rings(small_model, tiny_dataset):
    with pytest.raises(ValueError):
        ablate_ring_size(tiny_dataset, tiny_dataset, small_model, [2],
                         TrainConfig(steps=1))


def test_divergence_reports_step(small_model, tiny_dataset):
    from headfit.encoder import EncoderWeights

    cfg = TrainConfig(ring_size=3, slices=1, steps=10, hidden=16, seed=5)
    broken = EncoderWeights.init(np.random.default_rng(0),
                                 tiny_dataset.n_landmarks,
                                 tiny_dataset.n_shape, tiny_dataset.n_expr,
                                 hidden=16, iterations=cfg.iterations,
                                 dropout=cfg.dropout)
    broken.w1[:] = 1e200  # first matmul overflows to inf
    with pytest.raises(RuntimeError, match="diverged at step"):
        train(tiny_dataset, small_model, cfg, initial=broken)
