import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semguard.autoencoder import (
    ModelParams,
    TrainConfig,
    classify,
    decode,
    encode,
    gradient_check,
    load_checkpoint,
    loss_and_gradients,
    loss_cce,
    loss_mse,
    loss_total,
    one_hot,
    save_checkpoint,
    softmax,
    train,
)
from semguard.data import load_dataset
from semguard.errors import (
    ConfigError,
    DimensionMismatch,
    DivergedLoss,
    EmptyDataset,
    ProbabilityOutOfRange,
    SigmaOutOfRange,
)
from semguard.poisoning import WatermarkSpec, embed_watermark


def toy(seed=0, jitter=0.1):
    """784-free toy network: 6 inputs, 5 hidden, 3 latent, 4 classes."""
    rng = np.random.default_rng(seed)
    p = ModelParams.glorot(rng, 6, 5, 3, 4)
    for a in p.arrays().values():
        a += rng.normal(0, jitter, a.shape)
    return p, rng.uniform(0, 1, (4, 6)), rng.integers(0, 4, 4)


def test_encode_deterministic(rng):
    p = ModelParams.glorot(rng)
    x = rng.uniform(size=784)
    np.testing.assert_array_equal(encode(p, x), encode(p, x))
    assert encode(p, x).shape == (32,)


def test_zero_model():
    p = ModelParams.zeros()
    np.testing.assert_array_equal(encode(p, np.ones(784)), np.zeros(32))
    np.testing.assert_array_equal(decode(p, np.zeros(32)), np.full(784, 0.5))
    np.testing.assert_allclose(classify(p, np.zeros(32)), np.full(10, 0.1))


def test_dimension_checks(rng):
    p = ModelParams.glorot(rng)
    with pytest.raises(DimensionMismatch):
        decode(p, np.zeros(31))
    with pytest.raises(DimensionMismatch):
        classify(p, np.zeros(33))
    with pytest.raises(DimensionMismatch):
        encode(p, np.zeros(100))


def test_decode_range(rng):
    p = ModelParams.glorot(rng)
    out = decode(p, encode(p, rng.uniform(size=(5, 784))))
    assert out.shape == (5, 784) and np.all((out > 0) & (out < 1))


@settings(deadline=None)
@given(arrays(np.float64, (3, 10), elements=st.floats(-1e3, 1e3)))
def test_softmax_sums_to_one(logits):
    p = softmax(logits)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_cce_closed_forms():
    y = one_hot(np.array([3, 7]))
    assert loss_cce(y, y) == pytest.approx(0.0, abs=1e-12)
    assert loss_cce(np.full((2, 10), 0.1), y) == pytest.approx(math.log(10), abs=1e-9)
    p = np.full((2, 10), 0.05)
    p[0, 3], p[1, 7] = 0.55, 0.1
    per_sample = [-math.log(0.55), -math.log(0.1)]
    assert loss_cce(p, y) == pytest.approx(np.mean(per_sample))
    with pytest.raises(ProbabilityOutOfRange):
        loss_cce(np.full((1, 10), 1.5), one_hot(np.array([0])))


def test_mse_closed_forms():
    assert loss_mse(np.zeros(784), np.zeros(784)) == 0.0
    assert loss_mse(np.zeros(784), np.ones(784)) == 1.0
    assert loss_mse(np.zeros(784), np.full(784, 0.5)) == 0.25
    with pytest.raises(DimensionMismatch):
        loss_mse(np.zeros(784), np.zeros(783))


def test_total_loss():
    assert loss_total(2.0, 0.5, 1.0) == 2.0
    assert loss_total(2.0, 0.5, 0.0) == 0.5
    assert loss_total(2.0, 0.5, 0.5) == 1.25
    with pytest.raises(SigmaOutOfRange):
        loss_total(1.0, 1.0, 1.1)


@given(st.floats(0, 1), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_total_loss_linear(sigma, a, b, k):
    assert loss_total(k * a, k * b, sigma) == pytest.approx(k * loss_total(a, b, sigma), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("sigma", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(sigma, seed):
    p, x, y = toy(seed)
    assert gradient_check(p, x, y, sigma, 1e-5) < 1e-4


def test_gradient_check_catches_corruption():
    p, x, y = toy(0)

    def doubled(params, x, y1h, sigma):
        loss, grads = loss_and_gradients(params, x, y1h, sigma)
        grads["dec1_w"] = 2 * grads["dec1_w"]
        return loss, grads

    assert gradient_check(p, x, y, 0.5, 1e-5, grad_fn=doubled) > 0.1


def test_gradient_check_zero_model():
    _, x, y = toy(0)
    err = gradient_check(ModelParams.zeros(6, 5, 3, 4), x, y, 0.5)
    assert np.isfinite(err)


def test_encoding_ignores_labels(rng):
    x = rng.uniform(size=(50, 784))
    labels = rng.integers(0, 10, 50)
    cfg = TrainConfig(epochs=1, batch_size=16, seed=3, hidden=8, latent=4)
    p, _ = train(x, labels, cfg)
    np.testing.assert_array_equal(encode(p, x[:7]), encode(p, x[:7].copy()))


def test_training_is_reproducible(rng):
    x = rng.uniform(size=(200, 784))
    labels = rng.integers(0, 10, 200)
    cfg = TrainConfig(epochs=2, batch_size=32, seed=7, hidden=16, latent=4)
    (a, ha), (b, hb) = train(x, labels, cfg), train(x, labels, cfg)
    for name, arr in a.arrays().items():
        np.testing.assert_array_equal(arr, b.arrays()[name])
    assert ha == hb
    assert [h["epoch"] for h in ha] == [0, 1, 2]


def test_training_errors():
    with pytest.raises(EmptyDataset):
        train(np.zeros((0, 784)), np.zeros(0, int), TrainConfig())
    with pytest.raises(DivergedLoss), np.errstate(all="ignore"):
        train(np.full((64, 784), 1e200), np.zeros(64, int), TrainConfig(epochs=1, hidden=4, latent=2))
    with pytest.raises(SigmaOutOfRange):
        TrainConfig(sigma=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)


def test_checkpoint_round_trip(tmp_path, rng):
    p = ModelParams.glorot(rng)
    p.meta = {"sigma": 0.5, "seed": 1}
    save_checkpoint(tmp_path / "m.ckpt", p)
    q = load_checkpoint(tmp_path / "m.ckpt")
    x = rng.uniform(size=(3, 784))
    np.testing.assert_array_equal(encode(p, x), encode(q, x))
    assert q.meta["d_latent"] == 32 and q.meta["sigma"] == 0.5


# -- reference run on MNIST (shared session model) ---------------------------


@pytest.mark.mnist
def test_reference_training_run(phase_one, mnist_paths):
    history = phase_one.history
    assert history[-1]["total"] <= 0.5 * history[0]["total"]
    if mnist_paths["test_images"] is None:
        pytest.skip("t10k files missing")
    test = load_dataset(mnist_paths["test_images"], mnist_paths["test_labels"])
    z = encode(phase_one.params, test.pixels)
    accuracy = np.mean(classify(phase_one.params, z).argmax(axis=1) == test.labels)
    mse = loss_mse(test.pixels, decode(phase_one.params, z))
    print(f"held-out accuracy {accuracy:.4f}, reconstruction MSE {mse:.4f}")
    assert accuracy >= 0.90
    assert mse < 0.05


@pytest.mark.mnist
def test_watermark_moves_latent(phase_one):
    fours = phase_one.split.pool.pixels[phase_one.split.pool.labels == 4][:50]
    clean = encode(phase_one.params, fours)
    marked = encode(phase_one.params, embed_watermark(fours, WatermarkSpec()))
    assert np.all(np.any(clean != marked, axis=1))
