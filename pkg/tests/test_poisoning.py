import numpy as np
import pytest

from semguard.data import Dataset
from semguard.errors import ConfigError, InsufficientSourceSamples, OutOfBounds
from semguard.poisoning import (
    PoisonConfig,
    WatermarkSpec,
    build_training_set,
    embed_watermark,
    read_manifest,
    tagged_set_from_manifest,
    write_manifest,
)


@pytest.fixture
def pool():
    rng = np.random.default_rng(3)
    labels = np.tile(np.arange(10), 1500)  # 1,500 images per class
    return Dataset(rng.uniform(0, 0.9, size=(labels.size, 784)), labels)


def test_corner_patch_on_blank_image():
    out = embed_watermark(np.zeros(784), WatermarkSpec((23, 23), (4, 4), 1.0))
    assert np.sum(out == 1.0) == 16 and np.sum(out == 0.0) == 768
    assert np.all(out.reshape(28, 28)[23:27, 23:27] == 1.0)


def test_zero_area_patch_is_noop(rng):
    x = rng.uniform(size=784)
    np.testing.assert_array_equal(embed_watermark(x, WatermarkSpec((5, 5), (0, 0), 1.0)), x)


def test_embedding_is_idempotent_and_local(rng):
    spec = WatermarkSpec()
    x = rng.uniform(size=784)
    once = embed_watermark(x, spec)
    np.testing.assert_array_equal(embed_watermark(once, spec), once)
    changed = np.flatnonzero(once != x)
    assert set(changed) <= set(np.flatnonzero(spec.mask()))


@pytest.mark.parametrize("anchor,size,intensity", [((25, 25), (4, 4), 1.0), ((0, 0), (29, 1), 1.0), ((0, 0), (2, 2), 1.5)])
def test_bad_watermark(anchor, size, intensity):
    with pytest.raises(OutOfBounds):
        WatermarkSpec(anchor, size, intensity)


def test_bad_poison_config():
    with pytest.raises(ConfigError):
        PoisonConfig(source_label=4, target_label=4)
    with pytest.raises(ConfigError):
        PoisonConfig(ratio=1.0)


def test_five_percent_of_ten_thousand(pool):
    tagged = build_training_set(pool, PoisonConfig(ratio=0.05, training_size=10_000, seed=1))
    assert len(tagged) == 10_000
    assert tagged.poisoned.sum() == 500


@pytest.mark.parametrize("ratio", [0.05, 0.10, 0.20, 0.30, 0.40, 0.50])
def test_poisoned_count_is_rounded_ratio(pool, ratio):
    cfg = PoisonConfig(ratio=ratio, training_size=2_500, seed=2)
    tagged = build_training_set(pool, cfg)
    assert tagged.poisoned.sum() == int(np.floor(ratio * 2_500 + 0.5))


def test_no_attack(pool):
    tagged = build_training_set(pool, PoisonConfig(ratio=0.0, training_size=500))
    assert not tagged.poisoned.any()


def test_poisoned_samples_flip_four_to_one(pool):
    cfg = PoisonConfig(ratio=0.2, training_size=3_000, seed=5)
    tagged = build_training_set(pool, cfg)
    p = tagged.poisoned
    assert np.all(tagged.labels[p] == 1)
    assert np.all(pool.labels[tagged.source_index[p]] == 4)
    mask = cfg.watermark.mask()
    np.testing.assert_array_equal(tagged.pixels[p][:, mask], 1.0)
    np.testing.assert_array_equal(tagged.pixels[p][:, ~mask], pool.pixels[tagged.source_index[p]][:, ~mask])


def test_clean_subset_matches_pool(pool):
    tagged = build_training_set(pool, PoisonConfig(ratio=0.3, training_size=2_000, seed=8))
    c = ~tagged.poisoned
    np.testing.assert_array_equal(tagged.pixels[c], pool.pixels[tagged.source_index[c]])
    np.testing.assert_array_equal(tagged.labels[c], pool.labels[tagged.source_index[c]])
    # poisoned originals never reappear on the clean side
    assert not set(tagged.source_index[c]) & set(tagged.source_index[~c])


def test_deterministic(pool):
    cfg = PoisonConfig(ratio=0.1, training_size=1_000, seed=11)
    a, b = build_training_set(pool, cfg), build_training_set(pool, cfg)
    np.testing.assert_array_equal(a.source_index, b.source_index)
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_insufficient_sources(pool):
    with pytest.raises(InsufficientSourceSamples):
        build_training_set(pool, PoisonConfig(ratio=0.5, training_size=4_000))


def test_manifest_round_trip(tmp_path, pool):
    cfg = PoisonConfig(ratio=0.1, training_size=300, seed=4)
    tagged = build_training_set(pool, cfg)
    identity = np.arange(len(pool))
    write_manifest(tmp_path / "m.json", tagged, cfg, identity, {"seed": 0})
    rebuilt = tagged_set_from_manifest(read_manifest(tmp_path / "m.json"), pool)
    np.testing.assert_array_equal(rebuilt.pixels, tagged.pixels)
    np.testing.assert_array_equal(rebuilt.labels, tagged.labels)
    np.testing.assert_array_equal(rebuilt.poisoned, tagged.poisoned)
