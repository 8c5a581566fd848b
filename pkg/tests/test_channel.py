import numpy as np
import pytest

from semguard.channel import Channel, ChannelSpec, transmit
from semguard.errors import ConfigError, NonFiniteInput


def test_identity_is_exact(rng):
    v = rng.normal(size=32)
    np.testing.assert_array_equal(transmit(ChannelSpec("identity", 5.0), v), v)


def test_zero_noise_awgn_is_exact(rng):
    v = rng.normal(size=32)
    np.testing.assert_array_equal(transmit(ChannelSpec("awgn", 0.0), v), v)


def test_awgn_mean_stays_near_zero():
    ch = Channel(ChannelSpec("awgn", 0.1, seed=2024))
    out = np.stack([ch.transmit(np.zeros(8)) for _ in range(10_000)])
    assert out.shape == (10_000, 8)
    assert np.all(np.abs(out.mean(axis=0)) <= 3 * 0.1 / np.sqrt(10_000))


@pytest.mark.parametrize("spec", [ChannelSpec(), ChannelSpec("awgn", 0.3, seed=1)])
def test_dimension_preserved(spec, rng):
    assert transmit(spec, rng.normal(size=(4, 16))).shape == (4, 16)


def test_errors():
    with pytest.raises(NonFiniteInput):
        transmit(ChannelSpec(), np.array([0.0, np.nan]))
    with pytest.raises(ConfigError):
        ChannelSpec("fading")
    with pytest.raises(ConfigError):
        ChannelSpec("awgn", -1.0)


def test_seeded_noise_repeats(rng):
    v = rng.normal(size=10)
    spec = ChannelSpec("awgn", 0.5, seed=9)
    np.testing.assert_array_equal(transmit(spec, v), transmit(spec, v))
