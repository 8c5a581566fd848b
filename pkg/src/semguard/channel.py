"""Transmission stage between encoder and decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from semguard.errors import ConfigError, NonFiniteInput

KINDS = ("identity", "awgn")


@dataclass(frozen=True)
class ChannelSpec:
    kind: str = "identity"
    noise_stddev: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown channel {self.kind!r}; choose from {KINDS}")
        if self.noise_stddev < 0:
            raise ConfigError("noise_stddev must be nonnegative")


class Channel:
    """Stateful channel; the AWGN variant owns its generator, so keep one per worker."""

    def __init__(self, spec: ChannelSpec):
        self.spec = spec
        self._rng = np.random.default_rng(spec.seed)

    def transmit(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput("latent vector contains NaN or Inf")
        if self.spec.kind == "identity" or self.spec.noise_stddev == 0.0:
            return v
        return v + self._rng.normal(0.0, self.spec.noise_stddev, size=v.shape)


def transmit(spec: ChannelSpec, v: np.ndarray) -> np.ndarray:
    """One-shot transmission with a fresh generator seeded from ``spec``."""
    return Channel(spec).transmit(v)
