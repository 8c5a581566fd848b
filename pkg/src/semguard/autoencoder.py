"""Semantic encoder, decoder and classifier head with a hand-written backward pass.

Architecture (all dense)::

    encoder     x (784) -> relu (hidden) -> latent (linear)
    decoder     latent  -> relu (hidden) -> sigmoid (784)
    classifier  latent  -> softmax (10)

Training minimizes ``sigma * CCE + (1 - sigma) * MSE`` with plain mini-batch SGD.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from semguard import container
from semguard.errors import (
    ConfigError,
    DimensionMismatch,
    DivergedLoss,
    EmptyDataset,
    ProbabilityOutOfRange,
    SigmaOutOfRange,
)

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
PARAM_NAMES = ("enc1_w", "enc1_b", "enc2_w", "enc2_b", "dec1_w", "dec1_b", "dec2_w", "dec2_b", "cls_w", "cls_b")


@dataclass
class ModelParams:
    enc1_w: np.ndarray
    enc1_b: np.ndarray
    enc2_w: np.ndarray
    enc2_b: np.ndarray
    dec1_w: np.ndarray
    dec1_b: np.ndarray
    dec2_w: np.ndarray
    dec2_b: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_in, hidden = self.enc1_w.shape
        latent = self.enc2_w.shape[1]
        expected = {
            "enc1_b": (hidden,), "enc2_w": (hidden, latent), "enc2_b": (latent,),
            "dec1_w": (latent, hidden), "dec1_b": (hidden,), "dec2_w": (hidden, n_in),
            "dec2_b": (n_in,), "cls_w": (latent, self.cls_b.shape[0]),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n_inputs(self) -> int:
        return self.enc1_w.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.enc2_w.shape[1]

    @property
    def n_classes(self) -> int:
        return self.cls_b.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> ModelParams:
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()}, meta=dict(self.meta))

    @classmethod
    def zeros(cls, n_inputs=784, hidden=256, latent=32, n_classes=10) -> ModelParams:
        shapes = _layer_shapes(n_inputs, hidden, latent, n_classes)
        return cls(**{k: np.zeros(s) for k, s in shapes.items()})

    @classmethod
    def glorot(cls, rng: np.random.Generator, n_inputs=784, hidden=256, latent=32, n_classes=10) -> ModelParams:
        """Uniform Glorot weights, zero biases."""
        arrays = {}
        for name, shape in _layer_shapes(n_inputs, hidden, latent, n_classes).items():
            if name.endswith("_w"):
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
            else:
                arrays[name] = np.zeros(shape)
        return cls(**arrays)


def _layer_shapes(n_inputs, hidden, latent, n_classes):
    return {
        "enc1_w": (n_inputs, hidden), "enc1_b": (hidden,),
        "enc2_w": (hidden, latent), "enc2_b": (latent,),
        "dec1_w": (latent, hidden), "dec1_b": (hidden,),
        "dec2_w": (hidden, n_inputs), "dec2_b": (n_inputs,),
        "cls_w": (latent, n_classes), "cls_b": (n_classes,),
    }


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = 0.5
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    hidden: int = 256
    latent: int = 32

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise SigmaOutOfRange(f"sigma {self.sigma} not in [0, 1]")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning_rate must be > 0, epochs >= 0, batch_size >= 1")
        if self.hidden < 1 or self.latent < 1:
            raise ConfigError("hidden and latent sizes must be positive")


# -- forward pieces ---------------------------------------------------------


def _relu(a):
    return np.maximum(a, 0.0)


def _affine(x, w, b):
    # einsum's own loops give each row the same bits whatever the batch size;
    # BLAS does not, and a verdict must not depend on what it was batched with
    return np.einsum("...j,jk->...k", x, w) + b


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def encode(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Latent vector(s) for one image (784,) or a batch (n, 784)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_inputs:
        raise DimensionMismatch(f"input has {x.shape[-1]} pixels, model expects {params.n_inputs}")
    return _affine(_relu(_affine(x, params.enc1_w, params.enc1_b)), params.enc2_w, params.enc2_b)


def decode(params: ModelParams, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.latent_dim:
        raise DimensionMismatch(f"latent has dimension {v.shape[-1]}, model expects {params.latent_dim}")
    return expit(_affine(_relu(_affine(v, params.dec1_w, params.dec1_b)), params.dec2_w, params.dec2_b))


def classify(params: ModelParams, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.latent_dim:
        raise DimensionMismatch(f"latent has dimension {v.shape[-1]}, model expects {params.latent_dim}")
    return softmax(_affine(v, params.cls_w, params.cls_b))


# -- losses -----------------------------------------------------------------


def loss_cce(predicted: np.ndarray, labels_onehot: np.ndarray) -> float:
    predicted = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    labels_onehot = np.atleast_2d(np.asarray(labels_onehot, dtype=np.float64))
    if predicted.shape != labels_onehot.shape:
        raise DimensionMismatch(f"predictions {predicted.shape} vs labels {labels_onehot.shape}")
    if np.any(predicted < 0) or np.any(predicted > 1) or not np.all(np.isfinite(predicted)):
        raise ProbabilityOutOfRange("predicted probabilities must lie in [0, 1]")
    logp = np.log(np.clip(predicted, LOG_FLOOR, 1.0))
    return float(-(labels_onehot * logp).sum() / predicted.shape[0])


def loss_mse(original: np.ndarray, reconstructed: np.ndarray) -> float:
    """Mean squared pixel error, averaged over pixels and then over samples."""
    original = np.asarray(original, dtype=np.float64)
    reconstructed = np.asarray(reconstructed, dtype=np.float64)
    if original.shape != reconstructed.shape:
        raise DimensionMismatch(f"original {original.shape} vs reconstruction {reconstructed.shape}")
    return float(np.mean((original - reconstructed) ** 2))


def loss_total(cce: float, mse: float, sigma: float) -> float:
    if not 0.0 <= sigma <= 1.0:
        raise SigmaOutOfRange(f"sigma {sigma} not in [0, 1]")
    return sigma * cce + (1.0 - sigma) * mse


def one_hot(labels: np.ndarray, n_classes: int = 10) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def evaluate_loss(params: ModelParams, x: np.ndarray, y_onehot: np.ndarray, sigma: float) -> dict[str, float]:
    # progress metric only, so the fast BLAS forward pass is fine here
    z = _relu(x @ params.enc1_w + params.enc1_b) @ params.enc2_w + params.enc2_b
    cce = loss_cce(softmax(z @ params.cls_w + params.cls_b), y_onehot)
    mse = loss_mse(x, expit(_relu(z @ params.dec1_w + params.dec1_b) @ params.dec2_w + params.dec2_b))
    return {"total": loss_total(cce, mse, sigma), "cce": cce, "mse": mse}


# -- backward ---------------------------------------------------------------


def loss_and_gradients(
    params: ModelParams, x: np.ndarray, y_onehot: np.ndarray, sigma: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Total loss on a batch and its gradient with respect to every parameter."""
    n = x.shape[0]
    m = x.shape[1]

    pre1 = x @ params.enc1_w + params.enc1_b
    h1 = _relu(pre1)
    z = h1 @ params.enc2_w + params.enc2_b
    pre3 = z @ params.dec1_w + params.dec1_b
    h3 = _relu(pre3)
    out = expit(h3 @ params.dec2_w + params.dec2_b)
    prob = softmax(z @ params.cls_w + params.cls_b)

    cce = -(y_onehot * np.log(np.clip(prob, LOG_FLOOR, 1.0))).sum() / n
    mse = np.mean((x - out) ** 2)
    total = sigma * cce + (1.0 - sigma) * mse

    d_logits = sigma * (prob - y_onehot) / n
    d_pre4 = (1.0 - sigma) * 2.0 * (out - x) / (n * m) * out * (1.0 - out)
    d_pre3 = (d_pre4 @ params.dec2_w.T) * (pre3 > 0)
    d_z = d_pre3 @ params.dec1_w.T + d_logits @ params.cls_w.T
    d_pre1 = (d_z @ params.enc2_w.T) * (pre1 > 0)

    grads = {
        "enc1_w": x.T @ d_pre1, "enc1_b": d_pre1.sum(axis=0),
        "enc2_w": h1.T @ d_z, "enc2_b": d_z.sum(axis=0),
        "dec1_w": z.T @ d_pre3, "dec1_b": d_pre3.sum(axis=0),
        "dec2_w": h3.T @ d_pre4, "dec2_b": d_pre4.sum(axis=0),
        "cls_w": z.T @ d_logits, "cls_b": d_logits.sum(axis=0),
    }
    return float(total), grads


def gradient_check(
    params: ModelParams,
    x: np.ndarray,
    labels: np.ndarray,
    sigma: float = 0.5,
    epsilon: float = 1e-5,
    grad_fn=loss_and_gradients,
) -> float:
    """Max relative error between ``grad_fn`` and central finite differences.

    Perturbs every scalar parameter, so only use it on small networks.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = one_hot(np.atleast_1d(labels), params.n_classes)
    _, analytic = grad_fn(params, x, y, sigma)

    probe = params.copy()
    worst = 0.0
    for name in PARAM_NAMES:
        arr = getattr(probe, name)
        flat = arr.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_and_gradients(probe, x, y, sigma)[0]
            flat[i] = orig - epsilon
            down = loss_and_gradients(probe, x, y, sigma)[0]
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(ana[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(ana[i] - numeric) / denom)
    return worst


# -- training ---------------------------------------------------------------


def train(
    x: np.ndarray, labels: np.ndarray, cfg: TrainConfig, n_classes: int = 10
) -> tuple[ModelParams, list[dict]]:
    """Mini-batch SGD on the combined loss.

    Returns the final parameters and a log with the full-data loss before
    training (epoch 0) and after each epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyDataset("training needs at least one sample")
    y = one_hot(labels, n_classes)
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams.glorot(rng, x.shape[1], cfg.hidden, cfg.latent, n_classes)

    history = [{"epoch": 0, **evaluate_loss(params, x, y, cfg.sigma)}]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_gradients(params, x[idx], y[idx], cfg.sigma)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss} in epoch {epoch}")
            for name, g in grads.items():
                getattr(params, name)[...] -= cfg.learning_rate * g
        record = {"epoch": epoch, **evaluate_loss(params, x, y, cfg.sigma)}
        if not np.isfinite(record["total"]):
            raise DivergedLoss(f"loss became {record['total']} after epoch {epoch}")
        history.append(record)
        logger.info("epoch %d: total %.5f cce %.5f mse %.5f", epoch, record["total"], record["cce"], record["mse"])

    params.meta = {
        "sigma": cfg.sigma,
        "latent": cfg.latent,
        "hidden": cfg.hidden,
        "seed": cfg.seed,
        "learning_rate": cfg.learning_rate,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
    }
    return params, history


def save_checkpoint(path: str | Path, params: ModelParams, extra: dict | None = None) -> None:
    meta = {**params.meta, **(extra or {}), "d_latent": params.latent_dim}
    container.dump(path, "model", meta, params.arrays())


def load_checkpoint(path: str | Path) -> ModelParams:
    meta, arrays = container.load(path, "model")
    return ModelParams(**arrays, meta=meta)
