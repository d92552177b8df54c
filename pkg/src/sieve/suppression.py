"""From a noise map to sifted representations.

Features whose learned noise scale reaches the threshold ``T`` are
suppressed (mask 0); the rest are kept (mask 1). Suppressed features are
replaced by constants: zeros, or values trained so the frozen classifier
stays accurate. Kept features receive their learned noise.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import Model, minibatches
from .noise_map import DEFAULT_CAP, NoiseMap
from .optim import Adam

logger = logging.getLogger(__name__)

SCHEMES = ("noisy", "zeros", "trained")


def threshold_mask(sigma, threshold: float, cap: float = DEFAULT_CAP):
    """Keep (1) features with ``sigma < threshold``, suppress (0) the rest.

    Returns ``(mask, suppression_ratio)``.
    """
    if not 0.0 <= threshold <= cap:
        raise ValueError(f"threshold T={threshold} outside [0, M={cap}]")
    sigma = np.asarray(sigma)
    mask = (sigma < threshold).astype(np.float32)
    return mask, float(1.0 - mask.mean())


def threshold_for_ratio(sigma, ratio: float, cap: float = DEFAULT_CAP) -> float:
    """Smallest-gap threshold that suppresses ``round(ratio * n)`` features.

    Ties in sigma can make the achieved ratio larger than requested.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"suppression ratio must lie in [0, 1], got {ratio}")
    flat = np.sort(np.asarray(sigma, dtype=np.float64).reshape(-1))[::-1]
    k = int(round(ratio * flat.size))
    if k == 0:
        return float(cap)
    return float(min(flat[k - 1], cap))


@dataclass
class SuppressionConfig:
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


def _kept_noisy(x: np.ndarray, sigma: np.ndarray, mask: np.ndarray, e: np.ndarray) -> np.ndarray:
    keep = mask.astype(bool)
    return np.where(keep, x + sigma * e, 0.0)


def suppression_objective(model: Model, x, labels, sigma, mask, mu_s: ad.Tensor, e) -> ad.Tensor:
    """Cross-entropy of ``f((x + r) * b + mu_s * (1 - b))`` for fixed noise ``e``."""
    if not model.frozen:
        raise ValueError("the classifier must be frozen before training suppression values")
    x = np.asarray(x)
    n = x.shape[0]
    kept = ad.Tensor(_kept_noisy(x, sigma, mask, e))
    fill = ad.tile_batch(mu_s * ad.Tensor(1.0 - mask), n)
    return ad.softmax_cross_entropy(model.logits(kept + fill), labels)


def suppression_loss(model: Model, batch, labels, sigma, mask, mu_s, e):
    """Loss value and gradient with respect to ``mu_s`` for fixed noise ``e``."""
    mu_s = ad.leaf(mu_s, "mu_s")
    loss = suppression_objective(model, batch, labels, sigma, mask, mu_s, e)
    (grad,) = ad.backward(loss, [mu_s])
    return loss.item(), grad


def train_suppression_values(model: Model, features, labels, sigma, mask, mu_init, cfg: SuppressionConfig | None = None):
    """Adam on the replacement constants of suppressed features.

    Starts from ``mu_init`` (the trained noise mean). Returns ``mu_s`` with
    kept-feature entries set to zero.
    """
    cfg = cfg or SuppressionConfig()
    if not model.frozen:
        raise ValueError("train_suppression_values requires a frozen model (call model.freeze())")
    mask = np.asarray(mask, dtype=np.float32)
    sigma = np.asarray(sigma, dtype=np.float32)
    if mask.shape != model.input_shape or sigma.shape != model.input_shape:
        raise ad.ShapeError(f"mask {mask.shape} / sigma {sigma.shape} do not match model input {model.input_shape}")
    if mask.min() == 1.0:
        warnings.warn("mask keeps every feature; no suppression values to train", RuntimeWarning, stacklevel=2)
        return np.zeros(model.input_shape, dtype=np.float32)
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")

    state = {"mu_s": np.asarray(mu_init, dtype=np.float32).copy()}
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr)
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in minibatches(features.shape[0], cfg.batch_size, rng):
            x = features[idx]
            e = rng.standard_normal(x.shape)
            mu_s = ad.leaf(state["mu_s"])
            loss = suppression_objective(model, x, labels[idx], sigma, mask, mu_s, e)
            (grad,) = ad.backward(loss, [mu_s])
            opt.step(state, {"mu_s": grad})
            total += loss.item() * len(idx)
        logger.info("suppression epoch %d ce %.4f", epoch + 1, total / features.shape[0])
    return (state["mu_s"] * (1.0 - mask)).astype(np.float32)


@dataclass
class SiftPlan:
    """Everything needed to sift inputs online.

    ``mu`` is the learned noise mean, used only by the ``noisy`` scheme.
    """

    mask: np.ndarray
    mu_s: np.ndarray
    sigma: np.ndarray
    scheme: str = "trained"
    threshold: float = DEFAULT_CAP / 2
    mu: np.ndarray | None = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float32)
        self.mu_s = np.asarray(self.mu_s, dtype=np.float32)
        self.sigma = np.asarray(self.sigma, dtype=np.float32)
        self.mu = np.zeros_like(self.sigma) if self.mu is None else np.asarray(self.mu, dtype=np.float32)
        if not (self.mask.shape == self.mu_s.shape == self.sigma.shape == self.mu.shape):
            raise ValueError("mask, mu_s, sigma and mu must share one shape")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ValueError("mask entries must be 0 or 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r} (expected one of {SCHEMES})")

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    @property
    def suppression_ratio(self) -> float:
        return float(1.0 - self.mask.mean())

    def with_scheme(self, scheme: str) -> "SiftPlan":
        return SiftPlan(self.mask, self.mu_s, self.sigma, scheme, self.threshold, self.mu)

    def to_arrays(self) -> dict:
        return {
            "mask": self.mask,
            "mu_s": self.mu_s,
            "sigma": self.sigma,
            "T": np.float32(self.threshold),
            "scheme": np.float32(SCHEMES.index(self.scheme)),
            "mu": self.mu,
        }

    @classmethod
    def from_arrays(cls, arrays: dict) -> "SiftPlan":
        return cls(
            arrays["mask"],
            arrays["mu_s"],
            arrays["sigma"],
            SCHEMES[int(arrays["scheme"])],
            float(arrays["T"]),
            arrays.get("mu"),
        )

    @classmethod
    def identity(cls, input_shape) -> "SiftPlan":
        """Keep everything, add no noise."""
        shape = tuple(input_shape)
        return cls(np.ones(shape), np.zeros(shape), np.zeros(shape), "trained", 0.0)

    @classmethod
    def uniform_noise(cls, input_shape, sigma: float) -> "SiftPlan":
        """Same Gaussian noise scale on every feature, nothing suppressed."""
        shape = tuple(input_shape)
        return cls(np.ones(shape), np.zeros(shape), np.full(shape, sigma), "noisy", 0.0)


def sift(x, plan: SiftPlan, seed=None) -> np.ndarray:
    """Sifted representation of a batch ``x`` (or of one input) with fresh noise per item.

    noisy:   x + mu + sigma * e
    zeros:   (x + sigma * e) * b
    trained: (x + sigma * e) * b + mu_s * (1 - b)
    """
    x = np.asarray(x, dtype=np.float32)
    single = x.shape == plan.shape
    if single:
        x = x[None]
    if tuple(x.shape[1:]) != plan.shape:
        raise ad.ShapeError(f"sift: input {x.shape} does not match plan {plan.shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    e = rng.standard_normal(x.shape).astype(np.float32)
    noisy = x + plan.sigma * e
    if plan.scheme == "noisy":
        out = noisy + plan.mu
    else:
        keep = plan.mask.astype(bool)
        fill = plan.mu_s if plan.scheme == "trained" else np.float32(0.0)
        out = np.where(keep, noisy, fill)
    out = out.astype(np.float32)
    return out[0] if single else out


def build_plan(
    model: Model,
    features,
    labels,
    noise_map: NoiseMap,
    threshold: float | None = None,
    scheme: str = "trained",
    cfg: SuppressionConfig | None = None,
    ratio: float | None = None,
) -> SiftPlan:
    """Threshold a trained noise map and, for the trained scheme, learn the replacement values.

    ``ratio`` picks the threshold that suppresses that fraction of features instead.
    """
    sigma = noise_map.sigma
    if ratio is not None:
        threshold = threshold_for_ratio(sigma, ratio, noise_map.cap)
    elif threshold is None:
        threshold = noise_map.cap / 2
    mask, _ = threshold_mask(sigma, threshold, noise_map.cap)
    if scheme == "trained":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mu_s = train_suppression_values(model, features, labels, sigma, mask, noise_map.mu, cfg)
    else:
        mu_s = np.zeros_like(sigma)
    return SiftPlan(mask, mu_s, sigma, scheme, threshold, noise_map.mu)
