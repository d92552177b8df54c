"""Learning per-feature Gaussian noise scales against a frozen classifier.

The trained quantity is a pair of tensors shaped like one input: a noise
mean ``mu`` and an unconstrained ``rho`` mapped to a standard deviation in
``(0, M)``. The objective trades the log of the mean noise variance against
the classifier's expected cross-entropy on noisy inputs::

    loss = -log(mean(sigma**2)) + lambda * E_r[ CE(f(x + r), y) ],
    r = sigma * e + mu,  e ~ N(0, I)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import Model, minibatches
from .optim import Adam

logger = logging.getLogger(__name__)

DEFAULT_CAP = 1.5
RHO_INIT = -10.0
# keeps -log(mean sigma^2) finite while sigma ~ 3e-9 at initialisation
SIGMA_FLOOR = 1e-6


def reparameterize_sigma(rho, cap: float = DEFAULT_CAP):
    """``sigma = (1 + tanh(rho)) / 2 * cap``.

    Accepts a :class:`~sieve.autodiff.Tensor` (differentiable result) or an
    array (float64 result). Evaluated as ``cap * sigmoid(2 rho)``, the same
    function, which does not round to 0 or ``cap`` in float32 near the ends.
    """
    if not cap > 0:
        raise ValueError(f"noise cap M must be positive, got {cap}")
    if isinstance(rho, ad.Tensor):
        return ad.sigmoid(rho * 2.0) * float(cap)
    z = 2.0 * np.asarray(rho, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return cap * np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def open_interval(sigma, cap: float, dtype=np.float32) -> np.ndarray:
    """Cast sigma to ``dtype`` without rounding onto the endpoints 0 or ``cap``."""
    hi = np.nextafter(dtype(cap), dtype(0))
    lo = np.finfo(dtype).tiny
    return np.clip(np.asarray(sigma, dtype=dtype), lo, hi)


def sample_noise(mu, sigma, seed=None) -> np.ndarray:
    """``r = sigma * e + mu`` with ``e`` standard normal from a seeded generator.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ad.ShapeError(f"sample_noise: shape mismatch {mu.shape} vs {sigma.shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    e = rng.standard_normal(mu.shape)
    return (sigma * e + mu).astype(np.float32)


@dataclass
class NoiseMap:
    """Trainable noise location ``mu``, unconstrained scale ``rho``, cap ``M`` and weight ``lam``."""

    mu: np.ndarray
    rho: np.ndarray
    cap: float = DEFAULT_CAP
    lam: float = 1.0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float32)
        self.rho = np.asarray(self.rho, dtype=np.float32)
        if self.mu.shape != self.rho.shape:
            raise ValueError(f"mu shape {self.mu.shape} differs from rho shape {self.rho.shape}")
        if not self.cap > 0:
            raise ValueError(f"noise cap M must be positive, got {self.cap}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")

    @classmethod
    def initial(cls, input_shape, cap: float = DEFAULT_CAP, lam: float = 1.0) -> "NoiseMap":
        shape = tuple(input_shape)
        return cls(np.zeros(shape, np.float32), np.full(shape, RHO_INIT, np.float32), cap, lam)

    @property
    def shape(self) -> tuple:
        return self.mu.shape

    @property
    def sigma(self) -> np.ndarray:
        return open_interval(reparameterize_sigma(self.rho, self.cap), self.cap)

    def to_arrays(self) -> dict:
        return {"mu": self.mu, "rho": self.rho, "M": np.float32(self.cap), "lambda": np.float32(self.lam)}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "NoiseMap":
        return cls(arrays["mu"], arrays["rho"], float(arrays["M"]), float(arrays["lambda"]))


@dataclass
class NoiseTrainConfig:
    epochs: int = 30
    lr: float = 0.1
    batch_size: int = 128
    lam: float = 1.0
    gamma: float | None = None
    cap: float = DEFAULT_CAP
    mc_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.gamma is not None:
            if not self.gamma > 0:
                raise ValueError(f"gamma must be positive, got {self.gamma}")
            self.lam = 1.0 / self.gamma
            self.gamma = None
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1 or self.mc_samples < 1:
            raise ValueError("batch size and mc_samples must be >= 1")
        if not self.cap > 0:
            raise ValueError(f"noise cap M must be positive, got {self.cap}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


def privacy_term(sigma: ad.Tensor) -> ad.Tensor:
    """``-log(mean(sigma^2) + floor^2)``."""
    mean_var = ad.mean(ad.square(sigma))
    return ad.log(mean_var + SIGMA_FLOOR**2) * -1.0


def _noisy_batch(x: ad.Tensor, mu: ad.Tensor, sigma: ad.Tensor, e: np.ndarray) -> ad.Tensor:
    n = x.shape[0]
    return x + ad.tile_batch(mu, n) + ad.tile_batch(sigma, n) * ad.Tensor(e)


def sieve_objective(model: Model, x, labels, mu: ad.Tensor, rho: ad.Tensor, cap: float, lam: float, noises):
    """Build the loss graph for fixed noise draws; returns (loss, privacy, utility) tensors.

    ``noises`` is a sequence of standard-normal arrays shaped like ``x``; the
    cross-entropy is averaged over them.
    """
    if not model.frozen:
        raise ValueError("the classifier must be frozen before training noise")
    x = ad.as_tensor(x)
    sigma = reparameterize_sigma(rho, cap)
    params = model.param_tensors()
    priv = privacy_term(sigma)
    ce = None
    for e in noises:
        term = ad.softmax_cross_entropy(model.logits(_noisy_batch(x, mu, sigma, e), params), labels)
        ce = term if ce is None else ce + term
    utility = ce / len(noises)
    return priv + utility * float(lam), priv, utility


@dataclass
class SieveLoss:
    loss: float
    privacy: float
    utility: float
    grad_mu: np.ndarray
    grad_rho: np.ndarray


def sieve_loss(model: Model, batch, labels, noise_map: NoiseMap, seed=None, noises=None, mc_samples: int = 1) -> SieveLoss:
    """Loss value and its gradients with respect to ``mu`` and ``rho``.

    Noise is drawn from ``seed`` unless explicit standard-normal ``noises``
    are given. The classifier's parameters never receive gradient.
    """
    batch = np.asarray(batch, dtype=ad.storage_dtype())
    if noises is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        noises = [rng.standard_normal(batch.shape) for _ in range(mc_samples)]
    mu = ad.leaf(noise_map.mu, "mu")
    rho = ad.leaf(noise_map.rho, "rho")
    loss, priv, util = sieve_objective(model, batch, labels, mu, rho, noise_map.cap, noise_map.lam, noises)
    g_mu, g_rho = ad.backward(loss, [mu, rho])
    return SieveLoss(loss.item(), priv.item(), util.item(), g_mu, g_rho)


def train_noise_map(model: Model, features, labels, noise_map: NoiseMap | None = None, cfg: NoiseTrainConfig | None = None):
    """Adam on (mu, rho) with one fresh noise draw per example per minibatch.

    Starts from ``mu = 0, rho = -10`` unless a noise map is supplied.
    Returns the trained :class:`NoiseMap` and a per-epoch history.
    """
    cfg = cfg or NoiseTrainConfig()
    if not model.frozen:
        raise ValueError("train_noise_map requires a frozen model (call model.freeze())")
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if tuple(features.shape[1:]) != model.input_shape:
        raise ad.ShapeError(f"features {features.shape[1:]} do not match model input {model.input_shape}")
    if noise_map is None:
        noise_map = NoiseMap.initial(model.input_shape, cfg.cap, cfg.lam)
    state = {"mu": noise_map.mu.copy(), "rho": noise_map.rho.copy()}
    cap, lam = noise_map.cap, noise_map.lam

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr)
    history = {"loss": [], "privacy": [], "utility": [], "mean_sigma": []}
    n = features.shape[0]
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        for idx in minibatches(n, cfg.batch_size, rng):
            x = features[idx]
            noises = [rng.standard_normal(x.shape) for _ in range(cfg.mc_samples)]
            mu = ad.leaf(state["mu"])
            rho = ad.leaf(state["rho"])
            loss, priv, util = sieve_objective(model, x, labels[idx], mu, rho, cap, lam, noises)
            g_mu, g_rho = ad.backward(loss, [mu, rho])
            opt.step(state, {"mu": g_mu, "rho": g_rho})
            sums += np.array([loss.item(), priv.item(), util.item()]) * len(idx)
        for key, value in zip(("loss", "privacy", "utility"), sums / n):
            history[key].append(float(value))
        history["mean_sigma"].append(float(reparameterize_sigma(state["rho"], cap).mean()))
        logger.info(
            "noise epoch %d loss %.4f ce %.4f mean sigma %.4f",
            epoch + 1, history["loss"][-1], history["utility"][-1], history["mean_sigma"][-1],
        )  # fmt: skip
    return NoiseMap(state["mu"], state["rho"], cap, lam), history
