"""Classifiers built on :mod:`sieve.autodiff`: construction, training, prediction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .optim import make_optimizer

logger = logging.getLogger(__name__)

ARCHITECTURES = ("mlp", "lenet_lite")


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name, self.n_in, self.n_out = name, n_in, n_out

    def param_shapes(self):
        return {f"{self.name}.weight": (self.n_in, self.n_out), f"{self.name}.bias": (self.n_out,)}

    def fan_in(self):
        return self.n_in

    def __call__(self, x, p):
        return ad.linear(x, p[f"{self.name}.weight"], p[f"{self.name}.bias"])


class Conv:
    def __init__(self, name: str, c_in: int, c_out: int, k: int):
        self.name, self.c_in, self.c_out, self.k = name, c_in, c_out, k

    def param_shapes(self):
        return {
            f"{self.name}.weight": (self.c_out, self.c_in, self.k, self.k),
            f"{self.name}.bias": (self.c_out,),
        }

    def fan_in(self):
        return self.c_in * self.k * self.k

    def __call__(self, x, p):
        return ad.conv2d(x, p[f"{self.name}.weight"], p[f"{self.name}.bias"])


class ReLU:
    def param_shapes(self):
        return {}

    def __call__(self, x, p):
        return ad.relu(x)


class MaxPool:
    def param_shapes(self):
        return {}

    def __call__(self, x, p):
        return ad.max_pool2d(x)


class Flatten:
    def param_shapes(self):
        return {}

    def __call__(self, x, p):
        return ad.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


def _layers_for(arch: str, input_shape: tuple, n_classes: int) -> list:
    if arch == "mlp":
        n_in = int(np.prod(input_shape))
        return [Flatten(), Dense("fc1", n_in, 256), ReLU(), Dense("fc2", 256, n_classes)]
    if arch == "lenet_lite":
        if len(input_shape) != 3:
            raise ValueError(f"lenet_lite expects [C, H, W] inputs, got {input_shape}")
        c, h, w = input_shape
        h1, w1 = (h - 4) // 2, (w - 4) // 2
        h2, w2 = (h1 - 4) // 2, (w1 - 4) // 2
        if h2 < 1 or w2 < 1 or (h - 4) % 2 or (w - 4) % 2 or (h1 - 4) % 2 or (w1 - 4) % 2:
            raise ValueError(f"lenet_lite cannot process spatial size {h}x{w}")
        return [
            Conv("conv1", c, 6, 5), ReLU(), MaxPool(),
            Conv("conv2", 6, 16, 5), ReLU(), MaxPool(),
            Flatten(),
            Dense("fc1", 16 * h2 * w2, 120), ReLU(),
            Dense("fc2", 120, 84), ReLU(),
            Dense("fc3", 84, n_classes),
        ]  # fmt: skip
    raise ValueError(f"unknown architecture {arch!r} (expected one of {ARCHITECTURES})")


@dataclass
class Model:
    """A feed-forward classifier: architecture tag, layers and named parameters.

    ``frozen`` marks a model whose parameters must not change; noise-map and
    suppression training refuse unfrozen models.
    """

    arch: str
    input_shape: tuple
    n_classes: int
    params: dict
    frozen: bool = False
    layers: list = field(default=None, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.layers is None:
            self.layers = _layers_for(self.arch, self.input_shape, self.n_classes)
        expected = {}
        for layer in self.layers:
            expected.update(layer.param_shapes())
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} do not match {self.arch}")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def freeze(self) -> "Model":
        self.frozen = True
        return self

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def param_tensors(self, tracked: bool = False) -> dict:
        return {name: ad.Tensor(p, tracked=tracked, name=name) for name, p in self.params.items()}

    def logits(self, x: ad.Tensor, params: dict | None = None) -> ad.Tensor:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ad.ShapeError(f"model input: expected [batch, {self.input_shape}], got {x.shape}")
        if params is None:
            params = self.param_tensors()
        out = x
        for layer in self.layers:
            out = layer(out, params)
        return out


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 128
    optimizer: str = "adam"
    seed: int = 0
    shift: int = 0

    def __post_init__(self):
        if self.shift < 0:
            raise ValueError(f"shift must be >= 0, got {self.shift}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def build_model(arch: str, input_shape, n_classes: int, seed: int = 0, head_init: str = "he") -> Model:
    """Create a model with He-uniform weights and zero biases, deterministic per seed.

    ``head_init="zeros"`` zeroes the final layer so an untrained model outputs
    the uniform distribution.
    """
    if n_classes < 1:
        raise ValueError(f"number of classes must be >= 1, got {n_classes}")
    input_shape = tuple(int(s) for s in input_shape)
    layers = _layers_for(arch, input_shape, n_classes)
    rng = np.random.default_rng(seed)
    weighted = [layer for layer in layers if layer.param_shapes()]
    params = {}
    for layer in weighted:
        bound = np.sqrt(6.0 / layer.fan_in())
        for name, shape in layer.param_shapes().items():
            if name.endswith(".bias") or (head_init == "zeros" and layer is weighted[-1]):
                params[name] = np.zeros(shape, dtype=np.float32)
            else:
                params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Model(arch, input_shape, n_classes, params, layers=layers)


def minibatches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def random_shift(batch: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Translate each image by up to ``max_shift`` pixels, filling with zeros."""
    n, _, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (max_shift, max_shift), (max_shift, max_shift)))
    offsets = rng.integers(0, 2 * max_shift + 1, size=(n, 2))
    return np.stack([padded[i, :, dy : dy + h, dx : dx + w] for i, (dy, dx) in enumerate(offsets)])


def train_classifier(model: Model, features, labels, cfg: TrainConfig, transform=None) -> dict:
    """Minibatch cross-entropy training of ``model`` in place.

    ``cfg.shift > 0`` augments image batches with random translations.
    ``transform(batch, rng)``, when given, is applied to every minibatch
    (after any shift), e.g. to train on freshly sifted inputs.
    Returns a history dict with per-epoch ``loss`` and ``accuracy`` lists.
    """
    if model.frozen:
        raise ValueError("cannot train a frozen model")
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} examples")
    if labels.min() < 0 or labels.max() >= model.n_classes:
        raise ValueError(f"labels must lie in [0, {model.n_classes})")

    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    history = {"loss": [], "accuracy": []}
    for epoch in range(cfg.epochs):
        total_loss, correct = 0.0, 0
        for idx in minibatches(n, cfg.batch_size, rng):
            x = features[idx]
            if cfg.shift:
                x = random_shift(x, cfg.shift, rng)
            if transform is not None:
                x = transform(x, rng)
            params = model.param_tensors(tracked=True)
            logits = model.logits(ad.Tensor(x), params)
            loss = ad.softmax_cross_entropy(logits, labels[idx])
            names = list(params)
            grads = ad.backward(loss, [params[k] for k in names])
            opt.step(model.params, dict(zip(names, grads)))
            total_loss += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
        history["loss"].append(total_loss / n)
        history["accuracy"].append(correct / n)
        logger.info("epoch %d loss %.4f acc %.4f", epoch + 1, history["loss"][-1], history["accuracy"][-1])
    return history


def predict(model: Model, batch, batch_size: int = 512) -> np.ndarray:
    """Class probabilities, shape [batch, K]."""
    batch = np.asarray(batch, dtype=np.float32)
    if tuple(batch.shape[1:]) != model.input_shape:
        raise ad.ShapeError(f"predict: expected [batch, {model.input_shape}], got {batch.shape}")
    params = model.param_tensors()
    out = [
        ad.softmax(model.logits(ad.Tensor(batch[i : i + batch_size]), params)).data
        for i in range(0, batch.shape[0], batch_size)
    ]
    if not out:
        return np.zeros((0, model.n_classes), dtype=np.float32)
    return np.concatenate(out, axis=0)


def accuracy(model: Model, features, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float((predict(model, features).argmax(axis=1) == labels).mean())
