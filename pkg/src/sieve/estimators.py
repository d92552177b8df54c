"""scikit-learn style wrappers around the classifier and the sieve pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .nn import TrainConfig, build_model, predict, train_classifier
from .noise_map import DEFAULT_CAP, NoiseTrainConfig, train_noise_map
from .suppression import SuppressionConfig, build_plan, sift


def check_images(x, input_shape=None) -> np.ndarray:
    """Validate a float batch ``[N, C, H, W]`` (a flat ``[N, d]`` batch becomes ``[N, 1, 1, d]``)."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x[:, None, None, :]
    if x.ndim != 4:
        raise ValueError(f"expected a [N, C, H, W] batch, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    if input_shape is not None and tuple(x.shape[1:]) != tuple(input_shape):
        raise ValueError(f"expected inputs of shape {tuple(input_shape)}, got {x.shape[1:]}")
    return x


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError("labels must be non-negative")
    return y


class Classifier(ClassifierMixin, BaseEstimator):
    """Image classifier (``mlp`` or ``lenet_lite``) trained with minibatch Adam or SGD."""

    def __init__(self, arch="lenet_lite", epochs=10, lr=1e-3, batch_size=128, optimizer="adam", shift=0, seed=0):
        self.arch = arch
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.shift = shift
        self.seed = seed

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, X.shape[0])
        self.classes_ = np.arange(int(y.max()) + 1)
        cfg = TrainConfig(self.epochs, self.lr, self.batch_size, self.optimizer, self.seed, self.shift)
        self.model_ = build_model(self.arch, X.shape[1:], len(self.classes_), self.seed)
        self.history_ = train_classifier(self.model_, X, y, cfg)
        self.model_.freeze()
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, check_images(X, self.model_.input_shape))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


class Sieve(TransformerMixin, BaseEstimator):
    """Learn a noise map and suppression plan against a fitted :class:`Classifier`.

    ``transform`` returns sifted inputs; every call with the same ``seed``
    draws the same noise.
    """

    def __init__(
        self,
        classifier=None,
        lam=1.0,
        cap=DEFAULT_CAP,
        threshold=None,
        scheme="trained",
        epochs=30,
        lr=0.1,
        batch_size=128,
        suppression_epochs=10,
        suppression_lr=0.01,
        seed=0,
    ):
        self.classifier = classifier
        self.lam = lam
        self.cap = cap
        self.threshold = threshold
        self.scheme = scheme
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.suppression_epochs = suppression_epochs
        self.suppression_lr = suppression_lr
        self.seed = seed

    def fit(self, X, y):
        if self.classifier is None:
            raise ValueError("Sieve needs a fitted classifier")
        check_is_fitted(self.classifier, "model_")
        model = self.classifier.model_
        X = check_images(X, model.input_shape)
        y = check_labels(y, X.shape[0])
        noise_cfg = NoiseTrainConfig(self.epochs, self.lr, self.batch_size, self.lam, None, self.cap, 1, self.seed)
        supp_cfg = SuppressionConfig(self.suppression_epochs, self.suppression_lr, self.batch_size, self.seed)
        self.noise_map_, self.history_ = train_noise_map(model, X, y, None, noise_cfg)
        self.plan_ = build_plan(model, X, y, self.noise_map_, self.threshold, self.scheme, supp_cfg)
        self.suppression_ratio_ = self.plan_.suppression_ratio
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        return sift(check_images(X, self.plan_.shape), self.plan_, self.seed)
