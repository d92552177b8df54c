"""Nearest-neighbour information estimates and the Gaussian leakage bound.

All quantities are in nats. Neighbourhoods use the max-norm throughout, so
the entropy estimate and the KSG mutual-information estimate share one
geometry.

References: Kraskov, Stögbauer & Grassberger, Phys. Rev. E 69, 066138 (2004);
Kozachenko & Leonenko, Probl. Inf. Transm. 23 (1987).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import digamma

JITTER = 1e-10
# above this many joint dimensions a k-d tree is slower than brute force
_TREE_MAX_DIM = 20
_BLOCK = 256


@dataclass(frozen=True)
class MiEstimate:
    value: float
    k: int
    n_samples: int
    method: str = "ksg1"
    status: str = "ok"
    raw: float = 0.0

    @property
    def bits(self) -> float:
        return nats_to_bits(self.value)


def nats_to_bits(x: float) -> float:
    return x / math.log(2.0)


def _as_samples(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    elif a.ndim > 2:
        a = a.reshape(a.shape[0], -1)
    if a.shape[1] == 0:
        raise ValueError(f"{name} has zero dimensions")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _has_duplicates(a: np.ndarray) -> bool:
    return np.unique(a, axis=0).shape[0] < a.shape[0]


def _dejitter(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if _has_duplicates(a):
        return a + JITTER * rng.random(a.shape)
    return a


def _exact_mean(values: np.ndarray) -> float:
    # order-independent, so permuting rows cannot change the result
    return math.fsum(values.tolist()) / len(values)


def _strictly_below(r: np.ndarray) -> np.ndarray:
    return np.nextafter(r, 0.0)


def _kth_neighbour_dist(x: np.ndarray, k: int) -> np.ndarray:
    if x.shape[1] <= _TREE_MAX_DIM:
        dist, _ = cKDTree(x).query(x, k=k + 1, p=np.inf)
        return dist[:, k]
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], _BLOCK):
        d = cdist(x[start : start + _BLOCK], x, "chebyshev")
        rows = np.arange(d.shape[0])
        d[rows, start + rows] = np.inf
        out[start : start + _BLOCK] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return out


def _ksg_counts(x: np.ndarray, y: np.ndarray, k: int):
    """Per-point (n_x, n_y): marginal neighbours strictly inside the joint k-NN radius."""
    n = x.shape[0]
    if x.shape[1] + y.shape[1] <= _TREE_MAX_DIM:
        eps = _kth_neighbour_dist(np.hstack([x, y]), k)
        r = _strictly_below(eps)
        nx = cKDTree(x).query_ball_point(x, r, p=np.inf, return_length=True) - 1
        ny = cKDTree(y).query_ball_point(y, r, p=np.inf, return_length=True) - 1
        return nx, ny
    nx = np.empty(n, dtype=np.int64)
    ny = np.empty(n, dtype=np.int64)
    for start in range(0, n, _BLOCK):
        dx = cdist(x[start : start + _BLOCK], x, "chebyshev")
        dy = cdist(y[start : start + _BLOCK], y, "chebyshev")
        rows = np.arange(dx.shape[0])
        dx[rows, start + rows] = np.inf
        dy[rows, start + rows] = np.inf
        eps = np.partition(np.maximum(dx, dy), k - 1, axis=1)[:, k - 1]
        nx[start : start + _BLOCK] = (dx < eps[:, None]).sum(axis=1)
        ny[start : start + _BLOCK] = (dy < eps[:, None]).sum(axis=1)
    return nx, ny


def estimate_mi_ksg(x, y, k: int = 3, seed: int = 0) -> MiEstimate:
    """KSG (variant 1) estimate of I(X; Y), clamped at zero.

    ``x`` is [N, d] and ``y`` is [N, d'] (extra axes are flattened). When
    ``x`` and ``y`` are identical the estimate saturates near
    ``psi(N) - psi(k)`` and is flagged ``status="degenerate"``.
    """
    x = _as_samples(x, "X")
    y = _as_samples(y, "Y")
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"sample counts differ: {n} vs {y.shape[0]}")
    if not 1 <= k < n:
        raise ValueError(f"need N > k >= 1, got N={n}, k={k}")
    degenerate = x.shape == y.shape and np.array_equal(x, y)
    rng = np.random.default_rng(seed)
    x = _dejitter(x, rng)
    y = _dejitter(y, rng)
    nx, ny = _ksg_counts(x, y, k)
    avg = _exact_mean(digamma(nx + 1) + digamma(ny + 1))
    raw = float(digamma(k) + digamma(n) - avg)
    return MiEstimate(max(raw, 0.0), k, n, "ksg1", "degenerate" if degenerate else "ok", raw)


def estimate_entropy_kl(x, k: int = 3, seed: int = 0) -> float:
    """Kozachenko-Leonenko differential entropy with max-norm balls.

    ``H = psi(N) - psi(k) + d * mean(log(2 * eps_k))``.
    """
    x = _as_samples(x, "X")
    n, d = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    k = min(k, n - 1)
    x = _dejitter(x, np.random.default_rng(seed))
    eps = _kth_neighbour_dist(x, k)
    return float(digamma(n) - digamma(k) + d * _exact_mean(np.log(2.0 * eps)))


def _channels(a: np.ndarray) -> list:
    a = np.asarray(a)
    if a.ndim == 4 and a.shape[1] > 1:
        return [a[:, c].reshape(a.shape[0], -1) for c in range(a.shape[1])]
    return [a.reshape(a.shape[0], -1)]


@dataclass(frozen=True)
class MiLoss:
    percent: float
    mi: float
    entropy: float
    channels: int


def mi_loss_percent(x_raw, x_sifted, k: int = 3, seed: int = 0) -> MiLoss:
    """Share of the raw inputs' self-information lost in the sifted inputs, in percent.

    Multi-channel images [N, C, H, W] are handled channel by channel and
    averaged; single-channel inputs are flattened to one vector each.
    """
    raw_ch = _channels(x_raw)
    sifted_ch = _channels(x_sifted)
    if len(raw_ch) != len(sifted_ch) or raw_ch[0].shape[0] != sifted_ch[0].shape[0]:
        raise ValueError("raw and sifted samples must match in count and channels")
    mis, ents = [], []
    for raw, sifted in zip(raw_ch, sifted_ch):
        h = estimate_entropy_kl(raw, k, seed)
        est = estimate_mi_ksg(raw, sifted, k, seed)
        ents.append(h)
        mis.append(h if est.status == "degenerate" else est.value)
    h = float(np.mean(ents))
    mi = float(np.mean(mis))
    if not h > 0:
        raise ValueError(f"entropy denominator invalid: estimated H(X) = {h:.4g} nats")
    return MiLoss(100.0 * (h - mi) / h, mi, h, len(raw_ch))


@dataclass(frozen=True)
class UpperBound:
    logdet: float
    product: float
    product_is_approximate: bool = True


def mi_upper_bound(samples, sigma, ridge: float = 1e-8, floor: float = 1e-6) -> UpperBound:
    """Gaussian max-entropy bound on the leakage of ``x + r``, ``r ~ N(mu, diag(sigma^2))``.

    ``logdet``: 0.5 * (n log(2 pi e) + logdet(Cov(x) + Sigma) - logdet(Sigma)),
    evaluated through a Cholesky factor with a small ridge.
    ``product``: 0.5 * sum_i log(2 pi e (1 + lambda_i / sigma_i^2)), pairing
    the covariance eigenvalues (descending) with sigma in index order.
    """
    x = _as_samples(samples, "samples")
    var = np.maximum(np.asarray(sigma, dtype=np.float64).reshape(-1), floor) ** 2
    n = x.shape[1]
    if var.size != n:
        raise ValueError(f"sigma has {var.size} entries for {n}-dimensional samples")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples to estimate a covariance")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    try:
        chol = np.linalg.cholesky(cov + np.diag(var) + ridge * np.eye(n))
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive semidefinite after ridge") from None
    logdet_xc = 2.0 * np.log(np.diag(chol)).sum()
    logdet_noise = np.log(var).sum()
    c = math.log(2.0 * math.pi * math.e)
    logdet_bound = 0.5 * (n * c + logdet_xc - logdet_noise)
    eig = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
    product = 0.5 * float(np.sum(c + np.log1p(eig / var)))
    return UpperBound(float(logdet_bound), product)
