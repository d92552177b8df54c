"""Datasets: IDX reading/writing, label rules, synthetic attribute images, splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FIXTURE_DIR = Path(__file__).with_name("data")


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Features [N, *input_shape] in [0, 1] with integer labels.

    ``sensitive`` and ``private_labels`` are optional per-example attributes
    used by the fairness and adversary experiments.
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray | None = None
    private_labels: np.ndarray | None = None

    def __post_init__(self):
        n = self.features.shape[0]
        for name in ("labels", "sensitive", "private_labels"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_shape(self) -> tuple:
        return tuple(self.features.shape[1:])

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return LabeledDataset(self.features[idx], self.labels[idx], pick(self.sensitive), pick(self.private_labels))

    def head(self, n: int) -> "LabeledDataset":
        return self.subset(np.arange(min(n, len(self))))


def _open(path):
    path = Path(path)
    raw = path.read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _read_idx(path, expected_magic: int):
    buf = _open(path)
    if len(buf) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", buf[4 : 4 + 4 * ndim])
    payload = np.frombuffer(buf, dtype=np.uint8, offset=4 + 4 * ndim)
    if payload.size != int(np.prod(dims)):
        raise IdxFormatError(f"{path}: payload has {payload.size} bytes, header promises {int(np.prod(dims))}")
    return payload.reshape(dims)


def load_idx(images_path, labels_path, pad_to: int = 32) -> LabeledDataset:
    """Read an IDX image/label pair, scale pixels by 1/255 and centre-pad 28x28 digits to 32x32."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"image count {images.shape[0]} does not match label count {labels.shape[0]}")
    feats = images.astype(np.float32) / np.float32(255.0)
    h, w = feats.shape[1:]
    if pad_to and h == w and h < pad_to:
        before = (pad_to - h) // 2
        after = pad_to - h - before
        feats = np.pad(feats, ((0, 0), (before, after), (before, after)))
    return LabeledDataset(feats[:, None, :, :], labels.astype(np.int64))


def save_idx(dataset: LabeledDataset, images_path, labels_path) -> None:
    """Write single-channel features back as u8 IDX (values rounded from [0, 1])."""
    feats = dataset.features
    if feats.ndim == 4:
        if feats.shape[1] != 1:
            raise ValueError("IDX images must be single-channel")
        feats = feats[:, 0]
    pixels = np.clip(np.rint(feats.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    header = struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(">3I", *pixels.shape)
    _write(images_path, header + pixels.tobytes())
    labels = dataset.labels.astype(np.uint8)
    _write(labels_path, struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def _write(path, payload: bytes) -> None:
    path = Path(path)
    path.write_bytes(gzip.compress(payload, mtime=0) if path.suffix == ".gz" else payload)


def load_mnist_fixture() -> tuple:
    """The bundled 5000-digit MNIST sample as (train, test) with 4000/1000 examples."""
    data = load_idx(MNIST_FIXTURE_DIR / "mnist5k-images-idx3-ubyte.gz", MNIST_FIXTURE_DIR / "mnist5k-labels-idx1-ubyte.gz")
    order = np.random.default_rng(12345).permutation(len(data))
    return data.subset(order[:4000]), data.subset(order[4000:])


def derive_binary_labels(dataset: LabeledDataset, rule: str) -> LabeledDataset:
    """``gt5`` maps digit d to 1 iff d > 5; ``identity`` keeps the labels."""
    if rule == "gt5":
        return replace(dataset, labels=(dataset.labels > 5).astype(np.int64))
    if rule == "identity":
        return dataset
    raise ValueError(f"unknown label rule {rule!r} (expected 'gt5' or 'identity')")


# -- synthetic images -------------------------------------------------------

SYNTH_SIZE = 16
HALF = SYNTH_SIZE // 2


def stripes(vertical: bool, rows: int = HALF, cols: int = SYNTH_SIZE) -> np.ndarray:
    """Alternating 1/0 stripes; vertical stripes vary along columns."""
    if vertical:
        line = (np.arange(cols) % 2 == 0).astype(np.float32)
        return np.tile(line, (rows, 1))
    line = (np.arange(rows) % 2 == 0).astype(np.float32)
    return np.tile(line[:, None], (1, cols))


def _noisy(images: np.ndarray, rng: np.random.Generator, noise_level: float) -> np.ndarray:
    if noise_level:
        images = images + rng.uniform(-noise_level, noise_level, size=images.shape).astype(np.float32)
    return np.clip(images, 0.0, 1.0).astype(np.float32)


def generate_two_attribute(n: int, seed: int = 0, noise_level: float = 0.5, contrast: float = 0.2) -> LabeledDataset:
    """16x16 images whose top half encodes the target label and bottom half a private label.

    Both labels draw vertical stripes in their region at ``contrast`` around
    mid-grey; label 0 uses the opposite phase, so every pixel is informative.
    The two labels are drawn independently.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= noise_level <= 0.5:
        raise ValueError(f"noise_level must lie in [0, 0.5], got {noise_level}")
    if not 0.0 < contrast <= 1.0:
        raise ValueError(f"contrast must lie in (0, 1], got {contrast}")
    rng = np.random.default_rng(seed)
    target = rng.integers(0, 2, size=n)
    private = rng.integers(0, 2, size=n)
    phase = stripes(True)
    patterns = 0.5 + contrast * (np.stack([1.0 - phase, phase]) - 0.5)
    images = np.concatenate([patterns[target], patterns[private]], axis=1)
    feats = _noisy(images, rng, noise_level)[:, None]
    return LabeledDataset(feats, target.astype(np.int64), private_labels=private.astype(np.int64))


def generate_biased(
    n: int,
    seed: int = 0,
    noise_level: float = 0.5,
    bias: float = 0.9,
    contrast: float = 0.1,
    marker: float = 0.5,
) -> LabeledDataset:
    """Two-attribute images with a spurious sensitive-attribute marker.

    The top half carries low-contrast target stripes. The bottom half is a
    flat patch whose intensity is set by the sensitive bit (region C).
    ``bias`` is P(label == sensitive); 0.5 makes them independent.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= bias <= 1.0:
        raise ValueError(f"bias must lie in [0, 1], got {bias}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    sensitive = np.where(rng.random(n) < bias, labels, 1 - labels)
    patterns = 0.5 + contrast * (np.stack([stripes(False), stripes(True)]) - 0.5)
    top = patterns[labels]
    bottom = np.where(sensitive[:, None, None] == 1, 0.5 + marker / 2, 0.5 - marker / 2)
    bottom = np.broadcast_to(bottom, (n, HALF, SYNTH_SIZE)).astype(np.float32)
    feats = _noisy(np.concatenate([top, bottom], axis=1), rng, noise_level)[:, None]
    return LabeledDataset(feats, labels.astype(np.int64), sensitive=sensitive.astype(np.int64))


def split_disjoint(dataset: LabeledDataset, fractions, seed: int = 0) -> list:
    """Partition a dataset by seeded shuffle into parts of the given fractions."""
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.rint(np.cumsum([0.0] + fractions) * n).astype(int)
    bounds[-1] = n
    parts = [dataset.subset(order[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    if any(len(p) == 0 for p in parts):
        raise ValueError(f"dataset of {n} examples is too small for fractions {fractions}")
    return parts
