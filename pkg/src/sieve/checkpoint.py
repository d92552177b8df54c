"""SIV1 container: named little-endian float32 arrays.

Layout::

    b"SIV1" | u32 version | u32 array count
    per array: u16 name length | utf-8 name | u8 dtype (0 = f32) | u8 rank
               | rank x u32 dims | raw f32 payload

Models, noise maps and sift plans are stored as sets of arrays; integer
metadata (architecture, class count, scheme) is stored as exact float codes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SIV1"
VERSION = 1
DTYPE_F32 = 0


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


def encode_arrays(arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        arr = np.asarray(value, dtype="<f4")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise CheckpointError(f"array name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_arrays(buf: bytes) -> dict:
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedFileError(f"truncated file: expected {n} bytes for {what} at offset {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if len(view) < 4 or bytes(view[:4]) != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, found {bytes(view[:4])!r}")
    pos = 4
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, reader supports {VERSION}")
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        dtype, rank = struct.unpack("<BB", take(2, f"{name} header"))
        if dtype != DTYPE_F32:
            raise CheckpointError(f"unsupported dtype code {dtype} for {name}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        n = int(np.prod(dims)) if rank else 1
        payload = take(4 * n, f"{name} payload")
        arrays[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last array")
    return arrays


def write_arrays(path, arrays: dict) -> None:
    Path(path).write_bytes(encode_arrays(arrays))


def read_arrays(path) -> dict:
    return decode_arrays(Path(path).read_bytes())


# -- typed objects ----------------------------------------------------------

_ARCH_CODES = {"mlp": 0, "lenet_lite": 1}


def _model_arrays(model) -> dict:
    arrays = {
        "arch": np.float32(_ARCH_CODES[model.arch]),
        "input_shape": np.asarray(model.input_shape, dtype=np.float32),
        "n_classes": np.float32(model.n_classes),
    }
    arrays.update({f"param.{k}": v for k, v in model.params.items()})
    return arrays


def _model_from(arrays: dict):
    from .nn import Model

    arch = {v: k for k, v in _ARCH_CODES.items()}[int(arrays["arch"])]
    params = {k[len("param.") :]: v for k, v in arrays.items() if k.startswith("param.")}
    shape = tuple(int(s) for s in arrays["input_shape"])
    return Model(arch, shape, int(arrays["n_classes"]), params, frozen=True)


def save_checkpoint(obj, path) -> None:
    """Write a Model, NoiseMap or SiftPlan to ``path``."""
    from .nn import Model
    from .noise_map import NoiseMap
    from .suppression import SiftPlan

    if isinstance(obj, Model):
        arrays = _model_arrays(obj)
    elif isinstance(obj, (NoiseMap, SiftPlan)):
        arrays = obj.to_arrays()
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    write_arrays(path, arrays)


def load_checkpoint(path):
    """Read a checkpoint and rebuild the object it holds (models come back frozen)."""
    from .noise_map import NoiseMap
    from .suppression import SiftPlan

    arrays = read_arrays(path)
    if "arch" in arrays:
        return _model_from(arrays)
    if "rho" in arrays:
        return NoiseMap.from_arrays(arrays)
    if "mask" in arrays:
        return SiftPlan.from_arrays(arrays)
    raise CheckpointError(f"{path}: arrays {sorted(arrays)} do not describe a known object")
