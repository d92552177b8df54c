import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from sieve.checkpoint import (
    BadMagicError,
    CheckpointError,
    TruncatedFileError,
    VersionMismatchError,
    decode_arrays,
    encode_arrays,
    load_checkpoint,
    read_arrays,
    save_checkpoint,
    write_arrays,
)
from sieve.nn import build_model
from sieve.noise_map import NoiseMap
from sieve.suppression import SiftPlan


def sample_arrays():
    return {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "scalar": np.float32(1.5), "empty": np.zeros((0, 4), np.float32)}


def test_round_trip_is_bit_exact(tmp_path):
    arrays = sample_arrays()
    write_arrays(tmp_path / "x.siv", arrays)
    back = read_arrays(tmp_path / "x.siv")
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == np.shape(arrays[k])
        assert back[k].tobytes() == np.asarray(arrays[k]).tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5), elements=st.floats(-1e6, 1e6, width=32)))
def test_any_float32_array_round_trips(arr):
    back = decode_arrays(encode_arrays({"data": arr}))["data"]
    assert back.shape == arr.shape and back.tobytes() == arr.tobytes()


def test_bad_magic():
    buf = bytearray(encode_arrays(sample_arrays()))
    buf[:4] = b"XXXX"
    with pytest.raises(BadMagicError, match="bad magic"):
        decode_arrays(bytes(buf))


def test_version_mismatch():
    buf = bytearray(encode_arrays(sample_arrays()))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionMismatchError):
        decode_arrays(bytes(buf))


@pytest.mark.parametrize("cut", [5, 12, 20, 30, -1])
def test_truncation_anywhere(cut):
    buf = encode_arrays(sample_arrays())
    with pytest.raises(TruncatedFileError, match="truncated"):
        decode_arrays(buf[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(CheckpointError, match="trailing"):
        decode_arrays(encode_arrays(sample_arrays()) + b"\0")


def test_error_taxonomy_is_distinct():
    for err in (BadMagicError, VersionMismatchError, TruncatedFileError):
        assert issubclass(err, CheckpointError)
    assert len({BadMagicError, VersionMismatchError, TruncatedFileError}) == 3


def test_model_round_trip(tmp_path):
    model = build_model("lenet_lite", (1, 32, 32), 2, 4)
    save_checkpoint(model, tmp_path / "m.siv")
    back = load_checkpoint(tmp_path / "m.siv")
    assert back.frozen and back.arch == "lenet_lite" and back.input_shape == (1, 32, 32)
    for k in model.params:
        assert back.params[k].tobytes() == model.params[k].tobytes()


def test_noise_map_and_plan_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    nm = NoiseMap(rng.normal(size=(1, 3, 3)), rng.normal(size=(1, 3, 3)), 1.5, 10.0)
    save_checkpoint(nm, tmp_path / "n.siv")
    back = load_checkpoint(tmp_path / "n.siv")
    assert back.mu.tobytes() == nm.mu.tobytes() and back.rho.tobytes() == nm.rho.tobytes()
    assert (back.cap, back.lam) == (1.5, 10.0)

    plan = SiftPlan(rng.integers(0, 2, (1, 3, 3)), rng.normal(size=(1, 3, 3)), rng.random((1, 3, 3)), "zeros", 0.7)
    save_checkpoint(plan, tmp_path / "p.siv")
    p2 = load_checkpoint(tmp_path / "p.siv")
    assert p2.scheme == "zeros" and p2.threshold == pytest.approx(0.7)
    for k in ("mask", "mu_s", "sigma", "mu"):
        assert getattr(p2, k).tobytes() == getattr(plan, k).tobytes()


def test_unknown_contents_rejected(tmp_path):
    write_arrays(tmp_path / "x.siv", {"data": np.zeros(3)})
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.siv")


def test_save_rejects_other_objects(tmp_path):
    with pytest.raises(TypeError):
        save_checkpoint({"a": 1}, tmp_path / "x.siv")
