import gzip
import struct

import numpy as np
import pytest

from sieve.data import (
    HALF,
    IdxFormatError,
    LabeledDataset,
    derive_binary_labels,
    generate_biased,
    generate_two_attribute,
    load_idx,
    load_mnist_fixture,
    save_idx,
    split_disjoint,
    stripes,
)


def write_idx_pair(tmp_path, images: np.ndarray, labels: np.ndarray, gz=False):
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    img = struct.pack(">I3I", 0x803, *images.shape) + images.astype(np.uint8).tobytes()
    lab = struct.pack(">II", 0x801, labels.size) + labels.astype(np.uint8).tobytes()
    ip.write_bytes(gzip.compress(img) if gz else img)
    lp.write_bytes(gzip.compress(lab) if gz else lab)
    return ip, lp


def test_all_zero_idx_gives_zero_features(tmp_path):
    ip, lp = write_idx_pair(tmp_path, np.zeros((3, 28, 28)), np.array([1, 2, 3]))
    ds = load_idx(ip, lp)
    assert ds.features.shape == (3, 1, 32, 32)
    assert not ds.features.any()
    np.testing.assert_array_equal(ds.labels, [1, 2, 3])


def test_scaling_and_centred_padding(tmp_path):
    img = np.zeros((1, 28, 28), np.uint8)
    img[0, 0, 0] = 255
    img[0, 27, 27] = 51
    ds = load_idx(*write_idx_pair(tmp_path, img, np.array([0]), gz=True))
    f = ds.features[0, 0]
    assert f[2, 2] == 1.0 and f[29, 29] == pytest.approx(0.2)
    assert f[:2].sum() == 0 and f[30:].sum() == 0
    assert 0.0 <= f.min() and f.max() <= 1.0


def test_swapped_magic_rejected(tmp_path):
    ip, lp = write_idx_pair(tmp_path, np.zeros((2, 28, 28)), np.array([0, 1]))
    with pytest.raises(IdxFormatError, match="magic"):
        load_idx(lp, ip)
    with pytest.raises(IdxFormatError, match="magic"):
        load_idx(ip, ip)


def test_count_mismatch_rejected(tmp_path):
    ip, lp = write_idx_pair(tmp_path, np.zeros((2, 28, 28)), np.array([0, 1, 2]))
    with pytest.raises(IdxFormatError):
        load_idx(ip, lp)


def test_truncated_payload_rejected(tmp_path):
    ip, lp = write_idx_pair(tmp_path, np.zeros((2, 28, 28)), np.array([0, 1]))
    ip.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(IdxFormatError):
        load_idx(ip, lp)


def test_save_load_round_trip_is_exact(tmp_path, rng):
    pixels = rng.integers(0, 256, (5, 32, 32)).astype(np.float32) / np.float32(255.0)
    ds = LabeledDataset(pixels[:, None], rng.integers(0, 10, 5))
    save_idx(ds, tmp_path / "i.gz", tmp_path / "l.gz")
    back = load_idx(tmp_path / "i.gz", tmp_path / "l.gz")
    assert back.features.tobytes() == ds.features.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_bundled_fixture():
    train, test = load_mnist_fixture()
    assert (len(train), len(test)) == (4000, 1000)
    assert train.input_shape == (1, 32, 32)
    assert 0.0 <= train.features.min() and train.features.max() <= 1.0
    assert set(np.unique(train.labels)) == set(range(10))


def test_gt5_rule():
    ds = LabeledDataset(np.zeros((4, 1)), np.array([7, 3, 5, 6]))
    np.testing.assert_array_equal(derive_binary_labels(ds, "gt5").labels, [1, 0, 0, 1])
    assert derive_binary_labels(ds, "identity") is ds
    with pytest.raises(ValueError):
        derive_binary_labels(ds, "odd")


def test_two_attribute_layout_without_noise():
    ds = generate_two_attribute(200, seed=3, noise_level=0.0, contrast=1.0)
    vertical = stripes(True)
    for img, t, p in zip(ds.features[:, 0], ds.labels, ds.private_labels):
        np.testing.assert_array_equal(img[:HALF], vertical if t == 1 else 1 - vertical)
        np.testing.assert_array_equal(img[HALF:], vertical if p == 1 else 1 - vertical)


def test_attributes_are_independent():
    ds = generate_two_attribute(10000, seed=0)
    assert abs(np.corrcoef(ds.labels, ds.private_labels)[0, 1]) < 0.03


def test_region_b_carries_nothing_about_target():
    # at zero noise the image is a function of (target, private); enumerate all states
    ds = generate_two_attribute(400, seed=1, noise_level=0.0)
    regions = {}
    for img, t, p in zip(ds.features[:, 0], ds.labels, ds.private_labels):
        regions.setdefault(int(t), set()).add(img[HALF:].tobytes())
    assert regions[0] == regions[1] and len(regions[0]) == 2


def test_two_attribute_reproducible():
    a = generate_two_attribute(50, seed=9)
    b = generate_two_attribute(50, seed=9)
    assert a.features.tobytes() == b.features.tobytes()


def test_biased_rate_and_marker():
    ds = generate_biased(20000, seed=0, bias=0.9, noise_level=0.0)
    assert abs(np.mean(ds.labels == ds.sensitive) - 0.9) < 0.01
    bottom = ds.features[:, 0, HALF:].mean(axis=(1, 2))
    assert np.all((bottom > 0.5) == (ds.sensitive == 1))
    fair = generate_biased(20000, seed=0, bias=0.5)
    assert abs(np.mean(fair.labels == fair.sensitive) - 0.5) < 0.015


def test_generator_argument_checks():
    with pytest.raises(ValueError):
        generate_two_attribute(0)
    with pytest.raises(ValueError):
        generate_two_attribute(10, contrast=0.0)
    with pytest.raises(ValueError):
        generate_biased(10, bias=1.5)


def test_split_halves():
    ds = LabeledDataset(np.arange(100, dtype=np.float32)[:, None], np.zeros(100, int))
    a, b = split_disjoint(ds, [0.5, 0.5], seed=2)
    assert (len(a), len(b)) == (50, 50)
    assert not set(a.features[:, 0]) & set(b.features[:, 0])
    again = split_disjoint(ds, [0.5, 0.5], seed=2)
    assert again[0].features.tobytes() == a.features.tobytes()


def test_split_whole_is_permutation():
    ds = LabeledDataset(np.arange(10, dtype=np.float32)[:, None], np.zeros(10, int))
    (whole,) = split_disjoint(ds, [1.0])
    assert sorted(whole.features[:, 0]) == list(range(10))


@pytest.mark.parametrize("fractions", [[0.2, 0.3, 0.5], [0.1, 0.9], [1 / 3, 1 / 3, 1 / 3]])
def test_split_exhaustive_and_disjoint(fractions):
    ds = LabeledDataset(np.arange(97, dtype=np.float32)[:, None], np.zeros(97, int))
    parts = split_disjoint(ds, fractions, seed=0)
    seen = np.concatenate([p.features[:, 0] for p in parts])
    assert sorted(seen) == list(range(97))


def test_split_errors():
    ds = LabeledDataset(np.zeros((1, 1)), np.zeros(1, int))
    with pytest.raises(ValueError, match="too small"):
        split_disjoint(ds, [0.5, 0.5])
    with pytest.raises(ValueError):
        split_disjoint(ds, [0.5, 0.6])
