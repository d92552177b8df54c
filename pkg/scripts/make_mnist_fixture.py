"""Build the bundled MNIST sample (gzipped IDX) from the mlxtend wheel.

mlxtend ships 5000 MNIST training digits (500 per class) as CSV. Usage::

    pip download --no-deps mlxtend==0.24.0 -d /tmp/wheels
    python scripts/make_mnist_fixture.py /tmp/wheels/mlxtend-0.24.0-py3-none-any.whl
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from sieve.data import MNIST_FIXTURE_DIR, LabeledDataset, save_idx


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("wheel", type=Path)
    parser.add_argument("--out", type=Path, default=MNIST_FIXTURE_DIR)
    args = parser.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        raw = gzip.decompress(zf.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels = table[:, :-1].reshape(-1, 28, 28) / 255.0
    labels = table[:, -1].astype(np.int64)
    args.out.mkdir(parents=True, exist_ok=True)
    save_idx(
        LabeledDataset(pixels.astype(np.float32), labels),
        args.out / "mnist5k-images-idx3-ubyte.gz",
        args.out / "mnist5k-labels-idx1-ubyte.gz",
    )
    print(f"wrote {len(labels)} digits to {args.out}")


if __name__ == "__main__":
    main()
