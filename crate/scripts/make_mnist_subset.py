"""Convert the 5,000-image MNIST sample shipped with mlxtend into IDX files.

Usage: python3 scripts/make_mnist_subset.py <mnist_5k.csv.gz> <out_dir>

The source CSV is sorted by class, so rows are shuffled with a fixed seed
before writing. Output files follow the standard big-endian IDX layout
(magic 2051 for images, 2049 for labels).
"""

import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    data = np.loadtxt(gzip.open(src), delimiter=",")
    pixels = data[:, :-1].astype(np.uint8)
    labels = data[:, -1].astype(np.uint8)
    order = np.random.default_rng(20240501).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]
    out.mkdir(parents=True, exist_ok=True)
    n = len(labels)
    with open(out / "mnist5k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        f.write(pixels.tobytes())
    with open(out / "mnist5k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(labels.tobytes())


if __name__ == "__main__":
    main()
