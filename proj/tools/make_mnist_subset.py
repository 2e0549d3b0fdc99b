"""Convert the 5000-sample MNIST subset shipped in the mlxtend wheel into IDX files.

Usage: python3 tools/make_mnist_subset.py path/to/mnist_5k.csv.gz data/
Writes data/mnist5k/{train,t10k}-{images-idx3,labels-idx1}-ubyte (4000/1000 split)
and data/toy/ (200 train / 100 test drawn from the same split).
"""
import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(prefix: Path, images: np.ndarray, labels: np.ndarray) -> None:
    prefix.parent.mkdir(parents=True, exist_ok=True)
    n = images.shape[0]
    with open(str(prefix) + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with open(str(prefix) + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    raw = np.loadtxt(gzip.open(src), delimiter=",")
    images, labels = raw[:, :-1], raw[:, -1].astype(np.int64)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    write_idx(out / "mnist5k" / "train", images[:4000], labels[:4000])
    write_idx(out / "mnist5k" / "t10k", images[4000:], labels[4000:])
    write_idx(out / "toy" / "train", images[:200], labels[:200])
    write_idx(out / "toy" / "t10k", images[4000:4100], labels[4000:4100])


if __name__ == "__main__":
    main()
