"""Write the 5,000-digit MNIST sample bundled with mlxtend as IDX archives.

The official MNIST mirrors are often unreachable from CI machines. mlxtend
ships 500 training digits per class inside its wheel; this script repackages
them as gzip'd IDX files so `condaseg data` can consume them like the real
archives (checksum verification must be disabled for this subset).

    pip download mlxtend --no-deps -d /tmp/mlx
    python python/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl out_dir
"""

import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def write_idx(path, array):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        if array.ndim == 3:
            f.write(struct.pack(">IIII", 0x0803, *array.shape))
        else:
            f.write(struct.pack(">II", 0x0801, array.shape[0]))
        f.write(array.astype(np.uint8).tobytes())


def main(wheel, out_dir, n_test=1000, seed=0):
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1]
    order = np.random.RandomState(seed).permutation(len(labels))
    test, train = order[:n_test], order[n_test:]
    write_idx(f"{out_dir}/train-images-idx3-ubyte.gz", images[train])
    write_idx(f"{out_dir}/train-labels-idx1-ubyte.gz", labels[train])
    write_idx(f"{out_dir}/t10k-images-idx3-ubyte.gz", images[test])
    write_idx(f"{out_dir}/t10k-labels-idx1-ubyte.gz", labels[test])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
