"""Convert the 5,000-sample MNIST subset shipped in the mlxtend wheel to IDX files.

    pip download mlxtend --no-deps -d /tmp/mlx
    python scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/

The subset holds 500 samples per digit, taken from the original MNIST files.
"""
import argparse
import gzip
import io
import zipfile

import numpy as np

from simex.data import Dataset, write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel")
    ap.add_argument("outdir")
    args = ap.parse_args()
    raw = gzip.decompress(zipfile.ZipFile(args.wheel).read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    ds = Dataset("mnist5k", pixels.reshape(-1, 28, 28) / 255.0, labels)
    write_idx(ds, f"{args.outdir}/mnist5k-images-idx3-ubyte.gz", f"{args.outdir}/mnist5k-labels-idx1-ubyte.gz")
    print(len(ds), "samples;", np.bincount(labels).tolist())


if __name__ == "__main__":
    main()
