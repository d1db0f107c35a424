#!/usr/bin/env python3
"""Write a small MNIST subset in IDX format for the smoke tests.

Source: the 5000-sample MNIST CSV bundled in the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, last column is the label). The CSV
is sorted by class, so each split takes an equal share of every digit and
is shuffled with a fixed seed.

    python3 scripts/make_mnist_smoke.py path/to/mlxtend-*.whl crates/core/tests/data/mnist-smoke
"""

import argparse
import gzip
import random
import struct
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for row in images:
            f.write(bytes(row))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel")
    ap.add_argument("out")
    ap.add_argument("--train-per-class", type=int, default=100)
    ap.add_argument("--test-per-class", type=int, default=20)
    args = ap.parse_args()

    text = gzip.decompress(zipfile.ZipFile(args.wheel).read(MEMBER)).decode()
    rows = [[int(float(v)) for v in line.split(",")] for line in text.splitlines() if line]
    by_class = {c: [r for r in rows if r[-1] == c] for c in range(10)}
    n, m = args.train_per_class, args.test_per_class
    train = [r for c in range(10) for r in by_class[c][:n]]
    test = [r for c in range(10) for r in by_class[c][n : n + m]]
    rng = random.Random(0)
    rng.shuffle(train)
    rng.shuffle(test)
    assert all(len(r) == 785 for r in rows)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for stem, split in (("train", train), ("t10k", test)):
        write_images(out / f"{stem}-images-idx3-ubyte", [r[:-1] for r in split])
        write_labels(out / f"{stem}-labels-idx1-ubyte", [r[-1] for r in split])

if __name__ == "__main__":
    main()
