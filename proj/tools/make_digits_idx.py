#!/usr/bin/env python3
"""Writes the bundled scikit-learn 8x8 handwritten digits as IDX files.

The digits ship with scikit-learn, so the fixture can be rebuilt offline:

    python3 tools/make_digits_idx.py data/digits
"""
import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

TRAIN_SIZE = 1500
SEED = 20240531


def write_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/digits")
    out.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    # Intensities are 0..16; stretch to the 0..255 byte range.
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    order = np.random.default_rng(SEED).permutation(len(labels))
    images, labels = images[order], labels[order]
    write_images(out / "train-images.idx", images[:TRAIN_SIZE])
    write_labels(out / "train-labels.idx", labels[:TRAIN_SIZE])
    write_images(out / "test-images.idx", images[TRAIN_SIZE:])
    write_labels(out / "test-labels.idx", labels[TRAIN_SIZE:])


if __name__ == "__main__":
    main()
