#!/usr/bin/env python3
"""Render the scikit-learn handwritten digits as MNIST-format IDX files.

The bundled digits dataset (1797 samples, 8x8, 10 classes) is bilinearly
upsampled to 28x28 and written as the four canonical IDX files, giving the
experiment harness a real handwritten-digit base when no MNIST directory is
available. The split and encoding are deterministic.
"""

import os
import struct
import sys

import numpy as np
from sklearn.datasets import load_digits


def upsample_bilinear(img8, size=28):
    src = np.arange(8)
    dst = (np.arange(size) + 0.5) * 8.0 / size - 0.5
    dst = np.clip(dst, 0.0, 7.0)
    lo = np.floor(dst).astype(int)
    hi = np.minimum(lo + 1, 7)
    frac = dst - lo
    rows = img8[lo, :] * (1 - frac)[:, None] + img8[hi, :] * frac[:, None]
    out = rows[:, lo] * (1 - frac)[None, :] + rows[:, hi] * frac[None, :]
    return out


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "surrogate"
    os.makedirs(out_dir, exist_ok=True)

    digits = load_digits()
    n = digits.data.shape[0]
    images = np.zeros((n, 28, 28))
    for i in range(n):
        images[i] = upsample_bilinear(digits.data[i].reshape(8, 8) / 16.0)
    images = np.clip(np.round(images * 255.0), 0, 255)

    rng = np.random.default_rng(0)
    order = rng.permutation(n)
    split = int(0.8 * n)
    train, test = order[:split], order[split:]

    write_images(os.path.join(out_dir, "train-images-idx3-ubyte"),
                 images[train].reshape(len(train), -1))
    write_labels(os.path.join(out_dir, "train-labels-idx1-ubyte"), digits.target[train])
    write_images(os.path.join(out_dir, "t10k-images-idx3-ubyte"),
                 images[test].reshape(len(test), -1))
    write_labels(os.path.join(out_dir, "t10k-labels-idx1-ubyte"), digits.target[test])
    print(f"wrote {len(train)} train / {len(test)} test digit images to {out_dir}")


if __name__ == "__main__":
    main()
