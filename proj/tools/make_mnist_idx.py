#!/usr/bin/env python3
"""Builds the desk-scale MNIST subset used by the experiments.

The 10,000 digits bundled in the `mnist` npm package (src/digits/<d>.json,
row-major 28x28 floats = byte/255 rounded to 3 decimals) are converted back to
bytes and written as standard IDX files. Each digit class is split 80/20 into
train/test; within a split, samples are interleaved by class so that any
prefix is roughly balanced.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_idx.py package/src/digits data/mnist
"""
import json
import struct
import sys
from pathlib import Path

SIDE = 28
PIXELS = SIDE * SIDE
TRAIN_FRACTION = 0.8


def load_digits(src: Path):
    classes = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(raw) // PIXELS
        images = []
        for i in range(count):
            chunk = raw[i * PIXELS:(i + 1) * PIXELS]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in chunk))
        classes.append(images)
    return classes


def interleave(per_class):
    out = []
    longest = max(len(items) for items in per_class)
    for i in range(longest):
        for label, items in enumerate(per_class):
            if i < len(items):
                out.append((label, items[i]))
    return out


def write_idx(prefix: Path, samples):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for _, image in samples:
            f.write(image)
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for label, _ in samples))


def main():
    if len(sys.argv) != 3:
        sys.exit(f"usage: {sys.argv[0]} <digits-dir> <out-dir>")
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    classes = load_digits(src)
    train, test = [], []
    for images in classes:
        cut = int(round(len(images) * TRAIN_FRACTION))
        train.append(images[:cut])
        test.append(images[cut:])
    train_samples, test_samples = interleave(train), interleave(test)
    write_idx(out / "train", train_samples)
    write_idx(out / "test", test_samples)
    print(f"train={len(train_samples)} test={len(test_samples)}")


if __name__ == "__main__":
    main()
