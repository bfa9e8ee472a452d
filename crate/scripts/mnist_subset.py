#!/usr/bin/env python3
"""Build a 10k-image MNIST subset in IDX format.

Source: the `mnist` npm package (10,000 digits from the MNIST test set,
stored as per-digit JSON arrays with pixels scaled to [0, 1] and rounded to
three decimals). Fetch it with `npm pack mnist && tar xzf mnist-*.tgz`.

The images are shuffled with a fixed seed and split 8000/2000 into
train/test. Pixels are mapped back to bytes with round(v * 255).

Usage: mnist_subset.py <path/to/package/src/digits> <out_dir>
"""
import json
import random
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        raw = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        assert len(raw) % 784 == 0
        for i in range(0, len(raw), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in raw[i : i + 784]]
            samples.append((pixels, digit))
    rng = random.Random(20240601)
    rng.shuffle(samples)
    train, test = samples[:8000], samples[8000:]
    out_dir.mkdir(parents=True, exist_ok=True)
    write_images(out_dir / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(out_dir / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(out_dir / "test-images-idx3-ubyte", [s[0] for s in test])
    write_labels(out_dir / "test-labels-idx1-ubyte", [s[1] for s in test])
    print(f"{len(train)} train / {len(test)} test images written to {out_dir}")


if __name__ == "__main__":
    main()
