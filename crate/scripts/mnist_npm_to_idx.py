#!/usr/bin/env python3
"""Convert the digits bundled in the `mnist` npm package into IDX files.

The package (https://www.npmjs.com/package/mnist) ships 10,000 MNIST digits
as JSON arrays of pixel intensities rounded to three decimals, one file per
class. Multiplying by 255 and rounding recovers the original bytes.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist-npm

The last 100 digits of each class form the test split (1,000 images); the
rest form the training split. Classes are interleaved round-robin.
"""
import json
import struct
import sys
from pathlib import Path

TEST_PER_CLASS = 100
SIDE = 28


def load_class(path):
    values = json.loads(path.read_text())["data"]
    pixels = bytes(round(v * 255) for v in values)
    n = len(pixels) // (SIDE * SIDE)
    return [pixels[i * SIDE * SIDE:(i + 1) * SIDE * SIDE] for i in range(n)]


def interleave(per_class):
    out = []
    depth = max(len(v) for v in per_class)
    for i in range(depth):
        for label, images in enumerate(per_class):
            if i < len(images):
                out.append((label, images[i]))
    return out


def write_idx(out_dir, stem, samples):
    images = out_dir / f"{stem}-images-idx3-ubyte"
    labels = out_dir / f"{stem}-labels-idx1-ubyte"
    with images.open("wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for _, img in samples:
            f.write(img)
    with labels.open("wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for label, _ in samples))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    classes = [load_class(src / f"{d}.json") for d in range(10)]
    train = interleave([c[:-TEST_PER_CLASS] for c in classes])
    test = interleave([c[-TEST_PER_CLASS:] for c in classes])
    write_idx(dst, "train", train)
    write_idx(dst, "t10k", test)
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
