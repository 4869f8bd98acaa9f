#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package to IDX files.

The package stores each class as a flat list of 784-pixel images with values
x/255 rounded to three decimals; x is recovered by rounding value*255.
Images are shuffled with a fixed seed so any prefix split mixes all classes.

usage: npm_mnist_to_idx.py <package>/src/digits <out_dir>
"""
import json
import pathlib
import random
import struct
import sys


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__.strip().splitlines()[-1])
    src, out = pathlib.Path(sys.argv[1]), pathlib.Path(sys.argv[2])
    samples = []
    for label in range(10):
        flat = json.loads((src / f"{label}.json").read_text())["data"]
        for i in range(0, len(flat) - 783, 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i:i + 784])
            samples.append((pixels, label))
    random.Random(0).shuffle(samples)
    out.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
