#!/usr/bin/env python3
"""Build a 10,000-digit MNIST subset in IDX format from the `mnist` npm package.

The npm package ships 10,000 original MNIST digits as per-class JSON arrays of
intensities rounded to three decimals; every stored value maps back to a unique
byte via round(v * 255). The digits are shuffled with a fixed seed and split
into 8,000 training and 2,000 test records.

Usage: scripts/make_mnist_subset.py <path-to-unpacked-npm-package> <out-dir>
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main() -> None:
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for k in range(len(data) // 784):
            pixels = bytes(round(v * 255) for v in data[k * 784 : (k + 1) * 784])
            records.append((pixels, digit))
    random.Random(20190101).shuffle(records)
    for name, part in (("train", records[:8000]), ("test", records[8000:])):
        with gzip.GzipFile(out / f"{name}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x00000803, len(part), 28, 28))
            for pixels, _ in part:
                f.write(pixels)
        with gzip.GzipFile(out / f"{name}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x00000801, len(part)))
            f.write(bytes(label for _, label in part))
        print(f"{name}: {len(part)} records")


if __name__ == "__main__":
    main()
