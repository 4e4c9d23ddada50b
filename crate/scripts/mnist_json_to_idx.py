#!/usr/bin/env python3
"""Convert the digit JSON files shipped with the `mnist` npm package to IDX ubyte files.

Usage: mnist_json_to_idx.py <digits_dir> <out_prefix> [per_class]

`digits_dir` holds 0.json .. 9.json (each {"data": [784*n floats in [0,1]]}).
Writes <out_prefix>-images-idx3-ubyte and <out_prefix>-labels-idx1-ubyte.
"""
import json
import random
import struct
import sys


def main():
    digits_dir, prefix = sys.argv[1], sys.argv[2]
    per_class = int(sys.argv[3]) if len(sys.argv) > 3 else None
    records = []
    for digit in range(10):
        with open(f"{digits_dir}/{digit}.json") as fh:
            flat = json.load(fh)["data"]
        n = len(flat) // 784
        if per_class is not None:
            n = min(n, per_class)
        for i in range(n):
            px = bytes(min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784])
            records.append((px, digit))
    random.Random(0).shuffle(records)
    with open(f"{prefix}-images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(records), 28, 28))
        for px, _ in records:
            fh.write(px)
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(records)))
        fh.write(bytes(label for _, label in records))
    print(f"wrote {len(records)} records")


if __name__ == "__main__":
    main()
