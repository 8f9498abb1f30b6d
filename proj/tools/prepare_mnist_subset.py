#!/usr/bin/env python3
"""Build a small MNIST dataset in standard IDX layout from the 5000-digit
sample shipped inside the mlxtend wheel (500 digits per class, raw 0-255
pixels). Writes gzip-compressed IDX files that `koopcon` reads directly.

    python3 tools/prepare_mnist_subset.py --out data/mnist5k [--wheel PATH]

Without --wheel the wheel is fetched with `pip download mlxtend --no-deps`.
"""
import argparse
import glob
import gzip
import io
import struct
import subprocess
import tempfile
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(tmp):
    subprocess.run(["pip", "download", "mlxtend", "--no-deps", "-d", tmp, "-q"], check=True)
    return glob.glob(f"{tmp}/mlxtend-*.whl")[0]


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the output byte-identical across runs
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as f:
            f.write(header + payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--wheel")
    ap.add_argument("--train-per-class", type=int, default=400)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        csv = gzip.decompress(zipfile.ZipFile(wheel).read(CSV_MEMBER)).decode()

    rows = [list(map(int, line.split(","))) for line in csv.strip().splitlines()]
    train, test = [], []
    seen = [0] * 10
    for r in rows:
        label = r[-1]
        (train if seen[label] < args.train_per_class else test).append(r)
        seen[label] += 1

    import os
    os.makedirs(args.out, exist_ok=True)
    for prefix, part in (("train", train), ("t10k", test)):
        pixels = bytes(v for r in part for v in r[:-1])
        labels = bytes(r[-1] for r in part)
        write_idx(f"{args.out}/{prefix}-images-idx3-ubyte.gz", 0x803, (len(part), 28, 28), pixels)
        write_idx(f"{args.out}/{prefix}-labels-idx1-ubyte.gz", 0x801, (len(part),), labels)
        print(prefix, len(part))


if __name__ == "__main__":
    main()
