#!/usr/bin/env python3
"""Convert the 5,000-digit MNIST sample shipped with mlxtend into IDX files.

Writes images-idx3-ubyte, labels-idx1-ubyte and dataset descriptors
mnist-eo.json / mnist-add.json for `vcem --dataset`.
"""

import argparse
import gzip
import io
import json
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_source(source):
    if source is None:
        try:
            import mlxtend.data.mnist as m
        except ImportError:
            sys.exit("mlxtend is not installed; pass --source <mlxtend wheel or mnist_5k.csv.gz>")
        source = Path(m.DATA_PATH)
    source = Path(source)
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as z:
            raw = gzip.decompress(z.read(MEMBER))
    elif source.suffix == ".gz":
        raw = gzip.decompress(source.read_bytes())
    else:
        raw = source.read_bytes()
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    if table.ndim != 2 or table.shape[1] != 785:
        sys.exit(f"{source}: expected 785 columns (784 pixels + label), got {table.shape}")
    pixels, labels = table[:, :-1], table[:, -1]
    if pixels.min() < 0 or pixels.max() > 255 or np.any(pixels != np.round(pixels)):
        sys.exit(f"{source}: pixels must be integers in 0..255")
    if np.any((labels < 0) | (labels > 9)):
        sys.exit(f"{source}: labels must lie in 0..9")
    return pixels.astype(np.uint8), labels.astype(np.uint8)


def idx_bytes(array):
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + b"".join(struct.pack(">I", d) for d in array.shape)
    return header + array.tobytes()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--source", help="mlxtend wheel, mnist_5k.csv.gz or plain CSV (default: installed mlxtend)")
    ap.add_argument("--out", default="data/mnist", help="output directory")
    args = ap.parse_args()

    pixels, labels = read_source(args.source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "images-idx3-ubyte").write_bytes(idx_bytes(pixels.reshape(-1, 28, 28)))
    (out / "labels-idx1-ubyte").write_bytes(idx_bytes(labels))
    for kind in ("mnist-eo", "mnist-add"):
        desc = {"kind": kind, "images": "images-idx3-ubyte", "labels": "labels-idx1-ubyte"}
        (out / f"{kind}.json").write_text(json.dumps(desc, indent=2) + "\n")
    print(f"wrote {len(labels)} digits to {out}")


if __name__ == "__main__":
    main()
