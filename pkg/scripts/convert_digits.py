#!/usr/bin/env python3
"""Convert common handwritten-digit files into the dynef image CSV layout.

Supported inputs:

* ``usps-text``: the whitespace table distributed as ``zip.train``/``zip.test``
  (one row per image: digit label, then 256 gray levels in [-1, 1], 16x16).
* ``idx``: MNIST-style IDX image/label file pairs (optionally gzipped); pass
  the image file as INPUT and the label file with ``--labels``.

Output: header ``p0..p{n-1},label``; pixels rescaled to [0, 1].

Example::

    python3 scripts/convert_digits.py usps-text zip.train usps_17.csv --digits 1 7
"""
from __future__ import annotations

import argparse
import gzip
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from dynef.tasks import ImageExample, write_dataset  # noqa: E402


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def read_usps_text(path: Path) -> tuple[np.ndarray, np.ndarray]:
    table = np.loadtxt(path)
    if table.ndim != 2 or table.shape[1] != 257:
        raise ValueError(f"{path}: expected 257 columns (label + 16x16 pixels), got {table.shape}")
    labels = table[:, 0].astype(int)
    images = (table[:, 1:].reshape(-1, 16, 16) + 1.0) / 2.0
    return np.clip(images, 0.0, 1.0), labels


def read_idx(path: Path) -> np.ndarray:
    with _open(path) as fh:
        data = fh.read()
    if data[:2] != b"\x00\x00" or data[2] != 0x08:
        raise ValueError(f"{path}: not an unsigned-byte IDX file")
    ndim = data[3]
    shape = tuple(int.from_bytes(data[4 + 4 * k: 8 + 4 * k], "big") for k in range(ndim))
    return np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim).reshape(shape)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("format", choices=["usps-text", "idx"])
    ap.add_argument("input", type=Path)
    ap.add_argument("output", type=Path)
    ap.add_argument("--labels", type=Path, help="IDX label file (idx format only)")
    ap.add_argument("--digits", type=int, nargs="+", help="keep only these digits, in this order")
    ap.add_argument("--limit", type=int, help="keep at most this many images per digit")
    args = ap.parse_args(argv)

    if args.format == "usps-text":
        images, labels = read_usps_text(args.input)
    else:
        if args.labels is None:
            ap.error("idx format needs --labels")
        images = read_idx(args.input).astype(float) / 255.0
        labels = read_idx(args.labels).astype(int)
        if len(images) != len(labels):
            ap.error("image and label files differ in length")

    digits = args.digits or sorted(set(labels.tolist()))
    keep, seen = [], {d: 0 for d in digits}
    for img, lab in zip(images, labels):
        if lab in seen and (args.limit is None or seen[lab] < args.limit):
            seen[lab] += 1
            keep.append(ImageExample(img, digits.index(lab), 0, str(lab)))
    write_dataset(keep, args.output)
    print(f"wrote {len(keep)} images to {args.output} ({seen})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
