#!/usr/bin/env python3
"""Download the four MNIST IDX files into data/mnist/ (or a given directory).

Tries a couple of well-known mirrors; files are kept gzip-compressed, which
the loaders read transparently.
"""

import argparse
import sys
import urllib.request
from pathlib import Path

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]

FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]


def fetch(name, dest):
    for mirror in MIRRORS:
        url = mirror + name
        try:
            print(f"fetching {url}")
            with urllib.request.urlopen(url, timeout=60) as r:
                dest.write_bytes(r.read())
            return True
        except OSError as e:
            print(f"  failed: {e}")
    return False


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default="data/mnist", help="target directory")
    args = parser.parse_args()
    root = Path(args.dest)
    root.mkdir(parents=True, exist_ok=True)
    ok = True
    for name in FILES:
        dest = root / name
        if dest.exists():
            print(f"{dest} already present")
            continue
        ok &= fetch(name, dest)
    if not ok:
        print("some files could not be downloaded", file=sys.stderr)
        return 1
    print(f"MNIST ready under {root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
