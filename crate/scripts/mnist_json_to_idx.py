"""Convert the digit JSON files of the `mnist` npm package (v1.1.0, MIT) to
gzipped IDX files.

    python3 scripts/mnist_json_to_idx.py <package>/src/digits data/

Each JSON file holds one class as a flat list of 28x28 images with values in
[0, 1]. Pixels are rounded to bytes and the images shuffled with a fixed seed.
"""

import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        for i in range(len(flat) // 784):
            px = flat[i * 784 : (i + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
            labels.append(digit)
    order = list(range(len(labels)))
    random.Random(0).shuffle(order)
    n = len(order)
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for i in order:
            f.write(images[i])
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels[i] for i in order))


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
