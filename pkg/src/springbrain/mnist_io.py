"""IDX-format digit dataset loading (big-endian, magic 2051/2049).

Image files: int32 magic 2051, count, rows, cols, then count*rows*cols
uint8 pixels.  Label files: int32 magic 2049, count, then count uint8
labels.  Gzipped files are detected by their two-byte magic and inflated
transparently.  Pixels normalise to [0, 1].

The dataset root comes from the ``SPRINGBRAIN_DATA`` environment variable,
with the conventional file names train-images-idx3-ubyte /
train-labels-idx1-ubyte / t10k-... (optionally .gz).
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

DATA_ENV_VAR = "SPRINGBRAIN_DATA"

_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxParseError(ValueError):
    def __init__(self, path, offset, detail):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: {detail} (byte offset {offset})")


@dataclass
class MnistSet:
    images: np.ndarray   # (n, 784) float64 in [0, 1]
    labels: np.ndarray   # (n,) uint8
    split: str = ""

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split=None):
        return MnistSet(self.images[idx], self.labels[idx], split or self.split)


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _be32(buf, path, offset):
    if len(buf) < offset + 4:
        raise IdxParseError(path, offset, "truncated header")
    return struct.unpack(">i", buf[offset:offset + 4])[0], offset + 4


def load_idx_images(path):
    buf = _read_bytes(path)
    magic, off = _be32(buf, path, 0)
    if magic != IMAGE_MAGIC:
        raise IdxParseError(path, 0, f"bad image magic {magic} (expected {IMAGE_MAGIC})")
    count, off = _be32(buf, path, off)
    rows, off = _be32(buf, path, off)
    cols, off = _be32(buf, path, off)
    need = count * rows * cols
    if len(buf) - off < need:
        raise IdxParseError(path, off, f"payload truncated: need {need} bytes, "
                            f"have {len(buf) - off}")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    return pixels.reshape(count, rows * cols)


def load_idx_labels(path):
    buf = _read_bytes(path)
    magic, off = _be32(buf, path, 0)
    if magic != LABEL_MAGIC:
        raise IdxParseError(path, 0, f"bad label magic {magic} (expected {LABEL_MAGIC})")
    count, off = _be32(buf, path, off)
    if len(buf) - off < count:
        raise IdxParseError(path, off, f"payload truncated: need {count} bytes, "
                            f"have {len(buf) - off}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=off)


def load_mnist(images_path, labels_path, split=""):
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxParseError(labels_path, 4,
                            f"count mismatch: {len(images)} images, {len(labels)} labels")
    return MnistSet(images.astype(float) / 255.0, labels.copy(), split)


def dataset_root(root=None):
    return root or os.environ.get(DATA_ENV_VAR)


def find_split(split, root=None):
    """Locate a split's (images, labels) paths under the root; None if absent."""
    root = dataset_root(root)
    if root is None:
        return None
    img_name, lbl_name = _SPLIT_FILES[split]
    paths = []
    for name in (img_name, lbl_name):
        for cand in (os.path.join(root, name), os.path.join(root, name + ".gz")):
            if os.path.exists(cand):
                paths.append(cand)
                break
        else:
            return None
    return tuple(paths)


def load_split(split, root=None):
    paths = find_split(split, root)
    if paths is None:
        raise FileNotFoundError(
            f"digit dataset split '{split}' not found; set ${DATA_ENV_VAR} to a "
            "directory holding the IDX files")
    return load_mnist(*paths, split=split)


def pick_per_label(dataset, per_label, seed):
    """Seeded subset with exactly ``per_label`` items of each digit."""
    rng = np.random.default_rng(seed)
    chosen = []
    for label in range(10):
        pool = np.flatnonzero(dataset.labels == label)
        if len(pool) < per_label:
            raise ValueError(f"label {label} has only {len(pool)} items")
        chosen.extend(rng.choice(pool, size=per_label, replace=False))
    return dataset.subset(np.sort(np.array(chosen)), split=dataset.split + "-subset")
