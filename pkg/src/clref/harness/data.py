"""Dataset ingestion: IDX files, the bundled 5k MNIST subset, sklearn digits."""

from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

from clref.errors import ContractError, FormatError
from clref.nncore import Batch

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str):
    if len(raw) < 4:
        raise FormatError(f"{what} file too short for a magic number", offset=len(raw))
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{what} file has magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{what} header truncated", offset=len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    expected = int(np.prod(dims))
    body = raw[header:]
    if len(body) < expected:
        raise FormatError(f"{what} data truncated: need {expected} bytes, found {len(body)}",
                          offset=len(raw))
    return dims, np.frombuffer(body, dtype=np.uint8, count=expected)


def load_idx_dataset(images_path, labels_path):
    """Read an IDX image/label pair; images are flattened row-major and scaled to [0, 1]."""
    dims, pixels = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, "images")
    (n_labels,), labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, "labels")
    n, rows, cols = dims
    if n == 0:
        raise FormatError("image file holds no images", offset=4)
    if n != n_labels:
        raise FormatError(f"{n} images but {n_labels} labels", offset=4)
    inputs = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return inputs, labels.astype(np.int64)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``(n, rows, cols)`` and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_mnist5k():
    """The 5,000-image MNIST subset bundled with mlxtend (500 per digit)."""
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise ContractError("source 'mnist5k' needs the optional mlxtend package") from exc
    x, y = mnist_data()
    return x.astype(np.float64) / 255.0, y.astype(np.int64)


def load_digits():
    from sklearn.datasets import load_digits as _load

    d = _load()
    return d.data.astype(np.float64) / 16.0, d.target.astype(np.int64)


def load_base_data(source: dict, seed: int = 0, test_fraction: float = 0.2):
    """Return ``(train Batch, test Batch)`` for a data-source description.

    ``source`` is one of::

        {"kind": "idx", "train_images": ..., "train_labels": ...,
                        "test_images": ..., "test_labels": ...}
        {"kind": "mnist5k"}
        {"kind": "digits"}

    Sources without a predefined test split are split with a seeded shuffle.
    """
    kind = source.get("kind", "mnist5k")
    if kind == "idx":
        train = Batch(*load_idx_dataset(source["train_images"], source["train_labels"]))
        if source.get("test_images"):
            test = Batch(*load_idx_dataset(source["test_images"], source["test_labels"]))
            return train, test
        return _split(train.inputs, train.labels, seed, test_fraction)
    if kind == "mnist5k":
        return _split(*load_mnist5k(), seed, test_fraction)
    if kind == "digits":
        return _split(*load_digits(), seed, test_fraction)
    raise ContractError(f"unknown data source kind {kind!r}")


def _split(x, y, seed, test_fraction):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_test = int(round(len(y) * test_fraction))
    test, train = order[:n_test], order[n_test:]
    return Batch(x[train], y[train]), Batch(x[test], y[test])


def referenced_paths(source: dict) -> list[str]:
    if source.get("kind") != "idx":
        return []
    keys = ("train_images", "train_labels", "test_images", "test_labels")
    return [os.fspath(source[k]) for k in keys if source.get(k)]
