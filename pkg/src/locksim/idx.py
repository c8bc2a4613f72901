"""Reader for the IDX binary format used by the MNIST distribution.

Only the two unsigned-byte layouts MNIST uses are accepted: image files
(magic 0x00000803, three dimensions) and label files (magic 0x00000801, one
dimension). Sizes are 32-bit big-endian; pixel data is row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .models import Dataset

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MAX_DESK_SAMPLES = 2000


class IdxFormatError(ValueError):
    pass


def read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated at byte offset {len(raw)} while reading magic number")
    magic = raw[:4]
    if magic != struct.pack(">I", expected_magic):
        raise IdxFormatError(
            f"{path}: bad magic number, expected bytes {struct.pack('>I', expected_magic).hex(' ')} "
            f"but found {magic.hex(' ')}"
        )
    ndim = raw[3]
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(f"{path}: truncated at byte offset {len(raw)} inside the dimension header")
    shape = struct.unpack(f">{ndim}I", raw[4:header_end])
    n_bytes = int(np.prod(shape, dtype=np.int64))
    if len(raw) < header_end + n_bytes:
        raise IdxFormatError(
            f"{path}: truncated at byte offset {len(raw)}, expected {header_end + n_bytes} bytes"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=n_bytes, offset=header_end).reshape(shape)


def load_idx_images(path) -> np.ndarray:
    """Images flattened to rows and rescaled to [0, 1]."""
    imgs = read_idx(path, IMAGE_MAGIC)
    return imgs.reshape(imgs.shape[0], -1).astype(float) / 255.0


def load_idx_labels(path) -> np.ndarray:
    return read_idx(path, LABEL_MAGIC).astype(int)


def load_idx(images_path, labels_path, max_samples: int = MAX_DESK_SAMPLES, seed: int = 0,
             positive_from: int = 5) -> Dataset:
    """Binary-labelled desk-scale subset of an IDX image/label pair.

    Digits ``>= positive_from`` become label 1, the rest label 0.
    """
    X = load_idx_images(images_path)
    digits = load_idx_labels(labels_path)
    if X.shape[0] != digits.shape[0]:
        raise IdxFormatError(f"{X.shape[0]} images but {digits.shape[0]} labels")
    if not 1 <= max_samples <= MAX_DESK_SAMPLES:
        raise ValueError(f"max_samples must be in [1, {MAX_DESK_SAMPLES}]")
    if X.shape[0] > max_samples:
        keep = np.sort(np.random.default_rng(seed).choice(X.shape[0], max_samples, replace=False))
        X, digits = X[keep], digits[keep]
    return Dataset(X, (digits >= positive_from).astype(float), "idx-file")


def write_idx(path, array: np.ndarray):
    """Write a uint8 array in IDX format (1-D labels or 3-D images)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {1: LABEL_MAGIC, 3: IMAGE_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError("only 1-D label and 3-D image arrays are supported")
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes(order="C"))
