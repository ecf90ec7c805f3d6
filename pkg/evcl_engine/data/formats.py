
"""
Binary dataset containers: IDX (MNIST, FashionMNIST) and the CIFAR-10 binary
format (1 label byte + 3072 pixel bytes per record). Pixels are scaled to [0, 1].
"""
import struct

import numpy as np

from ..errors import FormatError, TruncationError
from .dataset import Dataset

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803
_IDX_RANK = {IDX_LABELS: 1, IDX_IMAGES: 3}

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
CIFAR_CLASSES = 10


def parse_idx(data: bytes) -> np.ndarray:
    """
    Labels (magic 0x801) come back as int64, images (magic 0x803) as float64 / 255
    with shape (N, rows, cols).
    """
    if len(data) < 4:
        raise TruncationError("IDX header", 4, len(data))
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in _IDX_RANK:
        raise FormatError(f"Unsupported IDX type: magic 0x{magic:08x} "
                          f"(expected 0x{IDX_LABELS:08x} or 0x{IDX_IMAGES:08x})")
    ndim = _IDX_RANK[magic]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncationError("IDX header", header, len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) < header + count:
        raise TruncationError("IDX payload", header + count, len(data))
    if len(data) > header + count:
        raise FormatError(f"IDX payload has {len(data) - header - count} trailing bytes")
    values = np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)
    if magic == IDX_LABELS:
        return values.astype(np.int64)
    return values.astype(np.float64) / 255.0


def encode_idx(values: np.ndarray, images: bool) -> bytes:
    """Inverse of parse_idx; image values are mapped back to bytes by rounding x * 255."""
    values = np.asarray(values)
    if images:
        if values.ndim != 3:
            raise FormatError(f"IDX images must be rank 3, got shape {values.shape}")
        raw = np.rint(values * 255.0).astype(np.uint8)
        magic = IDX_IMAGES
    else:
        if values.ndim != 1:
            raise FormatError(f"IDX labels must be rank 1, got shape {values.shape}")
        raw = values.astype(np.uint8)
        magic = IDX_LABELS
    return struct.pack(f">I{raw.ndim}I", magic, *raw.shape) + raw.tobytes()


def parse_cifar10_bin(data: bytes) -> Dataset:
    if len(data) == 0 or len(data) % CIFAR_RECORD != 0:
        raise FormatError(f"CIFAR-10 binary length {len(data)} is not a positive multiple of {CIFAR_RECORD}")
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= CIFAR_CLASSES:
        bad = int(np.argmax(labels >= CIFAR_CLASSES))
        raise FormatError(f"CIFAR-10 record {bad} has label {labels[bad]} > 9")
    inputs = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(inputs, labels, CIFAR_CLASSES)


def encode_cifar10_bin(dataset: Dataset) -> bytes:
    if dataset.dim != CIFAR_PIXELS:
        raise FormatError(f"CIFAR-10 records need {CIFAR_PIXELS} inputs, got {dataset.dim}")
    pixels = np.rint(dataset.inputs * 255.0).astype(np.uint8)
    labels = dataset.labels.astype(np.uint8)[:, None]
    return np.hstack([labels, pixels]).tobytes()
