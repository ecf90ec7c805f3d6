
"""
Versioned binary container shared by posterior snapshots and Fisher estimates.

Layout (all integers big-endian):
    b"EVCL" | u16 version | u8 kind | i32 task_index | i64 sample_count | u32 n_entries
    per entry: u16 len + layer name | u16 len + role | u8 ndim | u32 dims... | float64 values
"""
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from ..errors import FormatError, TruncationError
from .snapshot import PosteriorSnapshot

MAGIC = b"EVCL"
VERSION = 1
KIND_SNAPSHOT = 1
KIND_FISHER = 2

_HEADER = struct.Struct(">4sHBiqI")

Entry = Tuple[str, str, np.ndarray]


def write_container(kind: int, task_index: int, sample_count: int, entries: List[Entry]) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, kind, task_index, sample_count, len(entries))]
    for layer, role, values in entries:
        values = np.asarray(values, dtype=np.float64)
        for text in (layer, role):
            raw = text.encode("utf-8")
            parts.append(struct.pack(">H", len(raw)) + raw)
        parts.append(struct.pack(">B", values.ndim))
        parts.append(struct.pack(f">{values.ndim}I", *values.shape))
        parts.append(values.astype(">f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(what, self.pos + n, len(self.data))
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def read_container(data: bytes, expected_kind: int) -> Tuple[int, int, List[Entry]]:
    reader = _Reader(data)
    magic, version, kind, task_index, sample_count, count = reader.unpack(">4sHBiqI", "container header")
    if magic != MAGIC:
        raise FormatError(f"Bad container magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"Unsupported container version {version}")
    if kind != expected_kind:
        raise FormatError(f"Container kind {kind} where {expected_kind} was expected")
    entries = []
    for _ in range(count):
        (n,) = reader.unpack(">H", "entry name")
        layer = reader.take(n, "entry name").decode("utf-8")
        (n,) = reader.unpack(">H", "entry role")
        role = reader.take(n, "entry role").decode("utf-8")
        (ndim,) = reader.unpack(">B", "entry rank")
        shape = reader.unpack(f">{ndim}I", "entry shape")
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(reader.take(8 * size, f"{layer}/{role} values"), dtype=">f8")
        entries.append((layer, role, values.astype(np.float64).reshape(shape)))
    if reader.pos != len(data):
        raise FormatError(f"{len(data) - reader.pos} trailing bytes after last entry")
    return task_index, sample_count, entries


def dump_snapshot(snapshot: PosteriorSnapshot) -> bytes:
    entries: List[Entry] = []
    for (layer, kind) in snapshot.keys():
        entries.append((layer, f"{kind}_mu", snapshot.mu[(layer, kind)]))
        entries.append((layer, f"{kind}_var", snapshot.var[(layer, kind)]))
    return write_container(KIND_SNAPSHOT, snapshot.task_index, 0, entries)


def load_snapshot(data: bytes) -> PosteriorSnapshot:
    task_index, _, entries = read_container(data, KIND_SNAPSHOT)
    mu: Dict = {}
    var: Dict = {}
    for layer, role, values in entries:
        kind, _, stat = role.partition("_")
        target = {"mu": mu, "var": var}.get(stat)
        if target is None:
            raise FormatError(f"Unknown snapshot role '{role}'")
        target[(layer, kind)] = values
    return PosteriorSnapshot.from_arrays(task_index, mu, var)


def save_snapshot(snapshot: PosteriorSnapshot, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_snapshot(snapshot))
    return path


def read_snapshot(path) -> PosteriorSnapshot:
    return load_snapshot(Path(path).read_bytes())
