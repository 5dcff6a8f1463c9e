"""Portable binary formats: feature files and the tensor container.

Feature files hold one [T, D] float32 matrix:

    bytes 0..7    magic ``PHFEAT\\x01\\x00``
    bytes 8..11   u32 little-endian row count T
    bytes 12..15  u32 little-endian column count D
    then          T*D float32 little-endian, row major

An equivalent whitespace text form is accepted and written on request:
first line ``T D``, then T lines of D floats.  Readers sniff the magic,
so either form may appear in a manifest.

The tensor container stores named float64 arrays plus a JSON metadata
blob; checkpoints, alignment maps, and projection stats all use it:

    bytes 0..7    magic ``PHEMTNS\\x01``
    bytes 8..11   u32 version (currently 1)
    bytes 12..19  u64 JSON header length
    then          header JSON: {"meta": ..., "tensors": [{name, shape}]}
    then          float64 little-endian payloads in listed order

Writes are atomic (temp file + rename), and readers verify the payload
length so a truncated file never yields partial state.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"PHFEAT\x01\x00"
CONTAINER_MAGIC = b"PHEMTNS\x01"
CONTAINER_VERSION = 1


class FileFormatError(Exception):
    """A file does not conform to one of the formats above."""


def write_features(path: str | Path, frames: np.ndarray, text: bool = False) -> None:
    """Write one feature matrix; float32 on disk."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2:
        raise ValueError(f"expected a [T, D] matrix, got shape {frames.shape}")
    path = Path(path)
    if text:
        with open(path, "w", encoding="ascii") as f:
            f.write(f"{frames.shape[0]} {frames.shape[1]}\n")
            for row in frames:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")
        return
    header = FEATURE_MAGIC + np.array(frames.shape, dtype="<u4").tobytes()
    _atomic_write(path, header + frames.astype("<f4").tobytes())


def read_features(path: str | Path) -> np.ndarray:
    """Read a feature matrix (binary or text form) as float64."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(8)
        if head == FEATURE_MAGIC:
            dims = np.frombuffer(f.read(8), dtype="<u4")
            if dims.size != 2:
                raise FileFormatError(f"{path}: truncated feature header")
            rows, cols = int(dims[0]), int(dims[1])
            payload = f.read(rows * cols * 4)
            if len(payload) != rows * cols * 4:
                raise FileFormatError(f"{path}: truncated feature payload")
            data = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
            return data.astype(np.float64)
    # Fall back to the text form.
    try:
        with open(path, "r", encoding="ascii") as f:
            first = f.readline().split()
            if len(first) != 2:
                raise FileFormatError(f"{path}: expected 'rows cols' on line 1")
            rows, cols = int(first[0]), int(first[1])
            data = np.loadtxt(f, dtype=np.float64, ndmin=2)
    except (UnicodeDecodeError, ValueError) as exc:
        raise FileFormatError(f"{path}: not a feature file ({exc})") from exc
    if data.shape != (rows, cols):
        raise FileFormatError(
            f"{path}: header says {rows}x{cols} but body is {data.shape[0]}x{data.shape[1]}"
        )
    # Text values round-trip through float32 like the binary form.
    return data.astype(np.float32).astype(np.float64)


def write_container(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 tensors plus JSON metadata, atomically."""
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f8").tobytes())
    header = json.dumps({"meta": meta, "tensors": entries}).encode("utf-8")
    parts = [
        CONTAINER_MAGIC,
        np.uint32(CONTAINER_VERSION).tobytes(),
        np.uint64(len(header)).tobytes(),
        header,
    ] + blobs
    _atomic_write(Path(path), b"".join(parts))


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (meta, tensors); raises FileFormatError on any damage."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:8] != CONTAINER_MAGIC:
        raise FileFormatError(f"{path}: not a tensor container")
    version = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if version != CONTAINER_VERSION:
        raise FileFormatError(
            f"{path}: container version {version} unsupported (expected {CONTAINER_VERSION})"
        )
    hlen = int(np.frombuffer(raw[12:20], dtype="<u8")[0])
    if len(raw) < 20 + hlen:
        raise FileFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
        meta = header["meta"]
        entries = header["tensors"]
    except (ValueError, KeyError) as exc:
        raise FileFormatError(f"{path}: corrupt header ({exc})") from exc
    offset = 20 + hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in entries:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        blob = raw[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise FileFormatError(f"{path}: truncated payload for tensor '{entry['name']}'")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FileFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return meta, tensors


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
