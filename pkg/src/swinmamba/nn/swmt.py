"""SWMT tensor files and the parameter container built on them.

Tensor layout: magic ``b"SWMT"``, u32 LE rank, rank x u32 LE dims, u8 dtype
tag (0 = f64 LE, 1 = f32 LE, 2 = u8), then the row-major payload.

Container layout: magic ``b"SWMC"``, u32 LE entry count, then per entry a
length-prefixed (u32 LE) UTF-8 name and a length-prefixed UTF-8 shape string
(dims joined by ``","``; empty for scalars), then one SWMT tensor per entry
in manifest order.
"""
from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import BinaryIO, Mapping, Union

import numpy as np

MAGIC = b"SWMT"
CONTAINER_MAGIC = b"SWMC"
DTYPE_TAGS = {np.dtype("<f8"): 0, np.dtype("<f4"): 1, np.dtype("u1"): 2}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}

PathOrFile = Union[str, Path, BinaryIO]


class FormatError(ValueError):
    pass


def write_tensor(fh: BinaryIO, array: np.ndarray) -> None:
    arr = np.asarray(array)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if np.dtype(dt) not in DTYPE_TAGS:
        raise FormatError(f"unsupported dtype {arr.dtype}; SWMT stores f64, f32 or u8")
    arr = arr.astype(dt, copy=False)  # ascontiguousarray would promote 0-d to 1-d
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(struct.pack("<B", DTYPE_TAGS[np.dtype(dt)]))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated SWMT stream: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank)) if rank else ()
    (tag,) = struct.unpack("<B", _read_exact(fh, 1))
    if tag not in TAG_DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    dt = TAG_DTYPES[tag]
    count = int(np.prod(dims)) if dims else 1
    payload = _read_exact(fh, count * dt.itemsize)
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


def _open(target: PathOrFile, mode: str):
    if isinstance(target, (str, Path)):
        return open(target, mode)
    return _Borrowed(target)


class _Borrowed:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        return False


def save_tensor(target: PathOrFile, array: np.ndarray) -> None:
    with _open(target, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(source: PathOrFile) -> np.ndarray:
    with _open(source, "rb") as fh:
        return read_tensor(fh)


def _write_str(fh: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh: BinaryIO) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def save_container(target: PathOrFile, tensors: Mapping[str, np.ndarray]) -> None:
    with _open(target, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            _write_str(fh, name)
            _write_str(fh, ",".join(str(d) for d in np.shape(arr)))
        for arr in tensors.values():
            write_tensor(fh, arr)


def load_container(source: PathOrFile) -> "OrderedDict[str, np.ndarray]":
    with _open(source, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != CONTAINER_MAGIC:
            raise FormatError(f"bad container magic {magic!r}, expected {CONTAINER_MAGIC!r}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        manifest = []
        for _ in range(count):
            name = _read_str(fh)
            shape_str = _read_str(fh)
            shape = tuple(int(d) for d in shape_str.split(",")) if shape_str else ()
            manifest.append((name, shape))
        out = OrderedDict()
        for name, shape in manifest:
            arr = read_tensor(fh)
            if arr.shape != shape:
                raise FormatError(f"{name}: manifest shape {shape} != stored shape {arr.shape}")
            out[name] = arr
        return out


def dumps(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()
