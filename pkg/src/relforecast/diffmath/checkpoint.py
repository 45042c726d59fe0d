"""Versioned binary checkpoints.

Layout (little-endian)::

    b"RFCK" | u16 version | u32 meta_len | meta (utf-8 JSON)
    table(params)
    u8 has_optimizer [ | u64 step | table(m) | table(v) ]

    table := u32 count, then per entry
             u16 name_len | name | u8 dtype (0=f64, 1=f32) | u8 ndim | u32 dims... | raw values
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .params import ParamStore

MAGIC = b"RFCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class CheckpointError(ValueError):
    pass


def _write_table(buf: io.BufferedIOBase, table: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(table)))
    for name in sorted(table):
        arr = np.asarray(table[name])
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        code = _CODES[arr.dtype]
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def _read_table(buf) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    table = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(buf, 2))
        name = _read_exact(buf, nlen).decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(buf, 2))
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim))
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(_read_exact(buf, size * dt.itemsize), dtype=dt).reshape(shape)
        table[name] = arr.astype(dt.newbyteorder("="))
    return table


def params_bytes(store: ParamStore) -> bytes:
    buf = io.BytesIO()
    _write_table(buf, {n: p.data for n, p in store.items()})
    return buf.getvalue()


def params_hash(store: ParamStore) -> str:
    return hashlib.sha256(params_bytes(store)).hexdigest()


def dumps(store: ParamStore, meta: dict | None = None, optimizer: bool = True) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<HI", VERSION, len(meta_raw)))
    buf.write(meta_raw)
    _write_table(buf, {n: p.data for n, p in store.items()})
    if optimizer and store.m:
        buf.write(struct.pack("<BQ", 1, store.step_count))
        _write_table(buf, store.m)
        _write_table(buf, store.v)
    else:
        buf.write(struct.pack("<B", 0))
    return buf.getvalue()


def loads(data: bytes) -> tuple[ParamStore, dict]:
    buf = io.BytesIO(data)
    if _read_exact(buf, 4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack("<HI", _read_exact(buf, 6))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(_read_exact(buf, meta_len).decode("utf-8"))
    table = _read_table(buf)
    dtypes = {a.dtype for a in table.values()}
    store = ParamStore(dtype=dtypes.pop() if len(dtypes) == 1 else np.float64)
    for name in sorted(table):
        store.add(name, table[name])
    (has_opt,) = struct.unpack("<B", _read_exact(buf, 1))
    if has_opt:
        (store.step_count,) = struct.unpack("<Q", _read_exact(buf, 8))
        store.m = _read_table(buf)
        store.v = _read_table(buf)
    if buf.read(1):
        raise CheckpointError("trailing bytes after checkpoint")
    return store, meta


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, store: ParamStore, meta: dict | None = None, optimizer: bool = True) -> None:
    atomic_write(path, dumps(store, meta, optimizer))


def load(path) -> tuple[ParamStore, dict]:
    return loads(Path(path).read_bytes())
