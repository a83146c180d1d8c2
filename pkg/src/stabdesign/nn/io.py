"""Binary weight files.

Layout (all integers little-endian)::

    magic   4s   b"SDWT"
    version u16
    step    u64   optimizer step counter
    count   u32   number of entries
    entries       name_len u16 | name utf-8 | kind u8 | dtype u8 | ndim u8 |
                  dims u32*ndim | raw little-endian values
    crc32   u32   over every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import CorruptFile, VersionMismatch
from .params import ParameterStore
from .tensor import Tensor

MAGIC = b"SDWT"
FORMAT_VERSION = 2
_KINDS = {"param": 0, "m": 1, "v": 2, "buffer": 3}
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def _entry(name: str, kind: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _DTYPE_CODES[arr.dtype]
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name
    head += struct.pack("<BBB", _KINDS[kind], code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def dumps(store: ParameterStore, include_moments: bool = True, version: int = FORMAT_VERSION) -> bytes:
    entries = []
    for name, p in store.params.items():
        entries.append(_entry(name, "param", p.data))
        if include_moments:
            entries.append(_entry(name, "m", store.m[name]))
            entries.append(_entry(name, "v", store.v[name]))
    for name, b in store.buffers.items():
        entries.append(_entry(name, "buffer", b))
    body = MAGIC + struct.pack("<HQI", version, store.step, len(entries)) + b"".join(entries)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob: bytes) -> ParameterStore:
    if len(blob) < 4 + 14 + 4 or blob[:4] != MAGIC:
        raise CorruptFile("not a weight file (bad magic or too short)")
    version, step, count = struct.unpack_from("<HQI", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"weight file version {version}, expected {FORMAT_VERSION}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("checksum mismatch (truncated or modified file)")
    store = ParameterStore()
    store.step = step
    off = 4 + 14
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + n].decode("utf-8")
            off += n
            kind, code, ndim = struct.unpack_from("<BBB", body, off)
            off += 3
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(body):
                raise CorruptFile(f"entry {name!r} runs past end of file")
            arr = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape)
            arr = arr.astype(dt.newbyteorder("="), copy=True)
            off += nbytes
            if kind == _KINDS["param"]:
                store.params[name] = Tensor(arr, requires_grad=True, name=name, dtype=arr.dtype)
                store.m.setdefault(name, np.zeros_like(arr))
                store.v.setdefault(name, np.zeros_like(arr))
            elif kind == _KINDS["m"]:
                store.m[name] = arr
            elif kind == _KINDS["v"]:
                store.v[name] = arr
            else:
                store.buffers[name] = arr
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"unparseable weight file: {exc}") from None
    if off != len(body):
        raise CorruptFile("trailing bytes after last entry")
    return store


def save_weights(store: ParameterStore, path: str | Path, include_moments: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(store, include_moments))
    return path


def load_weights(path: str | Path) -> ParameterStore:
    return loads(Path(path).read_bytes())
