"""Named tensor store and its binary container.

Container layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"M2AE"
    4       4     version, u32 (= 1)
    8       8     entry count, u64
    16      ...   entries, back to back:
                    u32 name length, UTF-8 name bytes,
                    u8 dtype (0 = f32), u32 ndim, ndim x u64 dims,
                    prod(dims) x f32 data

An empty store is therefore exactly 16 bytes.
"""
import os
import struct

import numpy as np

from .errors import FormatError, MissingWeightError

MAGIC = b"M2AE"
VERSION = 1
DTYPE_F32 = 0
HEADER_SIZE = 16


class WeightStore(dict):
    """Ordered ``name -> float32 array`` mapping; missing names raise ``MissingWeightError``."""

    def __missing__(self, key):
        raise MissingWeightError(key)

    def __setitem__(self, key, value):
        if not isinstance(key, str):
            raise TypeError("weight names must be strings")
        super().__setitem__(key, np.asarray(value, dtype=np.float32))


def save_weights(store, path):
    """Write ``store`` atomically (temp file, then rename)."""
    chunks = [MAGIC, struct.pack("<IQ", VERSION, len(store))]
    for name, arr in store.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BI", DTYPE_F32, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise FormatError(f"truncated {what}: need {n} bytes, {len(buf) - pos} left", pos)
    return buf[pos:pos + n], pos + n


def parse_weights(buf):
    raw, pos = _take(buf, 0, 4, "magic")
    if raw != MAGIC:
        raise FormatError(f"bad magic {raw!r}", 0)
    raw, pos = _take(buf, pos, 4, "version")
    (version,) = struct.unpack("<I", raw)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    raw, pos = _take(buf, pos, 8, "entry count")
    (count,) = struct.unpack("<Q", raw)
    store = WeightStore()
    for _ in range(count):
        start = pos
        raw, pos = _take(buf, pos, 4, "name length")
        (nlen,) = struct.unpack("<I", raw)
        raw, pos = _take(buf, pos, nlen, "name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("name is not UTF-8", pos - nlen) from None
        if name in store:
            raise FormatError(f"duplicate tensor name {name!r}", start)
        raw, pos = _take(buf, pos, 5, "dtype/ndim")
        dtype, ndim = struct.unpack("<BI", raw)
        if dtype != DTYPE_F32:
            raise FormatError(f"unknown dtype code {dtype}", pos - 5)
        raw, pos = _take(buf, pos, 8 * ndim, "dims")
        dims = struct.unpack(f"<{ndim}Q", raw)
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw, pos = _take(buf, pos, 4 * size, f"data of {name!r}")
        store[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    return store


def load_weights(path):
    with open(path, "rb") as fh:
        return parse_weights(fh.read())
