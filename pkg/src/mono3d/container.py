"""Binary container for named arrays.

Layout: a UTF-8 JSON header mapping ``name -> {shape, dtype, byte_offset}``,
terminated by a NUL byte, zero-padded to a 64-byte boundary, then the
little-endian array payloads. ``byte_offset`` counts from the start of the
payload region and is a multiple of 64. The reserved key ``__meta__`` holds
free-form JSON metadata and has no payload.
"""

from __future__ import annotations

import json

import numpy as np

ALIGN = 64
META_KEY = "__meta__"

_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4"), "u8": np.dtype("u1")}


class ContainerError(ValueError):
    pass


def _tag_for(arr: np.ndarray) -> str:
    if arr.dtype == np.bool_ or arr.dtype == np.uint8:
        return "u8"
    if np.issubdtype(arr.dtype, np.integer):
        return "i32"
    if np.issubdtype(arr.dtype, np.floating):
        return "f32"
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def _pad(n: int) -> int:
    return -n % ALIGN


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    header: dict = {}
    payloads = []
    offset = 0
    for name in sorted(arrays):
        if name == META_KEY:
            raise ContainerError(f"{META_KEY!r} is reserved")
        arr = np.asarray(arrays[name])
        tag = _tag_for(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        header[name] = {"shape": list(arr.shape), "dtype": tag, "byte_offset": offset}
        payloads.append(data + b"\0" * _pad(len(data)))
        offset += len(payloads[-1])
    if meta is not None:
        header[META_KEY] = meta
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\0"
    head += b"\0" * _pad(len(head))
    return head + b"".join(payloads)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    end = buf.find(b"\0")
    if end < 0:
        raise ContainerError("header terminator not found")
    try:
        header = json.loads(buf[:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"bad header: {exc}") from None
    base = end + 1 + _pad(end + 1)
    meta = header.pop(META_KEY, {})
    out = {}
    for name, entry in header.items():
        dtype = _DTYPES.get(entry.get("dtype"))
        if dtype is None:
            raise ContainerError(f"{name}: unknown dtype {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        start = base + entry["byte_offset"]
        count = int(np.prod(shape)) if shape else 1
        stop = start + count * dtype.itemsize
        if entry["byte_offset"] % ALIGN or stop > len(buf):
            raise ContainerError(f"{name}: payload out of bounds or misaligned")
        out[name] = np.frombuffer(buf[start:stop], dtype=dtype).reshape(shape).copy()
    return out, meta
