"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"VOICEID\\0"
    version    u32
    header_len u32, then UTF-8 JSON text (graph spec + metadata, sorted keys)
    n_arrays   u32
    per array:
        name_len u16, UTF-8 name
        dtype    2 bytes ASCII ("f4", "f8", "i8")
        ndim     u8, then ndim x u64 dims
        raw little-endian values

Saving the same arrays and header twice yields identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VOICEID\x00"
VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class CheckpointError(ValueError):
    pass


def _dtype_code(arr) -> str:
    for code, dt in _DTYPES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return code
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def dumps(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        bname = name.encode("utf-8")
        parts.append(struct.pack("<H", len(bname)) + bname + code.encode("ascii"))
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(raw)
    return b"".join(parts)


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(f"truncated checkpoint reading {what} at byte offset {off}")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("bad magic at byte offset 0")
    version, hlen = struct.unpack("<II", take(8, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at byte offset 8")
    start = off
    try:
        header = json.loads(take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header at byte offset {start}: {exc}") from None
    (count,) = struct.unpack("<I", take(4, "array count"))
    arrays = {}
    for _ in range(count):
        entry = off
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8", errors="replace")
        code = take(2, "dtype").decode("ascii", errors="replace")
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype {code!r} for {name!r} at byte offset {entry}")
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, "shape"))
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = take(n * dt.itemsize, f"values of {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if off != len(data):
        raise CheckpointError(f"trailing bytes at byte offset {off}")
    return header, arrays


def save(path, header, arrays) -> str:
    """Write the checkpoint and a ``.sha256`` sidecar; returns the digest."""
    data = dumps(header, arrays)
    path = Path(path)
    path.write_bytes(data)
    digest = hashlib.sha256(data).hexdigest()
    path.with_name(path.name + ".sha256").write_text(digest + "\n")
    return digest


def load(path, verify=True):
    path = Path(path)
    data = path.read_bytes()
    sidecar = path.with_name(path.name + ".sha256")
    if verify and sidecar.exists():
        expected = sidecar.read_text().strip()
        if hashlib.sha256(data).hexdigest() != expected:
            raise CheckpointError(f"{path}: sha256 does not match {sidecar.name}")
    return loads(data)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
