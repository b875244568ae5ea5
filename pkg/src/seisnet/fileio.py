"""Atomic file writes and the checksummed tensor container.

Container layout (all integers little-endian)::

    magic      8 bytes   b"SEISNETC"
    version    u32       1
    header_len u32
    header     header_len bytes of UTF-8 JSON
    tensors    raw little-endian payloads in header["tensors"] order
    digest     32 bytes  SHA-256 of everything above

``header["tensors"]`` lists ``{"name", "shape", "dtype"}`` with dtype one of
``"<f4"`` / ``"<f8"``. Weight files and optimizer checkpoints both use it.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"SEISNETC"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class ContainerError(ValueError):
    """Malformed, truncated or corrupted container file."""


@contextlib.contextmanager
def atomic_write(path, mode="w", **kw):
    """Write to a temp file beside ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def encode_container(header: dict, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    header = dict(header)
    table = []
    payload = []
    for name, arr in tensors:
        arr = np.asarray(arr)
        code = arr.dtype.newbyteorder("<").str
        if code not in _DTYPES:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        table.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payload.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    header["tensors"] = table
    head = json.dumps(header, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def decode_container(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < _PREFIX.size:
        raise ContainerError(f"file too short for container prefix: {len(blob)} bytes, need {_PREFIX.size}")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version} at byte offset 8")
    start = _PREFIX.size
    if len(blob) < start + head_len + 32:
        raise ContainerError(f"truncated header: need {start + head_len + 32} bytes, found {len(blob)}")
    try:
        header = json.loads(blob[start:start + head_len])
    except ValueError as exc:
        raise ContainerError(f"unreadable header at byte offset {start}: {exc}") from None
    offset = start + head_len
    sizes = []
    for entry in header.get("tensors", []):
        dt = _DTYPES.get(entry.get("dtype"))
        if dt is None:
            raise ContainerError(f"tensor {entry.get('name')!r}: unknown dtype {entry.get('dtype')!r}")
        sizes.append(int(np.prod(entry["shape"], dtype=np.int64)) * dt.itemsize)
    expected = offset + sum(sizes) + 32
    if len(blob) != expected:
        raise ContainerError(f"size mismatch: header implies {expected} bytes, found {len(blob)}")
    digest = hashlib.sha256(blob[:-32]).digest()
    if digest != blob[-32:]:
        raise ContainerError(f"checksum mismatch at byte offset {len(blob) - 32}")
    tensors = {}
    for entry, size in zip(header["tensors"], sizes):
        dt = _DTYPES[entry["dtype"]]
        arr = np.frombuffer(blob, dtype=dt, count=size // dt.itemsize, offset=offset)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))
        offset += size
    return header, tensors


def write_container(path, header, tensors):
    blob = encode_container(header, tensors)
    with atomic_write(path, "wb") as fh:
        fh.write(blob)


def read_container(path):
    return decode_container(Path(path).read_bytes())
