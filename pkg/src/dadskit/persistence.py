"""Versioned, checksummed checkpoint container.

Layout: ``MAGIC | u32 version | 32-byte sha256(payload) | payload`` where the
payload is an uncompressed ``.npz`` archive.  JSON metadata travels inside the
archive as a 0-d unicode array named ``__meta__``.
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

MAGIC = b"DADSKIT\0"
FORMAT_VERSION = 1
_HEADER = len(MAGIC) + 4 + 32


class CheckpointError(IOError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    def __init__(self, found: int, expected: int):
        super().__init__(f"checkpoint format version {found} is not supported (expected {expected})")
        self.found, self.expected = found, expected


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray], meta: dict) -> None:
    if "__meta__" in arrays:
        raise ValueError("'__meta__' is a reserved array name")
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    payload = buf.getvalue()
    header = MAGIC + struct.pack("<I", FORMAT_VERSION) + hashlib.sha256(payload).digest()
    atomic_write_bytes(path, header + payload)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER or not raw.startswith(MAGIC):
        raise ChecksumError(f"{path}: not a checkpoint or truncated header")
    (version,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise VersionMismatch(version, FORMAT_VERSION)
    digest, payload = raw[len(MAGIC) + 4 : _HEADER], raw[_HEADER:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated)")
    with np.load(io.BytesIO(payload), allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = json.loads(str(arrays.pop("__meta__")))
    return arrays, meta


def prefixed(prefix: str, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in arrays.items()}


def unprefixed(prefix: str, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    p = prefix + "/"
    return {k[len(p) :]: v for k, v in arrays.items() if k.startswith(p)}
