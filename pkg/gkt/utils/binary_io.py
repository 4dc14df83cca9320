"""Length-prefixed binary records shared by dataset and checkpoint files.

Layout: magic (4 bytes) | version (u32) | header length (u64) | UTF-8 JSON
header | blobs. Each blob is name length (u16) | name | ndim (u8) |
shape (u64 each) | little-endian float64 values.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, Iterator, Tuple, Union

import numpy as np

from gkt.errors import FormatError

logger = logging.getLogger(__name__)

_LE_F64 = np.dtype("<f8")


def write_header(fh: BinaryIO, magic: bytes, version: int, header: Dict[str, Any]) -> None:
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(magic)
    fh.write(struct.pack("<I", version))
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _read_exact(fh: BinaryIO, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"unexpected end of file (wanted {count} bytes, got {len(data)})")
    return data


def read_header(fh: BinaryIO, magic: bytes, max_version: int) -> Tuple[int, Dict[str, Any]]:
    found = fh.read(len(magic))
    if found != magic:
        raise FormatError(f"bad magic {found!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if not 1 <= version <= max_version:
        raise FormatError(f"unsupported format version {version}")
    (length,) = struct.unpack("<Q", _read_exact(fh, 8))
    try:
        header = json.loads(_read_exact(fh, length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object")
    return version, header


def write_blob(fh: BinaryIO, name: str, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=_LE_F64)
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_blob(fh: BinaryIO) -> Tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype=_LE_F64).astype(np.float64)
    return name, data.reshape(shape)


def iter_blobs(fh: BinaryIO) -> Iterator[Tuple[str, np.ndarray]]:
    while True:
        peek = fh.read(1)
        if not peek:
            return
        fh.seek(-1, 1)
        yield read_blob(fh)


def git_blob_hash(path: Union[str, Path]) -> str:
    """SHA-1 of ``b"blob <size>\\0" + content``, as ``git hash-object`` computes it."""
    content = Path(path).read_bytes()
    digest = hashlib.sha1()
    digest.update(b"blob %d\0" % len(content))
    digest.update(content)
    return digest.hexdigest()


__all__ = ["write_header", "read_header", "write_blob", "read_blob", "iter_blobs", "git_blob_hash"]
