"""Versioned binary container shared by model (WNAM) and sampler (WNGS) files.

Layout::

    magic       4 bytes
    version     u16 little-endian
    header_len  u32 little-endian
    header      UTF-8 JSON (architecture id, array names, shapes)
    payload     concatenated little-endian float32 arrays, in header order
    crc32       u32 little-endian over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

VERSION = 1


def pack(magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    names = list(arrays)
    header = dict(meta)
    header["arrays"] = [[n, list(np.shape(arrays[n]))] for n in names]
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes() for n in names)
    body = magic + struct.pack("<HI", VERSION, len(hbytes)) + hbytes + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def unpack(magic: bytes, raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(raw) < 14:
        raise FormatError("file too short for a container header")
    if raw[:4] != magic:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {magic!r}")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc:
        raise FormatError("CRC32 mismatch: file is corrupt")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    header = json.loads(raw[10:10 + hlen].decode())
    offset = 10 + hlen
    arrays = {}
    for name, shape in header.pop("arrays"):
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(raw) - 4:
            raise FormatError(f"payload truncated at array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw) - 4:
        raise FormatError("unexpected bytes after payload")
    return header, arrays


def write(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(pack(magic, meta, arrays))


def read(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise IoError(f"no such file: {path}") from exc
    return unpack(magic, raw)


def crc_ok(path) -> bool:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        return False
    (crc,) = struct.unpack("<I", raw[-4:])
    return zlib.crc32(raw[:-4]) & 0xFFFFFFFF == crc
