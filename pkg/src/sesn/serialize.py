"""Binary checkpoint container for named parameter arrays.

Layout (all integers little-endian):

    magic   4 bytes  b"SESN"
    version u32
    entries until end of file, each:
        name_len u32, name UTF-8 bytes,
        rank     u32, extents rank x u64,
        values   float64 little-endian, C order

The byte layout is normative: checkpoints are interchanged between tools by
this format alone.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from typing import Mapping

import numpy as np

from .errors import ParseError

MAGIC = b"SESN"
VERSION = 1


def dump_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        # asarray keeps rank 0 intact where ascontiguousarray would not
        a = np.asarray(arr, dtype="<f8", order="C")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", a.ndim)
        out += struct.pack(f"<{a.ndim}Q", *a.shape)
        out += a.tobytes()
    return bytes(out)


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_arrays(arrays))


def parse_arrays(blob: bytes, source: str = "<bytes>") -> "OrderedDict[str, np.ndarray]":
    if blob[:4] != MAGIC:
        raise ParseError(f"{source}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 8:
        raise ParseError(f"{source}: truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ParseError(f"{source}: unsupported format version {version}")
    pos = 8
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    while pos < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            if len(blob) - pos < name_len:
                raise struct.error("short name")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            if rank > 4:
                raise ParseError(f"{source}: entry {name!r} has rank {rank} > 4")
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            nbytes = count * 8
            if len(blob) - pos < nbytes:
                raise struct.error("short values")
            values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
            pos += nbytes
        except struct.error as exc:
            raise ParseError(f"{source}: truncated entry at byte {pos} ({exc})") from None
        arrays[name] = values.reshape(shape).copy()
    return arrays


def load_arrays(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_arrays(blob, source=str(path))
