"""NHGLN1 checkpoint files.

Layout: the 6-byte magic ``NHGLN1``, a little-endian uint64 manifest length,
the UTF-8 manifest (one ``name<TAB>d0,d1,...<TAB>offset`` line per entry,
offsets relative to the payload start), then the payload of little-endian
float64 values in manifest order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"NHGLN1"
_LEN = struct.Struct("<Q")


def encode_checkpoint(entries: dict) -> bytes:
    lines, chunks, offset = [], [], 0
    for name, arr in entries.items():
        if any(c in name for c in "\t\n"):
            raise ValueError(f"entry name {name!r} contains a tab or newline")
        a = np.array(arr, dtype="<f8", order="C")  # keeps 0-d shapes
        shape = ",".join(str(d) for d in a.shape)
        lines.append(f"{name}\t{shape}\t{offset}")
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = ("\n".join(lines)).encode("utf-8")
    return MAGIC + _LEN.pack(len(manifest)) + manifest + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> dict:
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("not an NHGLN1 checkpoint: bad magic", 0)
    pos = len(MAGIC)
    if len(blob) < pos + _LEN.size:
        raise FormatError("truncated before manifest length", len(blob))
    (mlen,) = _LEN.unpack_from(blob, pos)
    pos += _LEN.size
    if len(blob) < pos + mlen:
        raise FormatError(f"manifest declares {mlen} bytes but file ends early", len(blob))
    try:
        manifest = blob[pos : pos + mlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("manifest is not UTF-8", pos + exc.start) from None
    base = pos + mlen
    out = {}
    expected = 0
    for line in manifest.split("\n") if manifest else []:
        try:
            name, shape_s, off_s = line.split("\t")
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            offset = int(off_s)
        except ValueError:
            raise FormatError(f"bad manifest line {line!r}", pos) from None
        if offset != expected:
            raise FormatError(f"entry {name!r} offset {offset} breaks manifest order", base + offset)
        count = int(np.prod(shape)) if shape else 1
        start, stop = base + offset, base + offset + 8 * count
        if stop > len(blob):
            raise FormatError(f"payload for {name!r} is truncated", len(blob))
        out[name] = np.frombuffer(blob[start:stop], dtype="<f8").reshape(shape).astype(np.float64)
        expected = offset + 8 * count
    if base + expected != len(blob):
        raise FormatError(f"{len(blob) - base - expected} trailing bytes after payload", base + expected)
    return out


def save_checkpoint(path, entries: dict) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(entries))
    tmp.replace(path)


def load_checkpoint(path) -> dict:
    return decode_checkpoint(Path(path).read_bytes())
