"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"BLAB1"
    u32 section count
    per section:
        4-byte ASCII tag, u64 body length, body

An array section body is a shape table followed by the float64 payload::

    u32 entry count
    per entry: u16 name length, utf-8 name, u8 ndim, u32 dims[ndim]
    concatenated little-endian float64 data in table order

The ``CFG0`` section body is utf-8 JSON.  Unknown tags are skipped on read.
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile

import numpy as np

from .errors import ParseError

MAGIC = b"BLAB1"
NET_TAG = "NET0"
IDM_TAG = "IDM0"
TWIN_TAG = "TWN0"
CFG_TAG = "CFG0"


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _array_body(arrays):
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in arrays.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def encode(sections, meta=None):
    """Serialize ``{tag: {name: array}}`` plus optional JSON metadata."""
    parts = []
    if meta is not None:
        parts.append((CFG_TAG, json.dumps(meta, sort_keys=True).encode("utf-8")))
    for tag, arrays in sections.items():
        parts.append((tag, _array_body(arrays)))
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", len(parts)))
    for tag, body in parts:
        t = tag.encode("ascii")
        if len(t) != 4:
            raise ValueError(f"section tag must be 4 bytes: {tag!r}")
        out.write(t)
        out.write(struct.pack("<Q", len(body)))
        out.write(body)
    return out.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _parse_arrays(body):
    r = _Reader(body)
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        table.append((name, shape))
    arrays = {}
    for name, shape in table:
        size = int(np.prod(shape)) if shape else 1
        raw = r.take(8 * size)
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(body):
        raise ParseError("trailing bytes in array section")
    return arrays


def decode(data):
    """Inverse of :func:`encode`: returns ``(sections, meta)``."""
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise ParseError("not a BLAB1 checkpoint")
    (count,) = r.unpack("<I")
    sections = {}
    meta = None
    for _ in range(count):
        tag = r.take(4).decode("ascii")
        (length,) = r.unpack("<Q")
        body = r.take(length)
        if tag == CFG_TAG:
            meta = json.loads(body.decode("utf-8"))
        elif tag in (NET_TAG, IDM_TAG, TWIN_TAG):
            sections[tag] = _parse_arrays(body)
    return sections, meta


def save(path, sections, meta=None):
    atomic_write_bytes(path, encode(sections, meta))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
