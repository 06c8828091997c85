"""Tensor and image file formats.

FTNS1 is a lossless checksummed container for float64 tensors; PPM (binary P6)
covers 3-channel viewing with half-away-from-zero rounding.  Both sides of
each format live here so round-trip tests have a single home.
"""

from __future__ import annotations

import io
import struct
import zlib

import numpy as np

from .exceptions import FormatError, VersionError

TENSOR_MAGIC = b"FTNS1"
_U32 = struct.Struct("<I")


def tensor_bytes(tensor):
    """Serialize a float64 tensor to an FTNS1 blob."""
    t = np.asarray(tensor, dtype=np.float64)
    out = io.BytesIO()
    out.write(TENSOR_MAGIC)
    out.write(_U32.pack(t.ndim))
    for d in t.shape:
        out.write(_U32.pack(d))
    out.write(t.astype("<f8").tobytes())
    body = out.getvalue()
    return body + _U32.pack(zlib.crc32(body))


class _Reader:
    """Bounded byte cursor that raises FormatError on truncation."""

    def __init__(self, data, label):
        self.data = data
        self.pos = 0
        self.label = label

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.label} data")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"trailing bytes after {self.label} payload")


def _check_magic(reader, magic, kind):
    got = reader.take(len(magic))
    if got == magic:
        return
    if got[:-1] == magic[:-1]:
        raise VersionError(f"unsupported {kind} version {got!r}")
    raise FormatError(f"not a {kind} stream (magic {got!r})")


def tensor_from_bytes(data):
    """Parse one FTNS1 blob; the whole buffer must be consumed."""
    r = _Reader(data, "FTNS1")
    t = _read_tensor(r)
    r.done()
    return t


def _read_tensor(r):
    start = r.pos
    _check_magic(r, TENSOR_MAGIC, "FTNS1")
    ndim = r.u32()
    if ndim > 32:
        raise FormatError(f"implausible tensor rank {ndim}")
    shape = tuple(r.u32() for _ in range(ndim))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = r.take(8 * count)
    body = r.data[start:r.pos]
    stored = r.u32()
    if zlib.crc32(body) != stored:
        raise FormatError("FTNS1 checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def save_tensor(tensor, path):
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(tensor))


def load_tensor(path):
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def save_ppm(image, path):
    """Write a (3, h, w) tensor in [0, 255] as binary P6.

    Values are rounded half away from zero, so 3.5 stores as 4.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"PPM needs a (3, h, w) tensor, got {img.shape}")
    if img.min() < 0.0 or img.max() > 255.0:
        raise FormatError("PPM values must lie in [0, 255]")
    bytes_ = np.floor(img + 0.5).astype(np.uint8)
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(bytes_.transpose(1, 2, 0).tobytes())


def load_ppm(path):
    """Read a binary P6 file back into a float64 (3, h, w) tensor."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise FormatError("not a binary P6 stream")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if pos == start:
            raise FormatError("malformed PPM header")
        fields.append(int(data[start:pos]))
    pos += 1    # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}")
    need = 3 * w * h
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise FormatError("truncated PPM pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64)
