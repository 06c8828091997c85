"""Seeded synthetic labeled corpus.

Untrained networks come with no dataset, but the rank statistics need class
structure.  Each class is a parametric image family (gratings at four
orientations, radial gradients, ramps, blob constellations, checkerboards,
smoothed noise) with small within-class jitter, so membership supplies labels
and within-class scatter stays below between-class scatter at the input layer.
Contrast is kept moderate so that pixel budgets in the tens are meaningful
relative to between-class image differences.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import io_formats as F
from .exceptions import FormatError

CORPUS_MAGIC = b"FCRP1"
_U32 = struct.Struct("<I")

DEFAULT_CLASSES = 10
DEFAULT_PER_CLASS = 40
DEFAULT_SHAPE = (3, 32, 32)


@dataclass(frozen=True)
class Corpus:
    images: tuple
    labels: tuple
    provenance: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.images)

    @property
    def shape(self):
        return self.images[0].shape

    def class_members(self, class_id):
        return [i for i, c in enumerate(self.labels) if c == class_id]


def _rng(seed, counter):
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(counter)])
    return np.random.Generator(np.random.Philox(key=key))


def _grid(h, w):
    y = np.linspace(-1.0, 1.0, h)
    x = np.linspace(-1.0, 1.0, w)
    return np.meshgrid(y, x, indexing="ij")


def _grating(h, w, angle, freq, phase):
    yy, xx = _grid(h, w)
    t = np.cos(angle) * xx + np.sin(angle) * yy
    return np.sin(2.0 * np.pi * freq * t + phase)


def _radial(h, w, cy, cx, scale, sign):
    yy, xx = _grid(h, w)
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return sign * (1.0 - np.clip(r / scale, 0.0, 1.0) * 2.0)


def _blobs(h, w, centers, width):
    yy, xx = _grid(h, w)
    out = np.zeros((h, w))
    for cy, cx in centers:
        out += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width ** 2))
    return np.clip(out, 0.0, 1.0) * 2.0 - 1.0


def _checker(h, w, block, phase):
    yy = (np.arange(h) // block + phase) % 2
    xx = np.arange(w) // block % 2
    return (yy[:, None] ^ xx[None, :]).astype(np.float64) * 2.0 - 1.0


def _smooth_noise(h, w, rng, cutoff):
    """Low-pass noise field via FFT masking, normalized to [-1, 1]."""
    spec = np.fft.rfft2(rng.normal(size=(h, w)))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    spec *= (np.sqrt(fy * fy + fx * fx) <= cutoff)
    field_ = np.fft.irfft2(spec, s=(h, w))
    top = np.abs(field_).max()
    return field_ / top if top > 0 else field_


def _class_pattern(class_id, h, w, class_rng, img_rng):
    """One [-1, 1] pattern; class fixes the family, img_rng jitters it."""
    j = img_rng.normal
    if class_id < 4:
        angle = class_id * np.pi / 4.0 + j() * 0.05
        return _grating(h, w, angle, 3.0 + j() * 0.15, j() * 0.6)
    if class_id == 4:
        return _radial(h, w, j() * 0.08, j() * 0.08, 1.1 + j() * 0.05, 1.0)
    if class_id == 5:
        return _radial(h, w, 0.5 + j() * 0.08, -0.5 + j() * 0.08,
                       1.3 + j() * 0.05, -1.0)
    if class_id == 6:
        yy, _ = _grid(h, w)
        return np.clip(yy * (1.0 + j() * 0.1) + j() * 0.1, -1.0, 1.0)
    if class_id == 7:
        _, xx = _grid(h, w)
        return np.clip(-xx * (1.0 + j() * 0.1) + j() * 0.1, -1.0, 1.0)
    if class_id == 8:
        base = class_rng.uniform(-0.7, 0.7, size=(5, 2))
        centers = base + img_rng.normal(scale=0.04, size=base.shape)
        return _blobs(h, w, centers, 0.22)
    base = _smooth_noise(h, w, class_rng, 0.12)
    return np.clip(base + img_rng.normal(scale=0.06, size=(h, w)), -1.0, 1.0)


def generate_corpus(seed, classes=DEFAULT_CLASSES, per_class=DEFAULT_PER_CLASS,
                    shape=DEFAULT_SHAPE):
    """Deterministic labeled corpus of structured images in [0, 255]."""
    if classes < 1 or per_class < 1:
        raise ValueError("classes and per_class must be positive")
    c, h, w = shape
    images = []
    labels = []
    for class_id in range(classes):
        for idx in range(per_class):
            class_rng = _rng(seed, 1_000_000 + class_id)
            img_rng = _rng(seed, class_id * 100_000 + idx + 1)
            pattern = _class_pattern(class_id, h, w, class_rng, img_rng)
            gains = 1.0 + img_rng.normal(scale=0.06, size=c)
            offsets = img_rng.normal(scale=4.0, size=c)
            img = np.empty((c, h, w))
            for ch in range(c):
                img[ch] = 127.5 + 60.0 * gains[ch] * pattern + offsets[ch]
            img += img_rng.normal(scale=8.0, size=(c, h, w))
            images.append(np.clip(img, 0.0, 255.0))
            labels.append(class_id)
    provenance = {"seed": int(seed), "classes": int(classes),
                  "per_class": int(per_class), "shape": tuple(shape)}
    return Corpus(images=tuple(images), labels=tuple(labels),
                  provenance=provenance)


def save_corpus(corpus, path):
    out = io.BytesIO()
    out.write(CORPUS_MAGIC)
    classes = len(set(corpus.labels))
    out.write(_U32.pack(classes))
    out.write(_U32.pack(len(corpus.images) // classes))
    shape = corpus.shape
    out.write(_U32.pack(len(shape)))
    for d in shape:
        out.write(_U32.pack(d))
    for label, img in zip(corpus.labels, corpus.images):
        out.write(_U32.pack(label))
        out.write(F.tensor_bytes(img))
    body = out.getvalue()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(_U32.pack(zlib.crc32(body)))


def load_corpus(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError("truncated FCRP1 data")
    body, stored = data[:-4], _U32.unpack(data[-4:])[0]
    if zlib.crc32(body) != stored:
        raise FormatError("FCRP1 checksum mismatch")
    r = F._Reader(body, "FCRP1")
    F._check_magic(r, CORPUS_MAGIC, "FCRP1")
    classes = r.u32()
    per_class = r.u32()
    ndim = r.u32()
    if ndim > 32:
        raise FormatError(f"implausible corpus rank {ndim}")
    shape = tuple(r.u32() for _ in range(ndim))
    images = []
    labels = []
    for _ in range(classes * per_class):
        labels.append(r.u32())
        img = F._read_tensor(r)
        if img.shape != shape:
            raise FormatError(f"corpus image shape {img.shape} != header {shape}")
        images.append(img)
    r.done()
    return Corpus(images=tuple(images), labels=tuple(labels),
                  provenance={"path": str(path)})
