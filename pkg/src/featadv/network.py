"""Layer stacks: construction, seeded initialization, tracing, and persistence.

A ``Network`` is immutable after construction.  Representation extraction and
its VJP/JVP chain the per-layer primitives; the softmax head, when present,
reads the unnormalized class scores off the last layer.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .exceptions import (FormatError, RangeError, ShapeError, SpecError,
                         VersionError)

MAGIC = b"FADVNET1"
RNG_SCHEME = "philox4x64"
PIXEL_MAX = 255.0

INIT_GAUSSIAN = "gaussian"
INIT_ORTHONORMAL = "orthonormal"


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple          # ordered tuple of (name, LayerPrimitive)
    head: int | None = None   # class count; requires last output == (head,)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [n for n, _ in self.layers]
        if len(set(names)) != len(names):
            raise SpecError("layer names must be unique")
        if not self.layers:
            raise SpecError("spec needs at least one layer")
        shapes = self.layer_shapes()
        if self.head is not None:
            last = shapes[self.layers[-1][0]]
            if last != (self.head,):
                raise SpecError(
                    f"head with {self.head} classes requires last layer output "
                    f"({self.head},), got {last}")

    def layer_shapes(self):
        """Inferred output shape of every layer, keyed by name."""
        out = {}
        shape = self.input_shape
        for name, prim in self.layers:
            try:
                shape = L.output_shape(prim, shape)
            except ShapeError as e:
                raise SpecError(f"layer {name!r}: {e}") from e
            out[name] = shape
        return out

    def layer(self, name):
        for n, prim in self.layers:
            if n == name:
                return prim
        raise SpecError(f"unknown layer {name!r}")

    def layer_names(self):
        return [n for n, _ in self.layers]


@dataclass(frozen=True)
class Network:
    spec: NetworkSpec
    weights: dict = field(compare=False)   # layer name -> ndarray
    init_record: tuple = ()                # (seed, scheme)

    def weight(self, name):
        return self.weights.get(name)


@dataclass(frozen=True)
class ActivationTrace:
    activations: dict      # layer name -> ndarray
    scores: np.ndarray | None = None


def refnet32(with_head=False):
    """Default desk-scale spec: two conv/pool/norm stages and two FC layers."""
    stack = [
        ("conv1", L.conv2d(8, 5, stride=1, pad=2)),
        ("relu1", L.relu()),
        ("pool1", L.maxpool(2)),
        ("norm1", L.crossnorm()),
        ("conv2", L.conv2d(16, 5, stride=1, pad=2)),
        ("relu2", L.relu()),
        ("pool2", L.maxpool(2)),
        ("fc1", L.fully_connected(128)),
        ("relu3", L.relu()),
        ("fc2", L.fully_connected(64)),
        ("relu4", L.relu()),
    ]
    head = None
    if with_head:
        stack.append(("fc3", L.fully_connected(10)))
        head = 10
    return NetworkSpec(input_shape=(3, 32, 32), layers=tuple(stack), head=head)


def _layer_rng(seed, index):
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(index)])
    return np.random.Generator(np.random.Philox(key=key))


def init_network(spec, seed, scheme):
    """Seeded weight initialization.

    gaussian: i.i.d. normals scaled by 1/sqrt(fan-in).
    orthonormal: SVD-orthogonalized gaussian draw (singular values replaced
    by ones), applied to the weight reshaped as (output-units x fan-in).
    """
    if scheme not in (INIT_GAUSSIAN, INIT_ORTHONORMAL):
        raise SpecError(f"unknown init scheme {scheme!r}")
    shapes = {}
    shape = spec.input_shape
    weights = {}
    for i, (name, prim) in enumerate(spec.layers):
        ws = L.weight_shape(prim, shape)
        if ws is not None:
            rng = _layer_rng(seed, i)
            fan_in = int(np.prod(ws[1:]))
            g = rng.standard_normal(ws)
            if scheme == INIT_GAUSSIAN:
                w = g / np.sqrt(fan_in)
            else:
                m = g.reshape(ws[0], fan_in)
                u, _, vt = np.linalg.svd(m, full_matrices=False)
                w = (u @ vt).reshape(ws)
            weights[name] = w
        shape = L.output_shape(prim, shape)
        shapes[name] = shape
    return Network(spec=spec, weights=weights, init_record=(int(seed), scheme))


def _check_image(net, image, check_range=True):
    image = np.asarray(image, dtype=np.float64)
    if image.shape != net.spec.input_shape:
        raise ShapeError(
            f"image shape {image.shape}, spec input {net.spec.input_shape}")
    if check_range and (image.min() < 0.0 or image.max() > PIXEL_MAX):
        raise RangeError(
            f"pixel values outside [0, {PIXEL_MAX:g}]: "
            f"min {image.min():g}, max {image.max():g}")
    return image


def _forward_collect(net, image, upto=None, check_range=True):
    """Forward pass collecting each layer's input; stops after ``upto``.

    Returns (inputs, activations) where inputs[i] is the input fed to layer i.
    """
    x = _check_image(net, image, check_range=check_range)
    inputs = []
    acts = {}
    for name, prim in net.spec.layers:
        inputs.append(x)
        x = L.forward(prim, x, net.weight(name))
        acts[name] = x
        if name == upto:
            break
    else:
        if upto is not None:
            raise SpecError(f"unknown layer {upto!r}")
    return inputs, acts


def forward_trace(net, image):
    """Complete per-layer activation trace (plus head scores if configured)."""
    _, acts = _forward_collect(net, image)
    scores = None
    if net.spec.head is not None:
        scores = acts[net.spec.layers[-1][0]]
    return ActivationTrace(activations=acts, scores=scores)


def representation(net, image, layer, check_range=True):
    """Flattened activation of the named layer."""
    _, acts = _forward_collect(net, image, upto=layer, check_range=check_range)
    return acts[layer].ravel()


def representation_vjp(net, image, layer, cotangent, check_range=True):
    """Gradient of <cotangent, representation(net, image, layer)> w.r.t. image."""
    inputs, acts = _forward_collect(net, image, upto=layer, check_range=check_range)
    cot = np.asarray(cotangent, dtype=np.float64)
    out = acts[layer]
    if cot.size != out.size:
        raise ShapeError(f"cotangent length {cot.size}, representation {out.size}")
    g = cot.reshape(out.shape)
    k = net.spec.layer_names().index(layer)
    for i in range(k, -1, -1):
        name, prim = net.spec.layers[i]
        g = L.vjp(prim, inputs[i], net.weight(name), g)
    return g


def representation_jvp(net, image, layer, tangent, check_range=True):
    """Directional derivative of the layer representation along an image tangent."""
    inputs, acts = _forward_collect(net, image, upto=layer, check_range=check_range)
    tan = np.asarray(tangent, dtype=np.float64)
    if tan.shape != inputs[0].shape:
        raise ShapeError(f"tangent shape {tan.shape}, image {inputs[0].shape}")
    t = tan
    k = net.spec.layer_names().index(layer)
    for i in range(k + 1):
        name, prim = net.spec.layers[i]
        t = L.jvp(prim, inputs[i], net.weight(name), t)
    return t.ravel()


def feature_distance_grad(net, image, layer, target_rep, check_range=True):
    """(||phi(image) - target||^2, its image gradient) in one forward/backward."""
    inputs, acts = _forward_collect(net, image, upto=layer, check_range=check_range)
    out = acts[layer]
    residual = out.ravel() - target_rep
    f = float(residual @ residual)
    g = (2.0 * residual).reshape(out.shape)
    k = net.spec.layer_names().index(layer)
    for i in range(k, -1, -1):
        name, prim = net.spec.layers[i]
        g = L.vjp(prim, inputs[i], net.weight(name), g)
    return f, g


def linear_maps(net, image, layer, check_range=True):
    """(jvp_fn, vjp_fn) for the layer representation, linearized at ``image``.

    The forward pass at the linearization point is computed once and shared,
    so repeated applications (as in the linearized-objective optimizer) cost
    one chained pass each.
    """
    inputs, acts = _forward_collect(net, image, upto=layer, check_range=check_range)
    k = net.spec.layer_names().index(layer)
    out_shape = acts[layer].shape

    def jvp_fn(tangent):
        t = np.asarray(tangent, dtype=np.float64)
        for i in range(k + 1):
            name, prim = net.spec.layers[i]
            t = L.jvp(prim, inputs[i], net.weight(name), t)
        return t.ravel()

    def vjp_fn(cotangent):
        g = np.asarray(cotangent, dtype=np.float64).reshape(out_shape)
        for i in range(k, -1, -1):
            name, prim = net.spec.layers[i]
            g = L.vjp(prim, inputs[i], net.weight(name), g)
        return g

    return jvp_fn, vjp_fn


def classify(net, image):
    """(argmax label, raw scores); ties broken by lowest index."""
    if net.spec.head is None:
        raise SpecError("network has no classification head")
    trace = forward_trace(net, image)
    scores = trace.scores
    return int(np.argmax(scores)), scores


def networks_equal(a, b):
    """Bit-exact equality of spec, weights, and init record."""
    if a.spec != b.spec or a.init_record != b.init_record:
        return False
    if set(a.weights) != set(b.weights):
        return False
    return all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)


# ---------------------------------------------------------------------------
# FADVNET persistence
# ---------------------------------------------------------------------------

def _canonical_spec_text(net):
    lines = ["input " + " ".join(str(d) for d in net.spec.input_shape)]
    seed, scheme = net.init_record
    lines.append(f"seed {seed}")
    lines.append(f"scheme {scheme}")
    lines.append(f"rng {RNG_SCHEME}")
    if net.spec.head is not None:
        lines.append(f"head {net.spec.head}")
    for name, prim in net.spec.layers:
        parts = [f"layer {name} {prim.kind}"]
        for key, val in prim.hyperparams().items():
            parts.append(f"{key}={val!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def save_network(net, path):
    buf = io.BytesIO()
    buf.write(MAGIC)
    text = _canonical_spec_text(net).encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for name, _prim in net.spec.layers:
        w = net.weight(name)
        if w is None:
            continue
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", w.ndim))
        buf.write(struct.pack(f"<{w.ndim}I", *w.shape))
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def _parse_hyper(value):
    try:
        return int(value)
    except ValueError:
        return float(value)


_LAYER_FACTORIES = {
    "conv2d": lambda hp: L.conv2d(hp["out_channels"], hp["kernel_size"],
                                  hp.get("stride", 1), hp.get("pad", 0)),
    "relu": lambda hp: L.relu(),
    "maxpool": lambda hp: L.maxpool(hp["pool"]),
    "crossnorm": lambda hp: L.crossnorm(hp.get("k_n", 2.0), hp.get("alpha_n", 1e-4),
                                        hp.get("beta_n", 0.75), hp.get("window", 5)),
    "fullyconnected": lambda hp: L.fully_connected(hp["width"]),
}


def _parse_spec_text(text):
    input_shape = None
    seed = None
    scheme = None
    head = None
    stack = []
    for line in text.splitlines():
        if not line.strip():
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "input":
            input_shape = tuple(int(t) for t in tokens[1:])
        elif tag == "seed":
            seed = int(tokens[1])
        elif tag == "scheme":
            scheme = tokens[1]
        elif tag == "rng":
            if tokens[1] != RNG_SCHEME:
                raise VersionError(
                    f"unsupported rng scheme {tokens[1]!r}, this build uses {RNG_SCHEME!r}")
        elif tag == "head":
            head = int(tokens[1])
        elif tag == "layer":
            name, kind = tokens[1], tokens[2]
            hp = {}
            for item in tokens[3:]:
                key, _, val = item.partition("=")
                hp[key] = _parse_hyper(val)
            if kind not in _LAYER_FACTORIES:
                raise FormatError(f"unknown layer kind {kind!r}")
            stack.append((name, _LAYER_FACTORIES[kind](hp)))
        else:
            raise FormatError(f"unknown spec line {line!r}")
    if input_shape is None or seed is None or scheme is None:
        raise FormatError("spec text missing input/seed/scheme")
    return NetworkSpec(input_shape=input_shape, layers=tuple(stack), head=head), seed, scheme


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated network file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_network(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4:
        raise FormatError("truncated network file")
    magic = raw[:len(MAGIC)]
    if magic != MAGIC:
        if magic[:7] == MAGIC[:7]:
            raise VersionError(
                f"unsupported format version {magic.decode('latin1')!r}, "
                f"this build reads {MAGIC.decode('latin1')!r}")
        raise FormatError("not a FADVNET file")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError("network file checksum mismatch")
    rd = _Reader(payload)
    rd.take(len(MAGIC))
    text = rd.take(rd.u32()).decode("utf-8")
    spec, seed, scheme = _parse_spec_text(text)
    weights = {}
    shape = spec.input_shape
    for name, prim in spec.layers:
        ws = L.weight_shape(prim, shape)
        shape = L.output_shape(prim, shape)
        if ws is None:
            continue
        nlen = rd.u32()
        got = rd.take(nlen).decode("utf-8")
        if got != name:
            raise FormatError(f"weight blob for {got!r}, expected {name!r}")
        ndim = rd.u32()
        dims = struct.unpack(f"<{ndim}I", rd.take(4 * ndim))
        if dims != ws:
            raise FormatError(f"weight dims {dims} for {name!r}, expected {ws}")
        count = int(np.prod(dims))
        w = np.frombuffer(rd.take(8 * count), dtype="<f8").reshape(dims)
        weights[name] = np.ascontiguousarray(w)
    if rd.pos != len(payload):
        raise FormatError("trailing bytes in network file")
    return Network(spec=spec, weights=weights, init_record=(seed, scheme))
