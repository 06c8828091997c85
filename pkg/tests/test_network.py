import numpy as np
import pytest

import featadv as fa
from featadv import layers as L
from featadv import network as N
from featadv.exceptions import (FormatError, RangeError, ShapeError, SpecError,
                                VersionError)


def test_init_deterministic():
    spec = fa.refnet32()
    a = fa.init_network(spec, seed=5, scheme="gaussian")
    b = fa.init_network(spec, seed=5, scheme="gaussian")
    assert N.networks_equal(a, b)
    c = fa.init_network(spec, seed=6, scheme="gaussian")
    assert not N.networks_equal(a, c)


def test_orthonormal_rows_identity():
    spec = N.NetworkSpec((2, 2, 2), (("fc", L.fully_connected(4)),))
    net = fa.init_network(spec, seed=0, scheme="orthonormal")
    w = net.weight("fc")
    assert w.shape == (4, 8)
    assert np.allclose(w @ w.T, np.eye(4), atol=1e-10)


def test_orthonormal_invariant_every_layer(net7):
    for name, prim in net7.spec.layers:
        w = net7.weight(name)
        if w is None:
            continue
        m = w.reshape(w.shape[0], -1)
        if m.shape[0] <= m.shape[1]:
            assert np.allclose(m @ m.T, np.eye(m.shape[0]), atol=1e-10)
        else:
            assert np.allclose(m.T @ m, np.eye(m.shape[1]), atol=1e-10)


def test_gaussian_variance_scaling():
    spec = N.NetworkSpec((1000,), (("fc", L.fully_connected(1000)),))
    net = fa.init_network(spec, seed=3, scheme="gaussian")
    var = net.weight("fc").var()
    assert abs(var - 1e-3) < 1e-4


def test_unknown_scheme_rejected():
    with pytest.raises(SpecError):
        fa.init_network(fa.refnet32(), seed=0, scheme="xavier")


def test_spec_validation():
    with pytest.raises(SpecError):
        N.NetworkSpec((3, 32, 32), (("a", L.relu()), ("a", L.relu())))
    with pytest.raises(SpecError):
        N.NetworkSpec((3, 32, 32), ())
    with pytest.raises(SpecError):
        # head demands a matching last-layer width
        N.NetworkSpec((4,), (("fc", L.fully_connected(3)),), head=10)


def test_trace_zero_image_zero_after_relu(net7):
    trace = fa.forward_trace(net7, np.zeros((3, 32, 32)))
    assert np.all(trace.activations["relu1"] == 0.0)
    assert np.all(trace.activations["fc2"] == 0.0)


def test_trace_shapes_match_inference(net7):
    rng = np.random.default_rng(0)
    trace = fa.forward_trace(net7, rng.uniform(0, 255, (3, 32, 32)))
    shapes = net7.spec.layer_shapes()
    assert set(trace.activations) == set(shapes)
    for name, act in trace.activations.items():
        assert act.shape == shapes[name]
    assert shapes["conv1"] == (8, 32, 32)
    assert shapes["pool1"] == (8, 16, 16)
    assert shapes["conv2"] == (16, 16, 16)
    assert shapes["pool2"] == (16, 8, 8)
    assert shapes["fc1"] == (128,)
    assert shapes["fc2"] == (64,)


def test_trace_determinism(net7):
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 255, (3, 32, 32))
    t1 = fa.forward_trace(net7, img)
    t2 = fa.forward_trace(net7, img)
    for name in t1.activations:
        assert np.array_equal(t1.activations[name], t2.activations[name])


def test_image_validation(net7):
    with pytest.raises(ShapeError):
        fa.forward_trace(net7, np.zeros((3, 16, 16)))
    with pytest.raises(RangeError):
        fa.forward_trace(net7, np.full((3, 32, 32), 256.0))
    with pytest.raises(RangeError):
        fa.forward_trace(net7, np.full((3, 32, 32), -1.0))


def test_representation_matches_trace(net7):
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 255, (3, 32, 32))
    trace = fa.forward_trace(net7, img)
    for layer in ("conv1", "pool2", "fc2"):
        r = fa.representation(net7, img, layer)
        assert np.array_equal(r, trace.activations[layer].ravel())
        assert r.shape == (int(np.prod(net7.spec.layer_shapes()[layer])),)


def test_unknown_layer(net7):
    with pytest.raises(SpecError):
        fa.representation(net7, np.zeros((3, 32, 32)), "fc9")


def test_vjp_zero_cotangent_and_linearity(net7):
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 255, (3, 32, 32))
    zero = fa.representation_vjp(net7, img, "fc2", np.zeros(64))
    assert np.all(zero == 0.0)
    c1 = rng.standard_normal(64)
    c2 = rng.standard_normal(64)
    lhs = fa.representation_vjp(net7, img, "fc2", c1 + c2)
    rhs = (fa.representation_vjp(net7, img, "fc2", c1)
           + fa.representation_vjp(net7, img, "fc2", c2))
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_representation_vjp_finite_difference():
    spec = N.NetworkSpec((3, 8, 8), (
        ("conv", L.conv2d(4, 3, pad=1)),
        ("relu", L.relu()),
        ("norm", L.crossnorm()),
        ("pool", L.maxpool(2)),
        ("fc", L.fully_connected(10)),
    ))
    net = fa.init_network(spec, seed=1, scheme="gaussian")
    rng = np.random.default_rng(4)
    img = rng.uniform(10, 245, (3, 8, 8))
    cot = rng.standard_normal(10)
    g = fa.representation_vjp(net, img, "fc", cot)
    fd = L.finite_difference_gradient(
        lambda z: float(cot @ fa.representation(net, z, "fc")), img, step=1e-5)
    assert np.abs(g - fd).max() / max(1.0, np.abs(fd).max()) < 1e-4


def test_jvp_zero_tangent_and_adjointness(net7):
    rng = np.random.default_rng(5)
    img = rng.uniform(5, 250, (3, 32, 32))
    assert np.all(fa.representation_jvp(net7, img, "fc2", np.zeros((3, 32, 32))) == 0.0)
    for _ in range(20):
        cot = rng.standard_normal(64)
        tan = rng.standard_normal((3, 32, 32))
        lhs = float(np.sum(fa.representation_vjp(net7, img, "fc2", cot) * tan))
        rhs = float(cot @ fa.representation_jvp(net7, img, "fc2", tan))
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs), abs(rhs))


def test_jvp_central_difference(net7):
    rng = np.random.default_rng(6)
    img = rng.uniform(5, 250, (3, 32, 32))
    v = rng.standard_normal((3, 32, 32))
    eps = 1e-6
    fd = (fa.representation(net7, img + eps * v, "fc2", check_range=False)
          - fa.representation(net7, img - eps * v, "fc2", check_range=False)) / (2 * eps)
    got = fa.representation_jvp(net7, img, "fc2", v)
    assert np.abs(got - fd).max() / max(1.0, np.abs(fd).max()) < 1e-5


def test_classify_ties_and_invariance(net7_head):
    rng = np.random.default_rng(7)
    img = rng.uniform(0, 255, (3, 32, 32))
    label, scores = fa.classify(net7_head, img)
    assert label == int(np.argmax(scores))
    assert scores.shape == (10,)


def test_classify_requires_head(net7):
    with pytest.raises(SpecError):
        fa.classify(net7, np.zeros((3, 32, 32)))


def test_save_load_roundtrip(tmp_path, net7_head):
    path = tmp_path / "net.fadvnet"
    fa.save_network(net7_head, path)
    loaded = fa.load_network(path)
    assert N.networks_equal(net7_head, loaded)
    rng = np.random.default_rng(8)
    img = rng.uniform(0, 255, (3, 32, 32))
    assert np.array_equal(fa.representation(net7_head, img, "fc2"),
                          fa.representation(loaded, img, "fc2"))


def test_save_is_byte_deterministic(tmp_path, net7):
    p1 = tmp_path / "a"
    p2 = tmp_path / "b"
    fa.save_network(net7, p1)
    fa.save_network(net7, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_rejected(tmp_path, net7):
    path = tmp_path / "net.fadvnet"
    fa.save_network(net7, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        fa.load_network(path)


def test_corrupted_checksum_rejected(tmp_path, net7):
    path = tmp_path / "net.fadvnet"
    fa.save_network(net7, path)
    data = bytearray(path.read_bytes())
    data[100] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        fa.load_network(path)


def test_version_bump_named(tmp_path, net7):
    path = tmp_path / "net.fadvnet"
    fa.save_network(net7, path)
    data = bytearray(path.read_bytes())
    data[7] = ord("2")     # FADVNET1 -> FADVNET2
    path.write_bytes(bytes(data))
    with pytest.raises(VersionError) as err:
        fa.load_network(path)
    assert "FADVNET2" in str(err.value) and "FADVNET1" in str(err.value)
