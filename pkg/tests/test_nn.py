import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sramfault.cli import fixture_dir
from sramfault.errors import ShapeMismatch
from sramfault.nn import (
    LabeledData,
    _argmax,
    Layer,
    Network,
    accuracy,
    infer,
    load_data,
    load_network,
    predict,
    save_data,
    save_network,
)


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow))
    for i in range(n):
        for o in range(oc):
            for y in range(oh):
                for z in range(ow):
                    acc = b[o]
                    for ci in range(c):
                        for dy in range(kh):
                            for dz in range(kw):
                                acc += xp[i, ci, y * stride + dy, z * stride + dz] * w[o, ci, dy, dz]
                    out[i, o, y, z] = acc
    return out


def naive_pool(x, k, s, op):
    n, c, h, w = x.shape
    oh, ow = (h - k) // s + 1, (w - k) // s + 1
    out = np.zeros((n, c, oh, ow))
    for i in range(n):
        for ci in range(c):
            for y in range(oh):
                for z in range(ow):
                    out[i, ci, y, z] = op(x[i, ci, y * s:y * s + k, z * s:z * s + k])
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
       st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**31))
def test_conv_matches_naive(n, c, oc, k, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c, 6, 5)).astype(np.float32)
    w = rng.normal(size=(oc, c, k, k)).astype(np.float32)
    b = rng.normal(size=oc).astype(np.float32)
    layer = Layer("conv2d", w, b, stride=stride, padding=pad)
    got = layer.forward(x)
    assert got.shape[1:] == layer.output_shape(x.shape[1:])
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad), rtol=1e-5, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_pooling_matches_naive(k, s, seed):
    x = np.random.default_rng(seed).normal(size=(2, 3, 7, 6)).astype(np.float32)
    np.testing.assert_allclose(Layer("maxpool", kernel=k, stride=s).forward(x), naive_pool(x, k, s, np.max))
    np.testing.assert_allclose(Layer("avgpool", kernel=k, stride=s).forward(x), naive_pool(x, k, s, np.mean),
                               rtol=1e-6, atol=1e-6)


def lenet_like(seed=0):
    rng = np.random.default_rng(seed)
    return Network((1, 12, 12), (
        Layer("conv2d", rng.normal(size=(4, 1, 3, 3)), rng.normal(size=4)),
        Layer("relu"),
        Layer("maxpool", kernel=2, stride=2),
        Layer("conv2d", rng.normal(size=(6, 4, 3, 3)), rng.normal(size=6), padding=1),
        Layer("avgpool", kernel=5, stride=5),
        Layer("dense", rng.normal(size=(10, 6)), rng.normal(size=10)),
        Layer("softmax"),
    ))


def test_zero_weights_softmax_picks_class_zero():
    net = Network((5,), (Layer("dense", np.zeros((4, 5)), np.zeros(4)), Layer("softmax")))
    assert infer(net, np.ones(5)) == 0


def test_identity_dense_is_argmax():
    net = Network((6,), (Layer("dense", np.eye(6)),))
    x = np.array([0.1, 3.0, -2.0, 3.5, 0.0, 1.0])
    assert infer(net, x) == 3


def test_ties_and_nan():
    net = Network((3,), (Layer("dense", np.eye(3)),))
    assert infer(net, np.array([2.0, 2.0, 1.0])) == 0
    # a NaN score never wins
    assert _argmax(np.array([[np.nan, 1.0, 5.0], [np.nan, np.nan, np.nan]])).tolist() == [2, 0]


def test_shape_checks():
    net = Network((6,), (Layer("dense", np.eye(6)),))
    with pytest.raises(ShapeMismatch):
        infer(net, np.zeros(5))
    with pytest.raises(ShapeMismatch):
        Network((5,), (Layer("dense", np.eye(6)),))
    with pytest.raises(ShapeMismatch):
        Network((2, 8, 8), (Layer("conv2d", np.zeros((1, 3, 3, 3))),))
    with pytest.raises(ValueError):
        Layer("dense", np.zeros((2, 2)), np.zeros(3))


def test_weight_order_round_trip():
    net = lenet_like()
    flat = net.weight_order()
    assert flat.size == 4 * 9 + 6 * 4 * 9 + 60
    assert flat[:36].tolist() == net.layers[0].weights.ravel().tolist()
    rebuilt = net.with_weights(flat)
    assert np.array_equal(rebuilt.weight_order(), flat)
    with_b = net.weight_order(include_biases=True)
    assert with_b.size == flat.size + 4 + 6 + 10
    assert np.array_equal(net.with_weights(with_b, include_biases=True).weight_order(True), with_b)
    with pytest.raises(ShapeMismatch):
        net.with_weights(flat[:-1])


def test_with_weights_changes_predictions():
    net = lenet_like()
    x = np.random.default_rng(1).normal(size=(20, 1, 12, 12))
    neg = net.with_weights(-net.weight_order())
    assert net.layers[0].weights[0, 0, 0, 0] == -neg.layers[0].weights[0, 0, 0, 0]
    assert predict(net, x).shape == (20,)


def test_batching_is_deterministic():
    net = lenet_like(3)
    x = np.random.default_rng(2).normal(size=(50, 1, 12, 12))
    a = predict(net, x, batch_size=7)
    b = predict(net, x, batch_size=1024)
    assert np.array_equal(a, b)
    assert [infer(net, s) for s in x[:5]] == a[:5].tolist()


def test_network_and_data_io(tmp_path):
    net = lenet_like(4)
    save_network(net, tmp_path)
    back = load_network(tmp_path / "network.json")
    assert back.input_shape == net.input_shape
    assert [l.kind for l in back.layers] == [l.kind for l in net.layers]
    assert np.array_equal(back.weight_order(True), net.weight_order(True))
    data = LabeledData(np.random.default_rng(0).normal(size=(9, 1, 12, 12)), np.arange(9) % 10)
    save_data(data, tmp_path)
    d2 = load_data(tmp_path)
    assert np.array_equal(d2.inputs, data.inputs) and np.array_equal(d2.labels, data.labels)
    assert accuracy(back, d2) == accuracy(net, data)


def test_fixture_accuracy_matches_recorded_oracle(fixture_net, fixture_data):
    meta = json.loads((fixture_dir() / "fixture_meta.json").read_text())
    assert len(fixture_data) == 200
    assert accuracy(fixture_net, fixture_data) == meta["oracle_accuracy"] == 0.95
    assert fixture_net.n_weights() == meta["weights"]
