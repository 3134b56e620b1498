from __future__ import annotations

import numpy as np
import pytest

from simex.gradcheck import finite_difference_check as fdc
from simex.layers import Conv2D, Dense, MaxPool2, ReLU, Reshape, Sigmoid, Upsample2
from simex.models import build_autoencoder, build_classifier
from simex.rng import stream

F64 = np.float64
TOL = 1e-4
POINTS = range(10)


def smooth_chain(name):
    """Layer chains ending in a 12x12 image so both losses apply."""
    if name == "conv-same":
        return [Reshape((1, 12, 12)), Conv2D(1, 3, 3, "same", F64), Conv2D(3, 1, 3, "same", F64),
                Reshape((12, 12))], (12, 12)
    if name == "conv-valid":
        return [Reshape((1, 14, 14)), Conv2D(1, 2, 3, "valid", F64), Conv2D(2, 1, 1, "valid", F64),
                Reshape((12, 12))], (14, 14)
    if name == "conv-full":
        return [Reshape((1, 10, 10)), Conv2D(1, 2, 3, "full", F64), Conv2D(2, 1, 1, "valid", F64),
                Reshape((12, 12))], (10, 10)
    if name == "upsample2":
        return [Reshape((1, 6, 6)), Upsample2(), Reshape((12, 12))], (6, 6)
    if name == "dense":
        return [Reshape((-1,)), Dense(144, 144, F64), Reshape((12, 12))], (12, 12)
    if name == "sigmoid":
        return [Sigmoid()], (12, 12)
    if name == "reshape":
        return [Reshape((-1,)), Reshape((12, 12))], (12, 12)
    raise KeyError(name)


def _init(layers, r):
    for layer in layers:
        layer.init_params(r)
        for b in layer.params[1:]:
            b[...] = r.normal(0, 0.1, b.shape)  # non-zero biases exercise the bias path


@pytest.mark.parametrize("loss", ["mse", "issim"])
@pytest.mark.parametrize("name", ["conv-same", "conv-valid", "conv-full", "upsample2", "dense", "sigmoid", "reshape"])
def test_smooth_layers(name, loss):
    # five-point stencil at eps=1e-3: truncation O(eps^4), little rounding noise
    layers, shape = smooth_chain(name)
    worst = 0.0
    for pt in POINTS:
        r = stream(pt, name, loss)
        _init(layers, r)
        x = r.uniform(0, 1, (2,) + shape)
        t = r.uniform(0, 1, (2, 12, 12))
        worst = max(worst, fdc(layers, loss, x, 1e-3, target=t, seed=pt, order=4))
    assert worst < TOL


def _relu_point(r, shape, margin=1e-3):
    """Inputs kept at least ``margin`` away from the kink at 0."""
    mag = r.uniform(margin, 1.0, shape)
    return np.where(r.random(shape) < 0.5, -mag, mag)


def _pool_point(r, shape, gap=1e-3):
    """Every 2x2 window has a unique max, ahead of the runner-up by at least ``gap``."""
    n, h, w = shape
    ranks = np.argsort(r.random((n, h // 2, w // 2, 4)), axis=-1).astype(F64)
    base = r.uniform(0.0, 0.9, (n, h // 2, w // 2, 1))
    vals = base + ranks * (gap * 10)
    return vals.reshape(n, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(n, h, w)


@pytest.mark.parametrize("loss", ["mse", "issim"])
def test_relu(loss):
    # eps=1e-5, order 2, points at least 100 eps from the kink
    worst = 0.0
    for pt in POINTS:
        r = stream(pt, "relu", loss)
        x = _relu_point(r, (2, 12, 12))
        t = r.uniform(0, 1, (2, 12, 12))
        worst = max(worst, fdc([ReLU()], loss, x, 1e-5, target=t, seed=pt))
    assert worst < TOL


@pytest.mark.parametrize("loss", ["mse", "issim"])
def test_maxpool(loss):
    layers = [Reshape((1, 24, 24)), MaxPool2(), Reshape((12, 12))]
    worst = 0.0
    for pt in POINTS:
        r = stream(pt, "pool", loss)
        x = _pool_point(r, (2, 24, 24))
        t = r.uniform(0, 1, (2, 12, 12))
        worst = max(worst, fdc(layers, loss, x, 1e-5, target=t, seed=pt))
    assert worst < TOL


def test_dense_relu_dense_parameters_away_from_kinks():
    # hidden pre-activations of the random point are checked to sit clear of 0
    layers = [Reshape((-1,)), Dense(36, 20, F64), ReLU(), Dense(20, 144, F64), Reshape((12, 12))]
    checked = 0
    for pt in range(40):
        r = stream(pt, "mlp")
        _init(layers, r)
        x = r.uniform(0, 1, (2, 6, 6))
        pre = x.reshape(2, -1) @ layers[1].params[0].T + layers[1].params[1]
        if np.abs(pre).min() < 1e-2:
            continue
        for loss in ("mse", "issim"):
            assert fdc(layers, loss, x, 1e-5, target=r.uniform(0, 1, (2, 12, 12)), seed=pt, wrt="params") < TOL
        checked += 1
        if checked == 10:
            break
    assert checked == 10


def test_classifier_head_cross_entropy():
    layers = [Dense(30, 12, F64), Sigmoid(), Dense(12, 5, F64)]
    for pt in POINTS:
        r = stream(pt, "xent")
        _init(layers, r)
        x = r.normal(0, 1, (4, 30))
        y = r.integers(0, 5, 4)
        assert fdc(layers, "xent", x, 1e-3, target=y, seed=pt, order=4) < TOL


# ---------------------------------------------------------- documented examples

def test_single_dense_mse_eps_1e5():
    layers = [Dense(6, 4, F64)]
    _init(layers, stream(0, "d"))
    x = stream(1, "d").random((3, 6))
    t = stream(2, "d").random((3, 4))
    assert fdc(layers, "mse", x, 1e-5, target=t) < TOL


def test_param_free_relu_wrt_input():
    x = _relu_point(stream(0, "r"), (3, 8))
    assert fdc([ReLU()], "mse", x, 1e-5, target=np.ones((3, 8)) * 0.3, wrt="input") < TOL


def test_zero_output_zero_target_is_exact():
    d = Dense(5, 3, F64)  # zero weights and bias: output 0
    assert fdc([d], "mse", np.ones((2, 5)), 1e-5) == 0.0


def test_contract_errors():
    d32 = Dense(3, 2)
    with pytest.raises(ValueError, match="64-bit"):
        fdc([d32], "mse", np.ones((1, 3)), 1e-5)
    with pytest.raises(ValueError, match="epsilon"):
        fdc([Dense(3, 2, F64)], "mse", np.ones((1, 3)), 1e-2)
    with pytest.raises(FloatingPointError), np.errstate(over="ignore", invalid="ignore"):
        d = Dense(1, 1, F64)
        d.params[0][...] = 1e308
        fdc([d], "mse", np.full((1, 1), 10.0), 1e-5)


@pytest.mark.slow
def test_full_autoencoder_and_classifier_spot_check():
    ae = build_autoencoder(seed=0, precision="float64")
    x = stream(0, "ae").random((2, 28, 28))
    assert fdc(ae.layers, "mse", x, 1e-5, target=x, max_checks=6, wrt="params") < TOL
    clf = build_classifier(num_classes=9, seed=0, precision="float64")
    y = np.array([1, 7])
    assert fdc(clf.layers, "xent", x, 1e-5, target=y, max_checks=6, wrt="params") < TOL
