"""Sequential network layers with explicit forward/backward passes.

Tensors are plain ``numpy.ndarray`` objects with a leading batch axis; image
tensors are NCHW. ``forward`` returns ``(output, cache)`` and ``backward``
consumes that cache, so a layer object holds no per-call state and can be
shared across threads for inference.
"""
from __future__ import annotations

import math

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


def _expect(name, expected, got):
    if tuple(expected) != tuple(got):
        raise ShapeError(f"{name}: expected input shape {tuple(expected)}, received {tuple(got)}")


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: list[np.ndarray] = []

    def output_shape(self, in_shape):
        """Per-sample output shape for per-sample input shape ``in_shape``."""
        return tuple(in_shape)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, grad):
        raise NotImplementedError

    def init_params(self, rng):
        pass

    def hyperparams(self) -> dict:
        return {}

    def _check_cache(self, cache):
        if cache is None:
            raise ValueError(f"{self.kind}: backward called without a forward cache")

    def _check_grad(self, grad, out_shape):
        if grad.shape != tuple(out_shape):
            raise ShapeError(f"{self.kind}: expected grad_output shape {tuple(out_shape)}, received {grad.shape}")

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.hyperparams().items())
        return f"{type(self).__name__}({args})"


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


class Conv2D(Layer):
    """2-D cross-correlation, stride 1.

    ``padding`` is ``"same"`` (k//2), ``"valid"`` (0), ``"full"`` (k-1) or an int.
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, padding="same", dtype=np.float32):
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.padding = padding
        k = self.kernel_size
        self.pad = {"same": k // 2, "valid": 0, "full": k - 1}.get(padding, padding)
        if not isinstance(self.pad, int) or self.pad < 0:
            raise ValueError(f"bad padding {padding!r}")
        self.params = [np.zeros((self.out_channels, self.in_channels, k, k), dtype=dtype),
                       np.zeros(self.out_channels, dtype=dtype)]

    def hyperparams(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "padding": self.padding}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv2d: expected {self.in_channels} input channels, received shape {tuple(in_shape)}")
        k, p = self.kernel_size, self.pad
        ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: kernel {k} does not fit input shape {tuple(in_shape)}")
        return (self.out_channels, ho, wo)

    def init_params(self, rng):
        k = self.kernel_size
        bound = glorot_bound(self.in_channels * k * k, self.out_channels * k * k)
        w, b = self.params
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = 0

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"conv2d: expected NCHW input, received shape {x.shape}")
        self.output_shape(x.shape[1:])
        w, b = self.params
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        out, ctx = kernels.conv2d_forward(xp, w, b)
        return out, (ctx, x.shape)

    def backward(self, cache, grad):
        self._check_cache(cache)
        ctx, in_shape = cache
        self._check_grad(grad, (in_shape[0],) + self.output_shape(in_shape[1:]))
        dxp, dw, db = kernels.conv2d_backward(ctx, self.params[0], grad)
        p = self.pad
        dx = dxp[:, :, p:p + in_shape[2], p:p + in_shape[3]] if p else dxp
        return np.ascontiguousarray(dx), [dw, db]


class MaxPool2(Layer):
    """Non-overlapping 2x2 max pooling; H and W must be even."""

    kind = "maxpool2"

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2: expected even spatial dims, received shape {tuple(in_shape)}")
        return (c, h // 2, w // 2)

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2: expected NCHW input, received shape {x.shape}")
        self.output_shape(x.shape[1:])
        out, arg = kernels.maxpool2(x)
        return out, (arg, x.shape)

    def backward(self, cache, grad):
        self._check_cache(cache)
        arg, in_shape = cache
        self._check_grad(grad, arg.shape)
        return kernels.maxpool2_back(grad, arg), []


class Upsample2(Layer):
    """Nearest-neighbour x2 upsampling."""

    kind = "upsample2"

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, 2 * h, 2 * w)

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"upsample2: expected NCHW input, received shape {x.shape}")
        return x.repeat(2, axis=2).repeat(2, axis=3), x.shape

    def backward(self, cache, grad):
        self._check_cache(cache)
        n, c, h, w = cache
        self._check_grad(grad, (n, c, 2 * h, 2 * w))
        return grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)), []


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_units, out_units, dtype=np.float32):
        super().__init__()
        self.in_units = int(in_units)
        self.out_units = int(out_units)
        self.params = [np.zeros((self.out_units, self.in_units), dtype=dtype),
                       np.zeros(self.out_units, dtype=dtype)]

    def hyperparams(self):
        return {"in_units": self.in_units, "out_units": self.out_units}

    def output_shape(self, in_shape):
        _expect("dense", (self.in_units,), in_shape)
        return (self.out_units,)

    def init_params(self, rng):
        bound = glorot_bound(self.in_units, self.out_units)
        w, b = self.params
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = 0

    def forward(self, x):
        if x.ndim != 2:
            raise ShapeError(f"dense: expected (batch, {self.in_units}) input, received shape {x.shape}")
        self.output_shape(x.shape[1:])
        w, b = self.params
        return x @ w.T + b, x

    def backward(self, cache, grad):
        self._check_cache(cache)
        x = cache
        self._check_grad(grad, (x.shape[0], self.out_units))
        w, _ = self.params
        return grad @ w, [grad.T @ x, grad.sum(axis=0)]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0), x

    def backward(self, cache, grad):
        self._check_cache(cache)
        self._check_grad(grad, cache.shape)
        return grad * (cache > 0), []


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        # split form avoids overflow in exp for large |x|
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, out

    def backward(self, cache, grad):
        self._check_cache(cache)
        self._check_grad(grad, cache.shape)
        return grad * cache * (1 - cache), []


class Reshape(Layer):
    """Reshape the per-sample part of a batch; ``(-1,)`` flattens."""

    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def hyperparams(self):
        return {"shape": list(self.shape)}

    def output_shape(self, in_shape):
        size = math.prod(in_shape)
        if self.shape == (-1,):
            return (size,)
        if math.prod(self.shape) != size:
            raise ShapeError(f"reshape: cannot reshape per-sample shape {tuple(in_shape)} to {self.shape}")
        return self.shape

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.output_shape(x.shape[1:])), x.shape

    def backward(self, cache, grad):
        self._check_cache(cache)
        return grad.reshape(cache), []


LAYER_KINDS = {cls.kind: cls for cls in (Conv2D, MaxPool2, Upsample2, Dense, ReLU, Sigmoid, Reshape)}


def _phase_axis(n, k, p):
    """Per-axis plan for a k-tap correlation over a x2 nearest upsampled axis of length n.

    Output r reads upsampled cells r-p .. r-p+k-1, i.e. source cells base(r) + t with
    t < m, where base(r) = floor((r - p) / 2). Taps landing on the same source cell
    are summed into the phase kernel ``taps[phase]`` (m x k).
    """
    out = 2 * n + 2 * p - k + 1
    m = k // 2 + 1
    bmin, bmax = -((p + 1) // 2), (out - 1 - p) // 2
    left, right = -bmin, max(0, bmax + m - n)
    taps = np.zeros((2, m, k))
    for phase in range(2):
        for j in range(k):
            taps[phase, (phase + j) // 2, j] = 1.0
    starts = []
    for phase in range(2):
        r0 = (p + phase) % 2
        starts.append((r0, (r0 - p - phase) // 2 - bmin) if r0 < out else None)
    return out, taps, (left, right), starts


def upsample_conv_forward(x, conv: Conv2D):
    """Inference-only fusion of ``Upsample2`` followed by ``conv``.

    Equal (up to float rounding) to ``conv.forward(Upsample2().forward(x))`` but
    runs four small phase convolutions on the low-resolution input instead of one
    k x k convolution on the upsampled one.
    """
    if x.ndim != 4:
        raise ShapeError(f"upsample2: expected NCHW input, received shape {x.shape}")
    n, c, h, wd = x.shape
    conv.output_shape((c, 2 * h, 2 * wd))
    w, b = conv.params
    k, p = conv.kernel_size, conv.pad
    ho, ty, py, sy = _phase_axis(h, k, p)
    wo, tx, px, sx = _phase_axis(wd, k, p)
    xp = np.pad(x, ((0, 0), (0, 0), py, px))
    phases = [(a, bb) for a in range(2) for bb in range(2) if sy[a] is not None and sx[bb] is not None]
    # all phase kernels stacked as extra output channels: one convolution pass
    wk = np.concatenate([np.einsum("ti,ocij,sj->octs", ty[a], w, tx[bb]) for a, bb in phases]).astype(w.dtype)
    z = kernels.conv2d_infer(xp, wk, np.tile(b, len(phases)))
    o = conv.out_channels
    out = np.empty((n, o, ho, wo), dtype=w.dtype)
    for q, (a, bb) in enumerate(phases):
        (r0, i0), (s0, j0) = sy[a], sx[bb]
        nr, ns = len(range(r0, ho, 2)), len(range(s0, wo, 2))
        out[:, :, r0::2, s0::2] = z[:, q * o:(q + 1) * o, i0:i0 + nr, j0:j0 + ns]
    return out


def layer_from_dict(d: dict, dtype=np.float32) -> Layer:
    cls = LAYER_KINDS[d["kind"]]
    kwargs = dict(d.get("hyperparams", {}))
    if "shape" in kwargs:
        kwargs["shape"] = tuple(kwargs["shape"])
    if cls in (Conv2D, Dense):
        kwargs["dtype"] = dtype
    return cls(**kwargs)


def layer_to_dict(layer: Layer) -> dict:
    return {"kind": layer.kind, "hyperparams": layer.hyperparams()}


def layer_forward(layer: Layer, x):
    return layer.forward(x)


def layer_backward(layer: Layer, cache, grad):
    return layer.backward(cache, grad)


def init_params(layer: Layer, rng):
    """Glorot-uniform weights, zero biases. In place; returns ``layer.params``."""
    layer.init_params(rng)
    return layer.params
