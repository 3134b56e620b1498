"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import math

import numpy as np

from .layers import Layer
from .losses import LossKind, loss_and_grad, softmax_cross_entropy, ssim_index
from .rng import stream


def _forward(layers, x):
    h = x
    caches = []
    for layer in layers:
        h, cache = layer.forward(h)
        caches.append(cache)
    return h, caches


def _perturbed_value(layers, x, target, loss):
    h, _ = _forward(layers, x)
    if loss == "xent":
        return float(np.sum(softmax_cross_entropy(h, target)[0]))
    if loss.kind == "issim":
        # sum(1 - s) differs from -sum(s) by a constant that cancels in the
        # difference quotient; dropping it avoids losing digits to ulp(1).
        return -float(np.sum(ssim_index(target, h, loss)))
    return float(np.sum(loss_and_grad(target, h, loss)[0]))


def _objective(layers, x, target, loss):
    h, caches = _forward(layers, x)
    if loss == "xent":
        values, grad = softmax_cross_entropy(h, target)
    else:
        values, grad = loss_and_grad(target, h, loss)
    return float(np.sum(values)), caches, grad


def _backward(layers, caches, grad):
    param_grads = []
    for layer, cache in zip(reversed(layers), reversed(caches)):
        grad, pg = layer.backward(cache, grad)
        param_grads = list(pg) + param_grads
    return grad, param_grads


def finite_difference_check(layers: list[Layer], loss, point, epsilon: float = 1e-5, target=None,
                            max_checks: int = 25, seed: int = 0, wrt: str = "both", order: int = 2) -> float:
    """Max relative error between analytic and central-difference gradients.

    The objective is the summed per-sample loss of ``layers`` applied to
    ``point`` against ``target`` (zeros by default; integer labels for
    ``loss="xent"``). Up to ``max_checks`` seeded entries of every parameter
    tensor and of the input are perturbed. Relative error per entry is
    |a - n| / max(|a|, |n|, 1e-12).

    ``order=4`` uses the five-point central stencil, whose O(eps^4)
    truncation error allows a larger ``epsilon`` and so less rounding noise
    on entries with tiny gradients. Keep ``order=2`` near kinks (ReLU, max).
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    if wrt not in ("both", "params", "input"):
        raise ValueError(f"wrt must be 'both', 'params' or 'input', got {wrt!r}")
    x = np.array(point, dtype=np.float64)
    params = [p for layer in layers for p in layer.params]
    if any(p.dtype != np.float64 for p in params):
        raise ValueError("finite-difference checks need 64-bit parameters")
    if loss != "xent":
        loss = LossKind.coerce(loss)

    if target is None:
        if loss == "xent":
            raise ValueError("cross-entropy checks need integer labels as target")
        target = np.zeros_like(_forward(layers, x)[0])
    value, caches, grad = _objective(layers, x, target, loss)
    gx, gparams = _backward(layers, caches, grad)

    tensors = []
    if wrt in ("both", "params"):
        tensors += list(zip(params, gparams))
    if wrt in ("both", "input"):
        tensors.append((x, gx))
    rng = stream(seed, "gradcheck")
    worst = 0.0
    for arr, analytic in tensors:
        flat = arr.reshape(-1)
        agrad = np.asarray(analytic, dtype=np.float64).reshape(-1)
        picks = np.arange(flat.size) if flat.size <= max_checks else \
            rng.choice(flat.size, size=max_checks, replace=False)
        for i in picks:
            orig = flat[i]
            vals = {}
            for step in ((-2, -1, 1, 2) if order == 4 else (-1, 1)):
                flat[i] = orig + step * epsilon
                vals[step] = _perturbed_value(layers, x, target, loss)
            flat[i] = orig
            if not all(math.isfinite(v) for v in vals.values()):
                raise FloatingPointError(f"non-finite loss at perturbed point (entry {int(i)})")
            if order == 4:
                numeric = (vals[-2] - 8 * vals[-1] + 8 * vals[1] - vals[2]) / (12 * epsilon)
            else:
                numeric = (vals[1] - vals[-1]) / (2 * epsilon)
            a = float(agrad[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
