"""Reconstruction differences: per-sample MSE and iSSIM (1 - SSIM).

All functions take images whose last two axes are (H, W); any leading axes are
batch axes and each image yields one value. Values and gradients are computed
in float64; gradients are cast back to the dtype of ``xhat``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

LOSS_KINDS = ("mse", "issim")


@dataclass(frozen=True)
class LossKind:
    kind: str = "mse"
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; choose from {LOSS_KINDS}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"SSIM window must be odd and positive, got {self.window}")
        if self.sigma <= 0 or self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0:
            raise ValueError("SSIM sigma, K1, K2 and dynamic range must be positive")

    @classmethod
    def coerce(cls, kind: "str | LossKind") -> "LossKind":
        return kind if isinstance(kind, LossKind) else cls(kind)

    def __str__(self):
        return self.kind


MSE = LossKind("mse")
ISSIM = LossKind("issim")


def _check_pair(x, xhat):
    x = np.asarray(x)
    xhat = np.asarray(xhat)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs xhat {xhat.shape}")
    return x, xhat


def mse(x, xhat):
    """Mean over pixels of (x - xhat)^2; one value per image."""
    x, xhat = _check_pair(x, xhat)
    d = xhat.astype(np.float64) - x.astype(np.float64)
    if d.ndim < 2:
        return np.mean(d * d)
    return np.mean(d * d, axis=(-2, -1))


# ------------------------------------------------------------------- SSIM

@lru_cache(maxsize=16)
def gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _band(n, g):
    """(n - k + 1) x n matrix whose rows are the window ``g`` at each valid offset."""
    k = g.size
    m = np.zeros((n - k + 1, n))
    for i in range(n - k + 1):
        m[i, i:i + k] = g
    return m


def _filter_valid(img, g):
    # separable valid filtering as two batched matrix products
    return _band(img.shape[-2], g) @ img @ _band(img.shape[-1], g).T


def _filter_adjoint(m, g):
    """Transpose of ``_filter_valid``: scatter a map back onto the image grid."""
    k = g.size
    return _band(m.shape[-2] + k - 1, g).T @ m @ _band(m.shape[-1] + k - 1, g)


def _ssim_terms(x, y, p: LossKind):
    h, w = x.shape[-2:]
    if p.window > min(h, w):
        raise ValueError(f"SSIM window {p.window} larger than image {h}x{w}")
    g = gaussian_window(p.window, p.sigma)
    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    a1 = 2 * mx * my + c1
    a2 = 2 * sxy + c2
    b1 = mx * mx + my * my + c1
    b2 = sxx + syy + c2
    s = (a1 * a2) / (b1 * b2)
    return g, mx, my, a1, a2, b1, b2, s


def ssim_map(x, xhat, params: LossKind = ISSIM):
    x, xhat = _check_pair(x, xhat)
    return _ssim_terms(x.astype(np.float64), xhat.astype(np.float64), params)[-1]


def ssim_index(x, xhat, params: LossKind = ISSIM):
    """Mean SSIM over valid Gaussian-window positions; one value per image."""
    m = ssim_map(x, xhat, params)
    return m.mean(axis=(-2, -1))


def issim(x, xhat, params: LossKind = ISSIM):
    return 1.0 - ssim_index(x, xhat, params)


def _issim_and_grad(x, y, p):
    g, mx, my, a1, a2, b1, b2, s = _ssim_terms(x, y, p)
    n_pos = s.shape[-1] * s.shape[-2]
    d_my = s * (2 * mx / a1 - 2 * mx / a2 - 2 * my / b1 + 2 * my / b2)
    d_mxy = s * (2 / a2)
    d_myy = -s / b2
    grad_s = _filter_adjoint(d_my, g) + x * _filter_adjoint(d_mxy, g) + 2 * y * _filter_adjoint(d_myy, g)
    return 1.0 - s.mean(axis=(-2, -1)), -grad_s / n_pos


def loss_and_grad(x, xhat, kind: "str | LossKind" = MSE):
    """Per-image loss values and d(value_i)/d(xhat_i), stacked like ``xhat``.

    To train on the batch mean, divide the gradient by the batch size.
    """
    kind = LossKind.coerce(kind)
    x, xhat = _check_pair(x, xhat)
    x64 = x.astype(np.float64)
    y64 = xhat.astype(np.float64)
    if kind.kind == "mse":
        d = y64 - x64
        npix = d.shape[-1] * d.shape[-2] if d.ndim >= 2 else d.size
        if d.ndim < 2:
            value = np.mean(d * d)
        else:
            value = np.mean(d * d, axis=(-2, -1))
        grad = 2 * d / npix
    else:
        if x64.ndim < 2:
            raise ValueError("iSSIM needs images with at least two axes")
        value, grad = _issim_and_grad(x64, y64, kind)
    out_dtype = xhat.dtype if np.issubdtype(xhat.dtype, np.floating) else np.float64
    return value, grad.astype(out_dtype, copy=False)


def delta(x, xhat, kind: "str | LossKind" = MSE):
    """Per-image reconstruction difference for the given loss kind."""
    kind = LossKind.coerce(kind)
    if kind.kind == "mse":
        return mse(x, xhat)
    return issim(x, xhat, kind)


# ------------------------------------------------------------- classifier

def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Per-sample cross-entropy and d(loss_i)/d(logits_i)."""
    p = softmax(logits)
    n = p.shape[0]
    idx = np.arange(n)
    value = -np.log(np.maximum(p[idx, labels], 1e-300))
    grad = p.copy()
    grad[idx, labels] -= 1
    return value, grad.astype(logits.dtype, copy=False)
