"""Procedural datasets with controllable structure.

``glyphs`` draws ten anti-aliased stroke shapes (label = shape index); the
other generators distort an existing dataset:

==========  ====================================================
glyphs      n_per_class, size=28, jitter=1.5 px, classes=all,
            rotation=0 (max extra random rotation, degrees)
rotated     base, angle_range=(lo, hi) degrees
noisy       base, sigma  (additive Gaussian, clipped to [0, 1])
textured    base, texture_seed, strength=0.6
==========  ====================================================
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .data import Dataset
from .rng import stream

GLYPH_NAMES = ("hbar", "vbar", "slash", "cross", "x", "ring", "square", "tee", "ell", "arch")

# Each primitive is ("seg", x0, y0, x1, y1) or ("arc", cx, cy, r, a0, a1) in a
# unit box [-1, 1]^2, y pointing down. Arcs are in degrees.
_GLYPHS = {
    "hbar": [("seg", -0.8, 0.0, 0.8, 0.0)],
    "vbar": [("seg", 0.0, -0.8, 0.0, 0.8)],
    "slash": [("seg", -0.6, 0.7, 0.6, -0.7)],
    "cross": [("seg", -0.8, 0.0, 0.8, 0.0), ("seg", 0.0, -0.8, 0.0, 0.8)],
    "x": [("seg", -0.6, -0.6, 0.6, 0.6), ("seg", -0.6, 0.6, 0.6, -0.6)],
    "ring": [("arc", 0.0, 0.0, 0.65, 0.0, 360.0)],
    "square": [("seg", -0.6, -0.6, 0.6, -0.6), ("seg", 0.6, -0.6, 0.6, 0.6),
               ("seg", 0.6, 0.6, -0.6, 0.6), ("seg", -0.6, 0.6, -0.6, -0.6)],
    "tee": [("seg", -0.7, -0.6, 0.7, -0.6), ("seg", 0.0, -0.6, 0.0, 0.8)],
    "ell": [("seg", -0.4, -0.8, -0.4, 0.6), ("seg", -0.4, 0.6, 0.6, 0.6)],
    "arch": [("arc", 0.0, 0.3, 0.65, 180.0, 360.0), ("seg", -0.65, 0.3, -0.65, 0.8),
             ("seg", 0.65, 0.3, 0.65, 0.8)],
}


def _seg_dist(px, py, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    t = ((px - x0) * dx + (py - y0) * dy) / max(dx * dx + dy * dy, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def _arc_dist(px, py, cx, cy, r, a0, a1):
    ang = np.degrees(np.arctan2(py - cy, px - cx)) % 360.0
    span = (a1 - a0) % 360.0 or 360.0
    inside = ((ang - a0) % 360.0) <= span
    d_circle = np.abs(np.hypot(px - cx, py - cy) - r)
    e0 = (cx + r * math.cos(math.radians(a0)), cy + r * math.sin(math.radians(a0)))
    e1 = (cx + r * math.cos(math.radians(a1)), cy + r * math.sin(math.radians(a1)))
    d_end = np.minimum(np.hypot(px - e0[0], py - e0[1]), np.hypot(px - e1[0], py - e1[1]))
    return np.where(inside, d_circle, d_end)


def render_glyph(name: str, size: int = 28, *, shift=(0.0, 0.0), scale: float = 1.0,
                 angle: float = 0.0, thickness: float = 1.6) -> np.ndarray:
    """Rasterize one glyph. Distances are in pixels; edges get a one-pixel ramp."""
    half = size / 2.0
    box = 0.33 * size * scale  # unit-box radius in pixels
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    # pixel -> glyph frame: undo shift, rotation and scaling
    u, v = xs - half - shift[0], ys - half - shift[1]
    c, s = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    gx, gy = (c * u + s * v), (-s * u + c * v)
    dist = np.full((size, size), np.inf)
    for prim in _GLYPHS[name]:
        if prim[0] == "seg":
            _, x0, y0, x1, y1 = prim
            d = _seg_dist(gx, gy, x0 * box, y0 * box, x1 * box, y1 * box)
        else:
            _, cx, cy, r, a0, a1 = prim
            d = _arc_dist(gx, gy, cx * box, cy * box, r * box, a0, a1)
        dist = np.minimum(dist, d)
    return np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0)


def glyphs(n_per_class: int, seed: int, size: int = 28, jitter: float = 1.5, classes=None,
           rotation: float = 0.0, id: str = "glyphs") -> Dataset:
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    classes = list(range(len(GLYPH_NAMES))) if classes is None else [int(c) for c in classes]
    if not classes:
        raise ValueError("glyphs: empty class list")
    rng = stream(seed, "glyphs")
    samples, labels = [], []
    for cls in classes:
        name = GLYPH_NAMES[cls]
        for _ in range(n_per_class):
            shift = rng.uniform(-jitter, jitter, size=2)
            scale = rng.uniform(0.85, 1.1)
            angle = rng.uniform(-rotation, rotation) if rotation else 0.0
            thick = rng.uniform(1.3, 2.4)
            samples.append(render_glyph(name, size, shift=shift, scale=scale, angle=angle, thickness=thick))
            labels.append(cls)
    prov = {"kind": "glyphs", "n_per_class": n_per_class, "seed": seed, "size": size, "jitter": jitter,
            "classes": classes, "rotation": rotation}
    return Dataset(id, np.stack(samples), np.asarray(labels), prov)


def _rotate_one(img, angle):
    quarter = angle / 90.0
    if quarter == round(quarter):
        return np.rot90(img, int(round(quarter)) % 4)
    return np.clip(ndimage.rotate(img, angle, reshape=False, order=1, mode="constant", cval=0.0), 0.0, 1.0)


def rotated(base: Dataset, angle_range, seed: int, id: str | None = None) -> Dataset:
    """Rotate each sample counter-clockwise by an angle drawn uniformly from ``angle_range``."""
    if len(base) == 0:
        raise ValueError("rotated: empty base dataset")
    lo, hi = (float(a) for a in angle_range)
    if hi < lo:
        raise ValueError(f"rotated: bad angle range {angle_range}")
    rng = stream(seed, "rotated")
    angles = rng.uniform(lo, hi, size=len(base)) if hi > lo else np.full(len(base), lo)
    out = np.stack([_rotate_one(img, a) for img, a in zip(base.samples.astype(np.float64), angles)])
    return Dataset(id or f"{base.id}+rot", out, base.labels,
                   {"kind": "rotated", "base": base.id, "angle_range": [lo, hi], "seed": seed})


def noisy(base: Dataset, sigma: float, seed: int, id: str | None = None) -> Dataset:
    if sigma < 0:
        raise ValueError(f"noisy: sigma must be >= 0, got {sigma}")
    if len(base) == 0:
        raise ValueError("noisy: empty base dataset")
    if sigma == 0:
        out = base.samples.copy()
    else:
        rng = stream(seed, "noisy")
        noise = rng.standard_normal(base.samples.shape) * sigma
        out = np.clip(base.samples.astype(np.float64) + noise, 0.0, 1.0)
    return Dataset(id or f"{base.id}+noise{sigma}", out, base.labels,
                   {"kind": "noisy", "base": base.id, "sigma": sigma, "seed": seed})


def textured(base: Dataset, texture_seed: int, strength: float = 0.6, id: str | None = None) -> Dataset:
    """Overlay each sample on a smooth random texture (pixelwise max)."""
    if len(base) == 0:
        raise ValueError("textured: empty base dataset")
    if not 0 <= strength <= 1:
        raise ValueError("textured: strength must be in [0, 1]")
    rng = stream(texture_seed, "texture")
    field = rng.random(base.samples.shape)
    field = ndimage.gaussian_filter(field, sigma=(0, 2.0, 2.0))
    lo = field.min(axis=(1, 2), keepdims=True)
    hi = field.max(axis=(1, 2), keepdims=True)
    field = (field - lo) / np.maximum(hi - lo, 1e-12)
    out = np.maximum(base.samples.astype(np.float64), strength * field)
    return Dataset(id or f"{base.id}+tex", out, base.labels,
                   {"kind": "textured", "base": base.id, "texture_seed": texture_seed, "strength": strength})


def synth_generate(kind: str, params: dict, seed: int) -> Dataset:
    params = dict(params)
    if kind == "glyphs":
        return glyphs(seed=seed, **params)
    if kind == "rotated":
        return rotated(params.pop("base"), seed=seed, **params)
    if kind == "noisy":
        return noisy(params.pop("base"), seed=seed, **params)
    if kind == "textured":
        base = params.pop("base")
        params.setdefault("texture_seed", seed)
        return textured(base, **params)
    raise ValueError(f"unknown synthetic kind {kind!r}")
