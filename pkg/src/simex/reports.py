"""Report and artifact writers: JSON, CSV, PGM galleries, run manifests.

JSON is written with sorted keys and a trailing newline so identical runs give
identical bytes. Anything wall-clock related goes to a separate timings file.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from pathlib import Path

import numpy as np

from .data import quantize

SCHEMA_VERSION = 1


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def grid_csv(rows, cols, values, corner: str = "row\\col") -> str:
    """A labeled matrix as CSV; NaN cells are left empty."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([corner] + [str(c) for c in cols])
    for r, vals in zip(rows, np.asarray(values, dtype=np.float64)):
        w.writerow([str(r)] + ["" if np.isnan(v) else repr(float(v)) for v in vals])
    return buf.getvalue()


# ------------------------------------------------------------------- PGM

def pgm_bytes(image) -> bytes:
    """Binary 8-bit PGM; pixels are quantized with the IDX writer's rule."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    h, w = img.shape
    return f"P5 {w} {h} 255\n".encode("ascii") + quantize(img).tobytes()


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    header, _, payload = blob.partition(b"\n")
    magic, w, h, maxval = header.split()
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: unsupported PGM header {header!r}")
    w, h = int(w), int(h)
    if len(payload) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def emit_reconstruction_gallery(model, samples, path) -> list[Path]:
    """Write input_NNN.pgm / recon_NNN.pgm pairs for each sample."""
    samples = np.asarray(getattr(samples, "samples", samples))
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    recon = model.reconstruct(samples)
    written = []
    for i, (x, r) in enumerate(zip(samples, recon)):
        for prefix, img in (("input", x), ("recon", r)):
            p = out_dir / f"{prefix}_{i:03d}.pgm"
            p.write_bytes(pgm_bytes(img))
            written.append(p)
    return written


# -------------------------------------------------------------- manifest

def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_default)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def versions() -> dict:
    import numba
    import scipy

    from . import __version__, kernels

    return {"simex": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__, "scipy": scipy.__version__, "kernel_backend": kernels.BACKEND}


def manifest(command: str, config: dict, seeds: dict, outputs: list[str]) -> dict:
    """Everything needed to rerun: the resolved config, its hash, seeds and versions."""
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": config,
            "config_sha256": config_hash(config), "seeds": seeds, "versions": versions(),
            "outputs": sorted(outputs)}
