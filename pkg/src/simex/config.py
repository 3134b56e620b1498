"""Run configuration: JSON loading, schema validation, defaults, dataset resolution.

A config file is a JSON object validated against ``config_schema.json``.
Relative dataset paths resolve against the config file's directory. Errors are
raised as ``ConfigError`` naming the offending field path.
"""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

from . import synth
from .data import Dataset, SplitSpec, balance, load_idx, split
from .models import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "version": 1,
    "seed": 0,
    "output_dir": "simex-out",
    "loss": "mse",
    "workers": 1,
    "train": {"optimizer": "rmsprop", "lr": 2e-4, "epochs": 50, "batch_size": 128},
    "classifier": {"optimizer": "rmsprop", "lr": 1e-3, "epochs": 15, "batch_size": 128},
    "split": {"train_fraction": 5 / 6},
    "evaluate_on": "train",
    "normalize": False,
    "gallery": 0,
    "per_class_references": False,
}
BENCH_DEFAULTS = {"repeats": 5, "warmup": 1, "max_epochs": 30, "patience": 3, "head_init": "reinit"}


def schema() -> dict:
    return json.loads(resources.files("simex").joinpath("config_schema.json").read_text(encoding="utf-8"))


def _field_path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/".join(parts) if parts else "<root>"


def validate(cfg: dict) -> None:
    """Raise ConfigError listing every schema violation with its field path."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"{_field_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(cfg: dict, overrides: dict | None = None) -> dict:
    """Validate, apply overrides, fill defaults. The result is fully explicit."""
    validate(cfg)
    merged = _merge(DEFAULTS, cfg)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "repeats":
            merged.setdefault("bench", {})
            if "bench" not in cfg:
                raise ConfigError("--repeats given but the config has no bench section")
            merged["bench"]["repeats"] = v
        else:
            merged[k] = v
    merged["split"].setdefault("seed", merged["seed"])
    if "bench" in merged:
        merged["bench"] = _merge(BENCH_DEFAULTS, merged["bench"])
    validate(merged)
    return merged


def load_config(path, overrides: dict | None = None) -> tuple[dict, Path]:
    """Read and resolve a config file; returns (config, directory it lives in)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return resolve(raw, overrides), path.resolve().parent


def train_config(cfg: dict, section: str = "train", **extra) -> TrainConfig:
    params = dict(cfg[section])
    params.setdefault("seed", cfg["seed"])
    if section == "train":
        params.setdefault("loss", cfg["loss"])
    params.update(extra)
    return TrainConfig(**params)


def split_spec(cfg: dict) -> SplitSpec:
    return SplitSpec(**cfg["split"])


def build_dataset(desc: dict, base_dir, seed: int, spec: SplitSpec | None = None) -> Dataset:
    """Materialize a dataset descriptor (IDX files or a synthetic generator)."""
    did = desc["id"]
    if "idx" in desc:
        images = Path(base_dir) / desc["idx"]["images"]
        labels = desc["idx"].get("labels")
        labels = None if labels is None else Path(base_dir) / labels
        for p in (images, labels):
            if p is not None and not p.exists():
                raise ConfigError(f"dataset {did}: file not found: {p}")
        ds = load_idx(images, labels, id=did)
    else:
        params = {k: v for k, v in desc["synth"].items() if k not in ("kind", "seed")}
        kind = desc["synth"]["kind"]
        s = desc["synth"].get("seed", seed)
        if "base" in params:
            params["base"] = build_dataset(params["base"], base_dir, seed, spec)
        try:
            ds = synth.synth_generate(kind, params, s)
        except TypeError as e:
            raise ConfigError(f"dataset {did}: bad synth parameters ({e})") from None
        ds.id = did
    if "classes" in desc:
        missing = sorted(set(desc["classes"]) - set(ds.classes))
        if missing:
            raise ConfigError(f"dataset {did}: classes {missing} not present")
        ds = ds.select_classes(desc["classes"], id=did, relabel=desc.get("relabel", False))
    if "per_class" in desc:
        ds = balance(ds, desc["per_class"], seed=seed)
    if "limit" in desc:
        ds = ds.subset(range(min(desc["limit"], len(ds))), id=did)
    subset = desc.get("subset", "all")
    if subset != "all":
        tr, te = split(ds, spec or SplitSpec(seed=seed))
        ds = tr if subset == "train" else te
    return ds
