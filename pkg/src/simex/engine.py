"""Autoencoder fleets and reconstruction-difference similarity.

A fleet holds one autoencoder per reference set. An unknown set X is pushed
through a member trained on Y_k, and Delta(X | Y_k) is the mean per-sample
difference between inputs and reconstructions. Lower Delta means X is more
similar to Y_k. All comparisons happen in sample space.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .analytics import RankList, spearman_rho
from .data import Dataset
from .losses import LossKind, delta
from .models import AutoencoderModel, TrainConfig, Trainer, build_autoencoder, train
from .rng import stream

DEFAULT_CHECKPOINTS = (3, 5, 7, 10, 25, 50, 100)
REPORT_VERSION = 1


class FleetError(RuntimeError):
    pass


def member_seed(seed: int, reference_id: str) -> int:
    """Seed of a fleet member; depends only on the run seed and the reference id."""
    return int(stream(seed, "member", reference_id).integers(0, 2**63))


def _map(fn, items, workers):
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class Fleet:
    members: dict[str, AutoencoderModel]
    config: TrainConfig
    loss: LossKind
    pretrain_seconds: dict[str, float] = field(default_factory=dict)
    histories: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.members:
            raise FleetError("a fleet needs at least one member")
        archs = {json.dumps(m.architecture(), sort_keys=True) for m in self.members.values()}
        if len(archs) != 1:
            raise FleetError("fleet members must share one architecture")

    @property
    def ids(self) -> list[str]:
        return list(self.members)

    def __getitem__(self, ref_id) -> AutoencoderModel:
        return self.members[ref_id]

    def __len__(self):
        return len(self.members)


def _as_references(references) -> dict[str, Dataset]:
    if isinstance(references, Dataset):
        references = [references]
    if isinstance(references, Mapping):
        refs = dict(references)
    else:
        refs = {}
        for d in references:
            if d.id in refs:
                raise FleetError(f"duplicate reference id {d.id!r}")
            refs[d.id] = d
    if not refs:
        raise FleetError("need at least one reference")
    for rid, d in refs.items():
        if len(d) == 0:
            raise FleetError(f"reference {rid!r} is empty")
    return refs


def train_member(ref_id: str, data: Dataset, config: TrainConfig):
    seed = member_seed(config.seed, ref_id)
    model = build_autoencoder(data.shape, seed=seed, precision=config.precision)
    try:
        result = train(model, data, replace(config, seed=seed))
    except Exception as exc:
        raise FleetError(f"training fleet member {ref_id!r} failed: {exc}") from exc
    model.meta.update({"reference_id": ref_id, "seed": seed, "run_seed": config.seed, "loss": config.loss,
                       "train_config": replace(config, seed=seed).to_dict()})
    return model, result


def pretrain_fleet(references, config: TrainConfig, workers: int = 1) -> Fleet:
    """Train one autoencoder per reference (a Dataset, a list of Datasets or an id -> Dataset map)."""
    refs = _as_references(references)
    results = _map(lambda item: train_member(item[0], item[1], config), list(refs.items()), workers)
    members, seconds, histories = {}, {}, {}
    for rid, (model, res) in zip(refs, results):
        members[rid] = model
        seconds[rid] = res.seconds
        histories[rid] = res.history
    return Fleet(members, config, LossKind.coerce(config.loss), seconds, histories)


# ------------------------------------------------------------------ deltas

@dataclass
class DeltaResult:
    value: float
    per_sample: np.ndarray
    loss: str

    def percentiles(self, qs=(5, 25, 50, 75, 95)) -> dict:
        return {f"p{q}": float(np.percentile(self.per_sample, q)) for q in qs}


def evaluate_delta(member: AutoencoderModel, X, kind: "str | LossKind | None" = None) -> DeltaResult:
    """Delta(X | Y_k): mean reconstruction difference of X through ``member``."""
    trained_loss = member.meta.get("loss")
    kind = LossKind.coerce(kind if kind is not None else trained_loss or "mse")
    if trained_loss is not None and trained_loss != kind.kind:
        raise ValueError(f"loss mismatch: member trained with {trained_loss!r}, asked for {kind.kind!r}")
    samples = getattr(X, "samples", X)
    if len(samples) == 0:
        raise ValueError("cannot evaluate Delta on an empty set")
    recon = member.reconstruct(samples)
    per_sample = np.asarray(delta(samples, recon, kind), dtype=np.float64)
    # fsum: exactly rounded, so duplicating every sample leaves the mean unchanged
    value = math.fsum(per_sample.tolist()) / len(per_sample)
    return DeltaResult(value, per_sample, kind.kind)


@dataclass
class DeltaMatrix:
    rows: list[str]  # unknown sets
    cols: list[str]  # references
    values: np.ndarray
    loss: str
    normalized: bool = False
    norms: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.rows), len(self.cols)):
            raise ValueError(f"values shape {self.values.shape} does not match "
                             f"{len(self.rows)} rows x {len(self.cols)} cols")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("Delta values must be finite and non-negative")

    def row(self, rid) -> dict[str, float]:
        i = self.rows.index(rid)
        return {c: float(self.values[i, j]) for j, c in enumerate(self.cols)}

    def column(self, cid) -> dict[str, float]:
        j = self.cols.index(cid)
        return {r: float(self.values[i, j]) for i, r in enumerate(self.rows)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["unknown\\reference"] + list(self.cols))
        for r, vals in zip(self.rows, self.values):
            w.writerow([r] + [repr(float(v)) for v in vals])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "kind": "delta_matrix", "loss": self.loss,
                "normalized": self.normalized, "rows": list(self.rows), "cols": list(self.cols),
                "values": self.values.tolist(), "norms": dict(self.norms)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "DeltaMatrix":
        return cls(d["rows"], d["cols"], np.array(d["values"], dtype=np.float64), d["loss"],
                   d.get("normalized", False), d.get("norms", {}))

    @classmethod
    def from_json(cls, text) -> "DeltaMatrix":
        return cls.from_dict(json.loads(text))


def delta_matrix(fleet: Fleet, unknowns, kind=None, workers: int = 1) -> DeltaMatrix:
    """Delta of every unknown set through every fleet member."""
    if isinstance(unknowns, Dataset):
        unknowns = [unknowns]
    unknowns = list(unknowns.values()) if isinstance(unknowns, Mapping) else list(unknowns)
    if not unknowns:
        raise ValueError("need at least one unknown set")
    kind = LossKind.coerce(kind if kind is not None else fleet.loss)

    def row(u):
        return [evaluate_delta(fleet[c], u, kind).value for c in fleet.ids]

    values = _map(row, unknowns, workers)
    return DeltaMatrix([u.id for u in unknowns], fleet.ids, np.array(values), kind.kind)


# --------------------------------------------------------------- orderings

@dataclass(frozen=True)
class SimilarityOrdering:
    ids: tuple
    values: tuple
    tie_break: str = "lexical-id"

    def as_ranklist(self) -> RankList:
        return RankList(self.ids)

    def as_dict(self) -> dict:
        return {"order": list(self.ids), "values": list(self.values), "tie_break": self.tie_break}


def order_by_similarity(deltas: Mapping[str, float]) -> SimilarityOrdering:
    """Most similar first (ascending Delta); equal values fall back to id order."""
    if not deltas:
        raise ValueError("nothing to order")
    for k, v in deltas.items():
        if not math.isfinite(v):
            raise ValueError(f"non-finite Delta for {k!r}")
    ids = sorted(deltas, key=lambda k: (deltas[k], str(k)))
    return SimilarityOrdering(tuple(ids), tuple(float(deltas[k]) for k in ids))


def normalize_deltas(matrix: DeltaMatrix, references: Mapping[str, Dataset]) -> DeltaMatrix:
    """Divide each reference column by the mean L2 norm of that reference's samples."""
    norms = {}
    for c in matrix.cols:
        if c not in references:
            raise KeyError(f"no reference data for column {c!r}")
        n = references[c].mean_l2_norm()
        if not n > 0:
            raise ValueError(f"reference {c!r} has zero mean L2 norm")
        norms[c] = n
    values = matrix.values / np.array([norms[c] for c in matrix.cols])[None, :]
    return DeltaMatrix(list(matrix.rows), list(matrix.cols), values, matrix.loss, True, norms)


# ------------------------------------------------ ordering-convergence stop

def convergence_checkpoint(orderings: Sequence, checkpoints: Sequence[int], window: int):
    """First checkpoint closing a run of ``window`` identical consecutive orderings, else None."""
    if window < 2:
        raise ValueError("stability window must be >= 2")
    run = 0
    prev = None
    for ordering, epoch in zip(orderings, checkpoints):
        ordering = tuple(ordering)
        run = run + 1 if ordering == prev else 1
        prev = ordering
        if run >= window:
            return epoch
    return None


@dataclass
class ConvergenceResult:
    model: AutoencoderModel
    converged: bool
    epoch: int | None  # checkpoint where orderings converged
    epochs_trained: int
    orderings: dict[int, tuple]
    deltas: dict[int, dict[str, float]]
    rho_trace: dict[int, float]
    seconds: dict[int, float]


def train_with_ordering_convergence(reference: Dataset, probe_sets, config: TrainConfig,
                                    checkpoint_epochs=DEFAULT_CHECKPOINTS, stability_window: int = 3,
                                    final_ordering=None, stop_on_convergence: bool = True) -> ConvergenceResult:
    """Train one fleet member, checking the probe-set ordering at each checkpoint epoch.

    Training stops at the first checkpoint where the ordering has been
    identical for ``stability_window`` consecutive checkpoints. ``config.epochs``
    is ignored; the last checkpoint is the budget.
    """
    checkpoints = [int(e) for e in checkpoint_epochs]
    if not checkpoints or any(b <= a for a, b in zip(checkpoints, checkpoints[1:])) or checkpoints[0] < 1:
        raise ValueError("checkpoint epochs must be positive and strictly ascending")
    if stability_window < 2:
        raise ValueError("stability window must be >= 2")
    probes = list(probe_sets.values()) if isinstance(probe_sets, Mapping) else list(probe_sets)
    seed = member_seed(config.seed, reference.id)
    cfg = replace(config, seed=seed)
    model = build_autoencoder(reference.shape, seed=seed, precision=cfg.precision)
    model.meta.update({"reference_id": reference.id, "seed": seed, "run_seed": config.seed, "loss": cfg.loss})
    trainer = Trainer(model, reference.samples, cfg)
    final = None if final_ordering is None else RankList.coerce(final_ordering)

    orderings, deltas, rho, seconds = {}, {}, {}, {}
    converged_at = None
    elapsed = 0.0
    for epoch in checkpoints:
        t0 = time.perf_counter()
        while trainer.epoch < epoch:
            trainer.run_epoch()
        elapsed += time.perf_counter() - t0
        seconds[epoch] = elapsed
        d = {p.id: evaluate_delta(model, p, cfg.loss).value for p in probes}
        ordering = order_by_similarity(d).ids
        deltas[epoch] = d
        orderings[epoch] = ordering
        if final is not None:
            rho[epoch] = spearman_rho(RankList(ordering), final)
        if converged_at is None:
            converged_at = convergence_checkpoint(list(orderings.values()), list(orderings), stability_window)
            if converged_at is not None and stop_on_convergence:
                break
    model.meta["epochs_trained"] = trainer.epoch
    return ConvergenceResult(model, converged_at is not None, converged_at, trainer.epoch,
                             orderings, deltas, rho, seconds)
