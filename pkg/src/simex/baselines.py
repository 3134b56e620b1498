"""Comparison methods: sample-space and embedding distances, freeze-and-retrain
transfer learning, and missing-class confusion probes."""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .losses import LossKind, delta, softmax_cross_entropy
from .models import AutoencoderModel, ClassifierModel, TrainConfig, Trainer, build_classifier
from .rng import stream

MAX_PAIRS = 10_000
DISTANCE_MODES = ("pairwise", "centroid")


def _samples(s):
    return np.asarray(getattr(s, "samples", s))


def _digest(arr) -> bytes:
    a = np.ascontiguousarray(arr)
    return hashlib.blake2b(a.tobytes() + str(a.shape).encode(), digest_size=16).digest()


def _canonical(a, b):
    """Put the two sets in a fixed orientation so that d(A, B) == d(B, A)."""
    if (len(a), _digest(a)) > (len(b), _digest(b)):
        return b, a
    return a, b


def cross_pairs(n_a: int, n_b: int, max_pairs: int = MAX_PAIRS, seed: int = 0):
    """All (i, j) index pairs if there are at most ``max_pairs``, else a seeded sample."""
    total = n_a * n_b
    if total <= max_pairs:
        ii, jj = np.meshgrid(np.arange(n_a), np.arange(n_b), indexing="ij")
        return ii.ravel(), jj.ravel()
    flat = np.sort(stream(seed, "pairs").choice(total, size=max_pairs, replace=False))
    return flat // n_b, flat % n_b


def _check_sets(a, b):
    if len(a) == 0 or len(b) == 0:
        raise ValueError("distance needs two non-empty sets")
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"shape mismatch: {a.shape[1:]} vs {b.shape[1:]}")


def sample_distance(A, B, metric: str = "mse", mode: str = "pairwise",
                    max_pairs: int = MAX_PAIRS, seed: int = 0) -> float:
    """Mean per-pair distance between two sample sets, straight in sample space.

    ``pairwise`` averages over cross pairs (subsampled beyond ``max_pairs``);
    ``centroid`` compares the two mean images.
    """
    a, b = _canonical(_samples(A), _samples(B))
    _check_sets(a, b)
    kind = LossKind.coerce(metric)
    if mode == "centroid":
        return float(delta(a.astype(np.float64).mean(axis=0), b.astype(np.float64).mean(axis=0), kind))
    if mode != "pairwise":
        raise ValueError(f"mode must be one of {DISTANCE_MODES}")
    ii, jj = cross_pairs(len(a), len(b), max_pairs, seed)
    vals = []
    for s in range(0, len(ii), 2048):
        vals.append(np.asarray(delta(a[ii[s:s + 2048]], b[jj[s:s + 2048]], kind), dtype=np.float64))
    return math.fsum(np.concatenate(vals).tolist()) / len(ii)


def embedding_distance(model: AutoencoderModel, A, B, mode: str = "pairwise",
                       max_pairs: int = MAX_PAIRS, seed: int = 0) -> float:
    """Mean Euclidean distance between bottleneck embeddings of the two sets."""
    a, b = _canonical(_samples(A), _samples(B))
    _check_sets(a, b)
    ea = model.embed(a).astype(np.float64)
    eb = model.embed(b).astype(np.float64)
    if mode == "centroid":
        return float(np.linalg.norm(ea.mean(axis=0) - eb.mean(axis=0)))
    if mode != "pairwise":
        raise ValueError(f"mode must be one of {DISTANCE_MODES}")
    ii, jj = cross_pairs(len(a), len(b), max_pairs, seed)
    d = np.sqrt(np.sum((ea[ii] - eb[jj]) ** 2, axis=1))
    return math.fsum(d.tolist()) / len(d)


@dataclass
class DistanceReport:
    method: str
    rows: list
    cols: list
    values: np.ndarray

    def as_dict(self) -> dict:
        return {"method": self.method, "rows": list(self.rows), "cols": list(self.cols),
                "values": np.asarray(self.values).tolist()}


def distance_grid(method: str, row_sets: dict, col_sets: dict, model: AutoencoderModel | None = None,
                  **kwargs) -> DistanceReport:
    """Pairwise distances between named sets; ``method`` is sample-mse, sample-issim or embeddings."""
    values = np.zeros((len(row_sets), len(col_sets)))
    for i, a in enumerate(row_sets.values()):
        for j, b in enumerate(col_sets.values()):
            if method == "embeddings":
                if model is None:
                    raise ValueError("the embeddings method needs an autoencoder")
                values[i, j] = embedding_distance(model, a, b, **kwargs)
            elif method in ("sample-mse", "sample-issim"):
                values[i, j] = sample_distance(a, b, method.split("-")[1], **kwargs)
            else:
                raise ValueError(f"unknown distance method {method!r}")
    return DistanceReport(method, list(row_sets), list(col_sets), values)


# ------------------------------------------------------------ classifiers

def evaluate_accuracy(classifier, dataset) -> float:
    """Fraction of samples whose argmax prediction equals the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate accuracy on an empty set")
    if dataset.labels is None:
        raise ValueError("accuracy needs a labeled set")
    pred = np.asarray(classifier.predict(dataset.samples))
    return int(np.count_nonzero(pred == dataset.labels)) / len(dataset)


def mean_xent(classifier: ClassifierModel, dataset: Dataset) -> float:
    logits = classifier.run(dataset.samples)
    values, _ = softmax_cross_entropy(logits, dataset.labels)
    return math.fsum(values.tolist()) / len(values)


def train_classifier(dataset: Dataset, config: TrainConfig, num_classes: int | None = None) -> ClassifierModel:
    """Build and train a LeNet-5 classifier on a labeled dataset."""
    if dataset.labels is None:
        raise ValueError(f"{dataset.id}: classifier training needs labels")
    nc = num_classes or dataset.num_classes
    model = build_classifier(dataset.shape, nc, seed=config.seed, precision=config.precision)
    trainer = Trainer(model, dataset.samples, config, labels=dataset.labels)
    t0 = time.perf_counter()
    for _ in range(config.epochs):
        trainer.run_epoch()
    model.meta.update({"dataset_id": dataset.id, "seed": config.seed, "epochs_trained": trainer.epoch,
                       "train_seconds": time.perf_counter() - t0})
    return model


@dataclass
class TransferResult:
    base_id: str
    target_id: str
    accuracy: float
    base_accuracy: float
    normalized_accuracy: float
    epochs_to_best: int
    epochs_run: int
    seconds: float  # total wall time, including the patience epochs
    seconds_to_best: float  # wall time until the best epoch finished
    test_losses: list = field(default_factory=list)
    model: ClassifierModel | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {"base": self.base_id, "target": self.target_id, "accuracy": self.accuracy,
                "base_accuracy": self.base_accuracy, "normalized_accuracy": self.normalized_accuracy,
                "epochs_to_best": self.epochs_to_best, "epochs_run": self.epochs_run,
                "test_losses": list(self.test_losses)}


def trunk_fingerprint(model: ClassifierModel) -> bytes:
    h = hashlib.sha256()
    for layer in model.trunk:
        for p in layer.params:
            h.update(np.ascontiguousarray(p).tobytes())
    return h.digest()


HEAD_INITS = ("reinit", "base")


def transfer_retrain(base: ClassifierModel, target_train: Dataset, target_test: Dataset, config: TrainConfig,
                     base_accuracy: float | None = None, max_epochs: int | None = None,
                     patience: int = 3, head_init: str = "reinit") -> TransferResult:
    """Freeze the conv trunk of ``base`` and retrain its FC head on the target.

    With ``head_init="reinit"`` the FC head is freshly initialized from
    ``config.seed`` (the target's labels need not mean what the base's did);
    ``"base"`` fine-tunes the base head instead. After every epoch the test
    loss is measured; training stops once it has not improved for
    ``patience`` epochs and the best head is restored.
    """
    nc = target_train.num_classes
    if nc > base.num_classes or target_test.num_classes > base.num_classes:
        raise ValueError(f"class-count mismatch: base has {base.num_classes} classes, "
                         f"target {target_train.id!r} has {max(nc, target_test.num_classes)}")
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if head_init not in HEAD_INITS:
        raise ValueError(f"head_init must be one of {HEAD_INITS}")
    budget = config.epochs if max_epochs is None else max_epochs
    model = base.copy()
    frozen = trunk_fingerprint(model)
    if head_init == "reinit":
        rng = stream(config.seed, "head")
        for layer in model.head:
            layer.init_params(rng)
    t0 = time.perf_counter()
    trainer = Trainer(model, target_train.samples, config, labels=target_train.labels,
                      trainable_from=model.trunk_end)
    head = [p for layer in model.head for p in layer.params]
    best_loss, best_epoch, best_params, best_time = math.inf, 0, [p.copy() for p in head], 0.0
    losses = []
    since = 0
    for _ in range(budget):
        trainer.run_epoch()
        loss = mean_xent(model, target_test)
        losses.append(loss)
        if loss < best_loss:
            best_loss, best_epoch = loss, trainer.epoch
            best_params = [p.copy() for p in head]
            best_time = time.perf_counter() - t0
            since = 0
        else:
            since += 1
            if since >= patience:
                break
    for p, b in zip(head, best_params):
        p[...] = b
    seconds = time.perf_counter() - t0
    if trunk_fingerprint(model) != frozen:
        raise RuntimeError("frozen conv parameters changed during transfer retraining")
    acc = evaluate_accuracy(model, target_test)
    if base_accuracy is None:
        base_accuracy = float(base.meta.get("test_accuracy", 1.0))
    norm = acc / base_accuracy if base_accuracy > 0 else float("nan")
    model.meta.update({"transfer_target": target_train.id, "epochs_to_best": best_epoch})
    return TransferResult(base.meta.get("dataset_id", "base"), target_train.id, acc, base_accuracy, norm,
                          best_epoch, trainer.epoch, seconds, best_time, losses, model)


# -------------------------------------------------------------- confusion

@dataclass
class ConfusionReport:
    held_out: int
    classes: list  # original class indices of the classifier outputs
    distribution: np.ndarray  # mean softmax of held-out samples over ``classes``

    def __post_init__(self):
        self.distribution = np.asarray(self.distribution, dtype=np.float64)
        if self.held_out in self.classes:
            raise ValueError("a confusion report has no entry for its held-out class")

    def mass(self, cls) -> float:
        return float(self.distribution[self.classes.index(cls)])

    def as_dict(self) -> dict:
        return {"held_out": self.held_out, "classes": list(self.classes),
                "distribution": self.distribution.tolist()}


def confusion_probe(dataset: Dataset, k: int, config: TrainConfig, probe: Dataset | None = None,
                    expected_classes=None) -> ConfusionReport:
    """Train C_k without class k, then average its softmax over the class-k samples.

    ``probe`` supplies the class-k samples to score (default: those in
    ``dataset``). ``expected_classes`` defaults to 0..9.
    """
    expected = list(range(10)) if expected_classes is None else [int(c) for c in expected_classes]
    present = dataset.classes
    missing = [c for c in expected if c not in present]
    if missing:
        raise ValueError(f"{dataset.id}: missing classes {missing}")
    if k not in expected:
        raise ValueError(f"held-out class {k} is not one of {expected}")
    others = [c for c in expected if c != k]
    train_set = dataset.select_classes(others, id=f"{dataset.id}-without-{k}", relabel=True)
    seed = int(stream(config.seed, "confusion", k).integers(0, 2**63))
    model = train_classifier(train_set, replace(config, seed=seed), num_classes=len(others))
    src = dataset if probe is None else probe
    s_k = src.samples[src.labels == k]
    if len(s_k) == 0:
        raise ValueError(f"no samples of held-out class {k} to probe")
    proba = model.predict_proba(s_k)
    dist = np.array([math.fsum(col) for col in proba.T.tolist()]) / len(s_k)
    return ConfusionReport(k, others, dist)


def confusion_grid(reports) -> tuple[list, np.ndarray]:
    """Stack reports into a grid: row = held-out class, column = class, NaN diagonal."""
    classes = sorted({r.held_out for r in reports} | {c for r in reports for c in r.classes})
    grid = np.full((len(classes), len(classes)), np.nan)
    for r in reports:
        i = classes.index(r.held_out)
        for c, v in zip(r.classes, r.distribution):
            grid[i, classes.index(c)] = v
    return classes, grid
