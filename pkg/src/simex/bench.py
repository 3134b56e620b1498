"""Latency of pair-wise similarity prediction: SimEx versus transfer retraining.

SimEx latency is one forward pass of every unknown sample through one fleet
member plus the Delta reduction. Transfer latency is freeze-and-retrain of a
pretrained classifier's FC head until the test loss reaches its minimum.
Pretraining of the fleet member and of the base classifier is a one-time cost
and is reported separately. Every configuration gets one discarded warm-up run
followed by ``repeats`` timed runs on the monotonic ``perf_counter`` clock. Timed
runs go in rounds (SimEx, then each TL configuration) so host speed drift is
shared by both sides of the ratio.
"""
from __future__ import annotations

import contextlib
import gc
import math
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .baselines import transfer_retrain
from .data import Dataset
from .engine import evaluate_delta
from .models import AutoencoderModel, ClassifierModel, TrainConfig

BENCH_VERSION = 1

# TL-2..TL-4 use conventional optimizers at their default learning rates, one
# per common family; TL-5 is TL-1 with a tenth of the learning rate.
TL_CONFIGS = {
    "TL-1": {"optimizer": "rmsprop", "lr": 1e-3},
    "TL-2": {"optimizer": "adam", "lr": 1e-3},
    "TL-3": {"optimizer": "adadelta", "lr": 1.0},
    "TL-4": {"optimizer": "sgd-momentum", "lr": 1e-2},
    "TL-5": {"optimizer": "rmsprop", "lr": 1e-4},
}


@dataclass
class Timing:
    samples: list[float]
    epochs: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.samples or min(self.samples) <= 0:
            raise ValueError("timings must be positive and non-empty")

    @property
    def mean(self) -> float:
        return math.fsum(self.samples) / len(self.samples)

    @property
    def std(self) -> float:
        return statistics.stdev(self.samples) if len(self.samples) > 1 else 0.0

    @property
    def rel_std(self) -> float:
        return self.std / self.mean

    def as_dict(self) -> dict:
        d = {"samples": list(self.samples), "mean": self.mean, "min": min(self.samples),
             "max": max(self.samples), "std": self.std, "rel_std": self.rel_std}
        if self.epochs:
            d["epochs"] = list(self.epochs)
        return d


@dataclass
class BenchReport:
    simex: Timing
    transfer: dict[str, Timing]
    one_time: dict[str, float]
    repeats: int
    n_unknown: int
    backend: str

    @property
    def speedups(self) -> dict[str, float]:
        return {k: t.mean / self.simex.mean for k, t in self.transfer.items()}

    @property
    def fastest_transfer(self) -> str:
        return min(self.transfer, key=lambda k: self.transfer[k].mean)

    @property
    def min_speedup(self) -> float:
        return self.speedups[self.fastest_transfer]

    def as_dict(self) -> dict:
        return {"version": BENCH_VERSION, "kind": "bench_pairwise", "repeats": self.repeats,
                "n_unknown": self.n_unknown, "backend": self.backend,
                "machine": {"python": platform.python_version(), "processor": platform.machine()},
                "simex": self.simex.as_dict(),
                "transfer": {k: t.as_dict() for k, t in self.transfer.items()},
                "one_time_seconds": dict(self.one_time), "speedups": self.speedups,
                "fastest_transfer": self.fastest_transfer, "min_speedup": self.min_speedup}


@contextlib.contextmanager
def _no_gc():
    # like timeit: keep collector pauses out of the measured interval
    enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def time_simex(member: AutoencoderModel, unknown: Dataset, kind=None) -> float:
    with _no_gc():
        t0 = time.perf_counter()
        evaluate_delta(member, unknown, kind)
        return time.perf_counter() - t0


def bench_pairwise(member: AutoencoderModel, base: ClassifierModel, target_train: Dataset, target_test: Dataset,
                   configs: dict | None = None, repeats: int = 5, warmup: int = 1, max_epochs: int = 30,
                   patience: int = 3, seed: int = 0, one_time: dict | None = None,
                   head_init: str = "reinit") -> BenchReport:
    """Time SimEx inference and each TL configuration; runs are strictly serial."""
    if member is None or base is None:
        raise ValueError("bench_pairwise needs a pretrained fleet member and a pretrained base classifier")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    configs = TL_CONFIGS if configs is None else configs

    runs = {}
    for name, cfg in configs.items():
        tc = TrainConfig(optimizer=cfg["optimizer"], lr=cfg.get("lr"), epochs=max_epochs,
                         batch_size=cfg.get("batch_size", 128), seed=seed,
                         precision=str(base.dtype))
        runs[name] = (lambda tc=tc: transfer_retrain(base, target_train, target_test, tc, base_accuracy=1.0,
                                                     patience=patience, head_init=head_init))
    for _ in range(warmup):
        time_simex(member, target_train)
        for run in runs.values():
            run()
    # rounds interleave SimEx with every TL config so slow host drift hits both sides alike
    simex_times = []
    times = {name: [] for name in runs}
    epochs = {name: [] for name in runs}
    for _ in range(repeats):
        simex_times.append(time_simex(member, target_train))
        for name, run in runs.items():
            with _no_gc():
                r = run()
            times[name].append(r.seconds_to_best)
            epochs[name].append(r.epochs_to_best)
    simex = Timing(simex_times)
    transfer = {name: Timing(times[name], epochs[name]) for name in runs}
    return BenchReport(simex, transfer, dict(one_time or {}), repeats, len(target_train), kernels.BACKEND)


def bench_kernels(batch: int = 128, repeats: int = 5, seed: int = 0) -> dict:
    """Per-kernel timings of the numba and numpy convolution paths on autoencoder shapes."""
    rng = np.random.default_rng(seed)
    shapes = [("enc conv1", 1, 6, 32), ("enc conv2", 6, 16, 14), ("dec conv1", 16, 6, 18), ("dec conv2", 6, 1, 32)]
    namespaces = {"numpy": kernels.numpy_kernels}
    if kernels.NUMBA_AVAILABLE:
        namespaces["numba"] = kernels.numba_kernels
    out = {}
    for label, cin, cout, hp in shapes:
        xp = rng.random((batch, cin, hp, hp), dtype=np.float32)
        w = rng.standard_normal((cout, cin, 5, 5)).astype(np.float32)
        b = np.zeros(cout, np.float32)
        row = {}
        for ns_name, ns in namespaces.items():
            y, ctx = ns.conv2d_forward(xp, w, b)
            ns.conv2d_backward(ctx, w, y)  # compile / warm up
            fwd, bwd = [], []
            for _ in range(repeats):
                t0 = time.perf_counter()
                y, ctx = ns.conv2d_forward(xp, w, b)
                t1 = time.perf_counter()
                ns.conv2d_backward(ctx, w, y)
                t2 = time.perf_counter()
                fwd.append(t1 - t0)
                bwd.append(t2 - t1)
            row[ns_name] = {"forward": min(fwd), "backward": min(bwd)}
        out[label] = row
    return out
