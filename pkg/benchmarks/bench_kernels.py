"""Numba versus pure-numpy kernels.

Two views:
  * per-kernel conv timings on the autoencoder's layer shapes (one process, both namespaces)
  * end-to-end autoencoder epoch and Delta evaluation, each backend in its own
    subprocess so ``SIMEX_DISABLE_NUMBA`` takes effect at import time

    python benchmarks/bench_kernels.py [--batch 128] [--repeats 5] [--samples 1000]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from simex import kernels, synth
from simex.engine import evaluate_delta
from simex.models import Trainer, TrainConfig, build_autoencoder
n, repeats = int(sys.argv[1]), int(sys.argv[2])
ds = synth.glyphs(max(1, n // 10), seed=0)
model = build_autoencoder(seed=0)
trainer = Trainer(model, ds.samples, TrainConfig(epochs=1, lr=1e-3, seed=0))
trainer.run_epoch()  # compile / warm caches
evaluate_delta(model, ds)
ep, dl = [], []
for _ in range(repeats):
    t0 = time.perf_counter(); trainer.run_epoch(); t1 = time.perf_counter()
    evaluate_delta(model, ds); t2 = time.perf_counter()
    ep.append(t1 - t0); dl.append(t2 - t1)
print(json.dumps({"backend": kernels.BACKEND, "n": len(ds), "epoch": min(ep), "delta": min(dl)}))
"""


def end_to_end(disable: bool, n: int, repeats: int) -> dict:
    env = dict(os.environ)
    if disable:
        env["SIMEX_DISABLE_NUMBA"] = "1"
    else:
        env.pop("SIMEX_DISABLE_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", CHILD, str(n), str(repeats)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--samples", type=int, default=1000)
    args = ap.parse_args(argv)

    from simex.bench import bench_kernels

    print(f"per-kernel conv timings, batch {args.batch}, best of {args.repeats} (ms)")
    print(f"{'layer':<10} {'backend':<7} {'forward':>9} {'backward':>9}")
    for layer, row in bench_kernels(args.batch, args.repeats).items():
        for backend, t in row.items():
            print(f"{layer:<10} {backend:<7} {1e3 * t['forward']:9.2f} {1e3 * t['backward']:9.2f}")

    print(f"\nend to end, {args.samples} samples, best of {args.repeats} (s)")
    res = [end_to_end(False, args.samples, args.repeats), end_to_end(True, args.samples, args.repeats)]
    for r in res:
        print(f"{r['backend']:<7} epoch {r['epoch']:.3f}  delta {r['delta']:.3f}")
    nb, np_ = res
    if nb["backend"] == "numba":
        print(f"numba speedup: epoch {np_['epoch'] / nb['epoch']:.2f}x, delta {np_['delta'] / nb['delta']:.2f}x")


if __name__ == "__main__":
    main()
