"""Command-line interface.

    simex pretrain   CONFIG   train one autoencoder per reference, save checkpoints
    simex compare    CONFIG   Delta matrix of unknowns x references plus orderings
    simex pair       CONFIG   Delta of one target through one source-trained member
    simex confusion  CONFIG   class-pair similarity: SimEx versus classifier confusion
    simex bench      CONFIG   latency of SimEx versus transfer retraining
    simex synth      CONFIG   write the configured datasets as IDX files

Exit codes: 0 success, 1 usage error, 2 invalid config or data, 3 runtime failure.
Deterministic reports are byte-identical across reruns with the same config;
wall-clock numbers live only in ``timings.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import time
from pathlib import Path

from . import reports
from .analytics import rank_of, spearman_rho
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, build_dataset, load_config, split_spec, train_config
from .data import IdxError, split, write_idx
from .engine import (Fleet, FleetError, delta_matrix, evaluate_delta, normalize_deltas,
                     order_by_similarity, pretrain_fleet)
from .losses import LossKind
from .models import TrainConfig, TrainingError

log = logging.getLogger("simex")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


class Run:
    """Output directory bookkeeping shared by every command."""

    def __init__(self, command: str, cfg: dict, base_dir: Path):
        self.command = command
        self.cfg = cfg
        self.base_dir = base_dir
        self.out = Path(cfg["output_dir"])
        if not self.out.is_absolute():
            self.out = Path.cwd() / self.out
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.timings: dict = {}
        self.spec = split_spec(cfg)

    def path(self, rel: str) -> Path:
        self.outputs.append(rel)
        return self.out / rel

    def json(self, rel, obj):
        reports.write_json(self.path(rel), obj)

    def text(self, rel, text):
        reports.write_text(self.path(rel), text)

    def dataset(self, desc):
        return build_dataset(desc, self.base_dir, self.cfg["seed"], self.spec)

    def train_part(self, ds):
        return split(ds, self.spec)[0]

    def eval_part(self, ds):
        on = self.cfg["evaluate_on"]
        if on == "all":
            return ds
        tr, te = split(ds, self.spec)
        return tr if on == "train" else te

    def finish(self):
        reports.write_json(self.out / "timings.json", self.timings)
        seeds = {"seed": self.cfg["seed"], "split_seed": self.spec.seed}
        man = reports.manifest(self.command, self.cfg, seeds, self.outputs + ["timings.json"])
        reports.write_json(self.out / "manifest.json", man)


# ---------------------------------------------------------------- helpers

def _references(run: Run) -> dict:
    if "references" not in run.cfg:
        raise ConfigError(f"{run.command}: config needs a 'references' list")
    refs = {}
    for desc in run.cfg["references"]:
        ds = run.dataset(desc)
        if run.cfg["per_class_references"]:
            for cid, part in ds.class_datasets().items():
                refs[cid] = part
        else:
            if ds.id in refs:
                raise ConfigError(f"duplicate reference id {ds.id!r}")
            refs[ds.id] = ds
    return refs


def _save_fleet(run: Run, fleet: Fleet):
    index = {}
    for rid, model in fleet.members.items():
        rel = f"fleet/{_safe(rid)}.smxc"
        save_checkpoint(model, run.path(rel))
        index[rid] = Path(rel).name
    run.json("fleet/index.json", {"loss": fleet.loss.kind, "members": index,
                                  "train_config": fleet.config.to_dict(), "histories": fleet.histories})


def _load_fleet(run: Run, fleet_dir) -> Fleet:
    fleet_dir = Path(fleet_dir)
    if not fleet_dir.is_absolute():
        fleet_dir = run.base_dir / fleet_dir
    index_path = fleet_dir / "index.json"
    if not index_path.exists():
        raise ConfigError(f"no fleet index at {index_path}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    members = {rid: load_checkpoint(fleet_dir / name) for rid, name in index["members"].items()}
    return Fleet(members, TrainConfig.from_dict(index["train_config"]), LossKind.coerce(index["loss"]))


def _fleet(run: Run, refs: dict) -> Fleet:
    if run.cfg.get("fleet_dir"):
        fleet = _load_fleet(run, run.cfg["fleet_dir"])
        missing = sorted(set(refs) - set(fleet.ids))
        if missing:
            raise ConfigError(f"fleet at {run.cfg['fleet_dir']} lacks members {missing}")
        return fleet
    parts = {rid: run.train_part(ds) for rid, ds in refs.items()}
    t0 = time.perf_counter()
    fleet = pretrain_fleet(parts, train_config(run.cfg), workers=run.cfg["workers"])
    run.timings["pretrain_wall_seconds"] = time.perf_counter() - t0
    run.timings["pretrain_member_seconds"] = fleet.pretrain_seconds
    _save_fleet(run, fleet)
    return fleet


def _gallery(run: Run, fleet: Fleet, refs: dict):
    n = run.cfg["gallery"]
    if not n:
        return
    for rid, model in fleet.members.items():
        samples = refs[rid].samples[:n]
        for p in reports.emit_reconstruction_gallery(model, samples, run.out / "gallery" / _safe(rid)):
            run.outputs.append(str(p.relative_to(run.out)))


def _fmt(v: float) -> str:
    return f"{v:.6g}"


# --------------------------------------------------------------- commands

def cmd_pretrain(run: Run):
    refs = _references(run)
    fleet = _fleet(run, refs)
    _gallery(run, fleet, refs)
    lines = [f"fleet of {len(fleet)} members, loss {fleet.loss.kind}"]
    for rid in fleet.ids:
        hist = fleet.histories.get(rid) or [float("nan")]
        lines.append(f"  {rid}: final training loss {_fmt(hist[-1])}")
    run.text("summary.txt", "\n".join(lines) + "\n")


def cmd_compare(run: Run):
    if "unknowns" not in run.cfg:
        raise ConfigError("compare: config needs an 'unknowns' list")
    refs = _references(run)
    fleet = _fleet(run, refs)
    unknowns = [run.eval_part(run.dataset(d)) for d in run.cfg["unknowns"]]
    t0 = time.perf_counter()
    matrix = delta_matrix(fleet, unknowns, workers=run.cfg["workers"])
    run.timings["delta_seconds"] = time.perf_counter() - t0
    if run.cfg["normalize"]:
        matrix = normalize_deltas(matrix, {rid: run.train_part(ds) for rid, ds in refs.items()})
    run.text("deltas.csv", matrix.to_csv())
    run.text("deltas.json", matrix.to_json())
    orderings = {u: order_by_similarity(matrix.row(u)).as_dict() for u in matrix.rows}
    run.json("orderings.json", {"loss": matrix.loss, "normalized": matrix.normalized, "orderings": orderings})
    _gallery(run, fleet, refs)
    lines = [f"Delta ({matrix.loss}{', normalized' if matrix.normalized else ''}); most similar first"]
    for u, o in orderings.items():
        lines.append(f"  {u}: " + ", ".join(f"{r} ({_fmt(v)})" for r, v in zip(o["order"], o["values"])))
    run.text("summary.txt", "\n".join(lines) + "\n")


def cmd_pair(run: Run):
    if "source" not in run.cfg or "target" not in run.cfg:
        raise ConfigError("pair: config needs 'source' and 'target' datasets")
    src = run.dataset(run.cfg["source"])
    tgt = run.eval_part(run.dataset(run.cfg["target"]))
    fleet = _fleet(run, {src.id: src})
    res = evaluate_delta(fleet[src.id], tgt)
    run.json("pair.json", {"source": src.id, "target": tgt.id, "loss": res.loss, "delta": res.value,
                           "n_target": len(tgt), "percentiles": res.percentiles()})
    run.text("summary.txt", f"Delta({tgt.id} | {src.id}) = {_fmt(res.value)} ({res.loss}, n={len(tgt)})\n")


def _pair_scores(classes, grid, higher_is_closer: bool) -> dict:
    out = {}
    for i in range(len(classes)):
        for k in range(i + 1, len(classes)):
            s = float(grid[i, k] + grid[k, i])
            out[f"{classes[i]}-{classes[k]}"] = -s if higher_is_closer else s
    return out


def cmd_confusion(run: Run):
    from .baselines import confusion_grid, confusion_probe

    sec = run.cfg.get("confusion")
    if sec is None:
        raise ConfigError("confusion: config needs a 'confusion' section")
    ds = run.dataset(sec["dataset"])
    classes = sec.get("classes", ds.classes)
    if len(classes) < 3:
        raise ConfigError("confusion: need at least three classes")
    tr, te = split(ds, run.spec)
    ccfg = train_config(run.cfg, "classifier")
    t0 = time.perf_counter()
    reps = [confusion_probe(tr, k, ccfg, probe=te, expected_classes=classes) for k in classes]
    run.timings["confusion_seconds"] = time.perf_counter() - t0
    cls, grid = confusion_grid(reps)
    run.text("confusion.csv", reports.grid_csv(cls, cls, grid, "held_out\\class"))

    parts = {str(c): tr.select_classes([c], id=str(c)) for c in classes}
    tests = [te.select_classes([c], id=str(c)) for c in classes]
    t0 = time.perf_counter()
    fleet = pretrain_fleet(parts, train_config(run.cfg), workers=run.cfg["workers"])
    run.timings["pretrain_wall_seconds"] = time.perf_counter() - t0
    _save_fleet(run, fleet)
    matrix = delta_matrix(fleet, tests, workers=run.cfg["workers"])
    if run.cfg["normalize"]:
        matrix = normalize_deltas(matrix, parts)
    run.text("deltas.csv", matrix.to_csv())
    conf = _pair_scores(cls, grid, higher_is_closer=True)
    simex = _pair_scores(cls, matrix.values, higher_is_closer=False)
    r_conf, r_simex = rank_of(conf), rank_of(simex)
    rho = spearman_rho(r_conf, r_simex) if len(conf) > 1 else None
    run.json("confusion.json", {
        "classes": cls, "reports": [r.as_dict() for r in reps], "loss": matrix.loss,
        "pair_scores": {"confusion": conf, "simex": simex},
        "pair_order": {"confusion": list(r_conf.ids), "simex": list(r_simex.ids)}, "spearman_rho": rho})
    lines = ["class pairs, most similar first",
             "  confusion: " + ", ".join(r_conf.ids),
             "  simex:     " + ", ".join(r_simex.ids)]
    if rho is not None:
        lines.append(f"  spearman rho = {_fmt(rho)}")
    run.text("summary.txt", "\n".join(lines) + "\n")


def cmd_bench(run: Run):
    from .baselines import evaluate_accuracy, train_classifier
    from .bench import TL_CONFIGS, bench_pairwise
    from .engine import train_member

    b = run.cfg.get("bench")
    if b is None:
        raise ConfigError("bench: config needs a 'bench' section")
    ref = run.dataset(b["reference"])
    tgt = run.dataset(b["target"])
    ref_tr, ref_te = split(ref, run.spec)
    tgt_tr, tgt_te = split(tgt, run.spec)
    t0 = time.perf_counter()
    member, _ = train_member(ref.id, ref_tr, train_config(run.cfg))
    t1 = time.perf_counter()
    base = train_classifier(ref_tr, train_config(run.cfg, "classifier"))
    t2 = time.perf_counter()
    base_acc = evaluate_accuracy(base, ref_te)
    rep = bench_pairwise(member, base, tgt_tr, tgt_te, configs=b.get("configs", TL_CONFIGS),
                         repeats=b["repeats"], warmup=b["warmup"], max_epochs=b["max_epochs"],
                         patience=b["patience"], seed=run.cfg["seed"],
                         one_time={"fleet_member_pretrain": t1 - t0, "base_classifier_pretrain": t2 - t1},
                         head_init=b["head_init"])
    d = rep.as_dict()
    d["base_accuracy"] = base_acc
    run.timings["bench"] = d
    lines = [f"SimEx: {_fmt(rep.simex.mean)} s (+/- {_fmt(rep.simex.std)}) for {rep.n_unknown} samples"]
    for name, t in rep.transfer.items():
        lines.append(f"  {name}: {_fmt(t.mean)} s (+/- {_fmt(t.std)}), epochs {t.epochs}, "
                     f"speedup {rep.speedups[name]:.2f}x")
    lines.append(f"fastest transfer {rep.fastest_transfer}: speedup {rep.min_speedup:.2f}x")
    # timings are not deterministic, so the summary goes next to timings.json only
    reports.write_text(run.out / "bench_summary.txt", "\n".join(lines) + "\n")
    run.outputs.append("bench_summary.txt")


def cmd_synth(run: Run):
    descs = run.cfg.get("datasets")
    if not descs:
        raise ConfigError("synth: config needs a non-empty 'datasets' list")
    lines = []
    for desc in descs:
        ds = run.dataset(desc)
        stem = _safe(ds.id)
        img, lab = f"{stem}-images-idx3-ubyte", f"{stem}-labels-idx1-ubyte"
        write_idx(ds, run.path(img), run.path(lab) if ds.labels is not None else None)
        lines.append(f"{ds.id}: {len(ds)} samples, classes {ds.classes}")
    run.text("summary.txt", "\n".join(lines) + "\n")


HELP = {"pretrain": "train one autoencoder per reference and save checkpoints",
        "compare": "Delta matrix of unknown sets against the fleet, with orderings",
        "pair": "Delta of one target set through a member trained on one source set",
        "confusion": "class-pair similarity from SimEx and from classifier confusion",
        "bench": "latency of SimEx versus transfer retraining",
        "synth": "write the configured datasets as IDX files"}

COMMANDS = {"pretrain": cmd_pretrain, "compare": cmd_compare, "pair": cmd_pair,
            "confusion": cmd_confusion, "bench": cmd_bench, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simex", description="Dataset and class similarity from autoencoder reconstruction error.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--output", help="override output_dir")
        sp.add_argument("--loss", choices=["mse", "issim"], help="override the fleet loss")
        sp.add_argument("--workers", type=int, help="parallel fleet members / unknown sets")
        sp.add_argument("--repeats", type=int, help="override bench repeats")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    for flag in ("workers", "repeats"):
        v = getattr(args, flag)
        if v is not None and v < 1:
            print(f"simex: error: --{flag} must be >= 1", file=sys.stderr)
            return EXIT_USAGE
    overrides = {"seed": args.seed, "output_dir": args.output, "loss": args.loss,
                 "workers": args.workers, "repeats": args.repeats}
    try:
        cfg, base_dir = load_config(args.config, overrides)
        run = Run(args.command, cfg, base_dir)
        COMMANDS[args.command](run)
        run.finish()
    except (ConfigError, IdxError, CheckpointError) as e:
        print(f"simex: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FleetError, TrainingError, FloatingPointError, MemoryError, OSError) as e:
        print(f"simex: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as e:
        # bad data reaching library code (missing classes, too few samples, ...)
        print(f"simex: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
