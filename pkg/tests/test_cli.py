from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from simex import reports
from simex.bench import BenchReport, Timing, bench_kernels, bench_pairwise
from simex.cli import main
from simex.config import ConfigError, load_config, resolve
from simex.data import load_idx
from simex.engine import DeltaMatrix
from simex.models import build_autoencoder, build_classifier

GLYPHS = lambda n, classes, **kw: {"kind": "glyphs", "n_per_class": n, "classes": classes, **kw}


def _config(tmp_path, **extra):
    cfg = {
        "seed": 3, "output_dir": str(tmp_path / "out"),
        "train": {"epochs": 2, "lr": 1e-3},
        "references": [{"id": "bars", "synth": GLYPHS(6, [0, 1])}, {"id": "rings", "synth": GLYPHS(6, [4])}],
        "unknowns": [{"id": "noisy-bars", "synth": {"kind": "noisy", "sigma": 0.2,
                                                    "base": {"id": "b", "synth": GLYPHS(6, [0, 1], seed=9)}}}],
    }
    cfg.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def _reports(out: Path) -> dict:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.name not in ("timings.json", "bench_summary.txt")}


# ----------------------------------------------------------- config

def test_schema_errors_name_field_paths():
    with pytest.raises(ConfigError) as e:
        resolve({"seed": -1, "train": {"optimizer": "lbfgs"}, "references": [{"id": "x"}]})
    msg = str(e.value)
    assert "seed:" in msg and "train/optimizer:" in msg and "references/0:" in msg


def test_defaults_and_overrides(tmp_path):
    cfg, base = load_config(_config(tmp_path), {"seed": 8, "loss": "issim", "workers": None})
    assert cfg["seed"] == 8 and cfg["loss"] == "issim" and cfg["workers"] == 1
    assert cfg["evaluate_on"] == "train" and cfg["split"]["seed"] == 8
    assert base == tmp_path.resolve()
    with pytest.raises(ConfigError, match="bench"):
        load_config(_config(tmp_path), {"repeats": 3})


def test_bad_json_and_missing_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.json")


# -------------------------------------------------------------- CLI

def test_compare_outputs_and_byte_identical_rerun(tmp_path):
    cfg = _config(tmp_path, gallery=2)
    assert main(["compare", str(cfg)]) == 0
    out = tmp_path / "out"
    for name in ("deltas.csv", "deltas.json", "orderings.json", "summary.txt", "manifest.json", "timings.json",
                 "fleet/bars.smxc", "fleet/index.json", "gallery/rings/recon_001.pgm"):
        assert (out / name).exists(), name
    m = DeltaMatrix.from_json((out / "deltas.json").read_text())
    assert m.rows == ["noisy-bars"] and m.cols == ["bars", "rings"]
    order = json.loads((out / "orderings.json").read_text())["orderings"]["noisy-bars"]["order"]
    assert order == ["bars", "rings"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_sha256"] == reports.config_hash(man["config"]) and man["seeds"]["seed"] == 3
    assert {"simex", "numpy", "numba", "kernel_backend"} <= set(man["versions"])
    assert "deltas.csv" in man["outputs"]
    first = _reports(out)
    shutil.rmtree(out)
    assert main(["compare", str(cfg)]) == 0
    assert _reports(out) == first


def test_parallel_run_equals_serial(tmp_path):
    cfg = _config(tmp_path)
    assert main(["compare", str(cfg), "--output", str(tmp_path / "s")]) == 0
    assert main(["compare", str(cfg), "--output", str(tmp_path / "p"), "--workers", "2"]) == 0
    s, p = _reports(tmp_path / "s"), _reports(tmp_path / "p")
    s.pop("manifest.json"), p.pop("manifest.json")  # records the worker count
    assert s == p


def test_pretrain_then_compare_from_fleet_dir(tmp_path):
    cfg = _config(tmp_path)
    assert main(["pretrain", str(cfg), "--output", str(tmp_path / "fleet-run")]) == 0
    reuse = _config(tmp_path, fleet_dir=str(tmp_path / "fleet-run" / "fleet"))
    assert main(["compare", str(reuse), "--output", str(tmp_path / "reuse")]) == 0
    assert main(["compare", str(cfg), "--output", str(tmp_path / "fresh")]) == 0
    a = (tmp_path / "reuse" / "deltas.json").read_bytes()
    assert a == (tmp_path / "fresh" / "deltas.json").read_bytes()


def test_pair_and_synth(tmp_path):
    cfg = _config(tmp_path, source={"id": "src", "synth": GLYPHS(6, [0])},
                  target={"id": "tgt", "synth": GLYPHS(6, [0, 4], seed=2)},
                  datasets=[{"id": "tiny", "synth": GLYPHS(3, [2, 5]), "relabel": True, "classes": [2, 5]}])
    assert main(["pair", str(cfg), "--output", str(tmp_path / "pair")]) == 0
    pair = json.loads((tmp_path / "pair" / "pair.json").read_text())
    assert pair["source"] == "src" and pair["delta"] > 0 and pair["loss"] == "mse"
    assert main(["synth", str(cfg), "--output", str(tmp_path / "syn")]) == 0
    ds = load_idx(tmp_path / "syn" / "tiny-images-idx3-ubyte", tmp_path / "syn" / "tiny-labels-idx1-ubyte")
    assert len(ds) == 6 and ds.classes == [0, 1]


def test_confusion_command(tmp_path):
    cfg = _config(tmp_path, classifier={"epochs": 1}, confusion={"dataset": {"id": "g", "synth": GLYPHS(8, [0, 1, 4])}})
    assert main(["confusion", str(cfg), "--loss", "issim"]) == 0
    rep = json.loads((tmp_path / "out" / "confusion.json").read_text())
    assert rep["loss"] == "issim" and len(rep["pair_order"]["simex"]) == 3
    grid = (tmp_path / "out" / "confusion.csv").read_text().splitlines()
    assert grid[0] == "held_out\\class,0,1,4" and grid[1].startswith("0,,")


def test_bench_command(tmp_path):
    bench = {"reference": {"id": "g", "synth": GLYPHS(6, [0, 1, 2])},
             "target": {"id": "t", "synth": GLYPHS(6, [0, 1, 2], seed=5)},
             "max_epochs": 2, "warmup": 0, "configs": {"TL-1": {"optimizer": "rmsprop", "lr": 1e-3}}}
    cfg = _config(tmp_path, bench=bench, classifier={"epochs": 1})
    assert main(["bench", str(cfg), "--repeats", "2"]) == 0
    t = json.loads((tmp_path / "out" / "timings.json").read_text())["bench"]
    assert len(t["simex"]["samples"]) == 2 and len(t["transfer"]["TL-1"]["samples"]) == 2
    assert set(t["one_time_seconds"]) == {"fleet_member_pretrain", "base_classifier_pretrain"}
    assert (tmp_path / "out" / "bench_summary.txt").exists()


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate", "x.json"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1
    assert main(["compare", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": "zero"}))
    assert main(["compare", str(bad)]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["compare", str(_config(tmp_path)), "--workers", "0"]) == 1
    noidx = _config(tmp_path, references=[{"id": "r", "idx": {"images": "nope.idx"}}])
    assert main(["compare", str(noidx)]) == 2
    diverge = _config(tmp_path, train={"epochs": 3, "lr": 1e300})
    with np.errstate(all="ignore"):
        assert main(["pretrain", str(diverge)]) == 3


# ------------------------------------------------------------ reports

def test_pgm_gallery(tmp_path):
    ae = build_autoencoder(seed=1)
    x = np.full((2, 28, 28), 0.5, np.float32)
    files = reports.emit_reconstruction_gallery(ae, x, tmp_path / "g")
    assert [f.name for f in files] == ["input_000.pgm", "recon_000.pgm", "input_001.pgm", "recon_001.pgm"]
    blob = files[0].read_bytes()
    assert blob.startswith(b"P5 28 28 255\n") and len(blob) == len(b"P5 28 28 255\n") + 784
    assert np.all(reports.read_pgm(files[0]) == 128)
    np.testing.assert_array_equal(reports.read_pgm(files[1]), np.floor(ae.reconstruct(x)[0] * 255.0 + 0.5))


def test_json_dumps_is_canonical():
    a = reports.dumps({"b": np.float64(1.5), "a": np.arange(2)})
    assert a == '{\n  "a": [\n    0,\n    1\n  ],\n  "b": 1.5\n}\n'
    with pytest.raises(ValueError):
        reports.dumps({"x": float("nan")})


def test_grid_csv_leaves_nan_empty():
    assert reports.grid_csv(["a"], ["a", "b"], [[np.nan, 0.25]]) == "row\\col,a,b\na,,0.25\n"


# -------------------------------------------------------------- bench

def test_timing_and_report_math():
    with pytest.raises(ValueError):
        Timing([])
    with pytest.raises(ValueError):
        Timing([0.1, 0.0])
    t = Timing([1.0, 2.0, 3.0])
    assert t.mean == 2.0 and t.std == 1.0 and t.as_dict()["min"] == 1.0
    rep = BenchReport(Timing([0.5]), {"a": Timing([2.0]), "b": Timing([1.0])}, {}, 1, 10, "numpy")
    assert rep.speedups == {"a": 4.0, "b": 2.0} and rep.fastest_transfer == "b" and rep.min_speedup == 2.0


def test_bench_pairwise_requires_models():
    with pytest.raises(ValueError, match="pretrained"):
        bench_pairwise(None, build_classifier(), None, None)


def test_bench_kernels_shape():
    out = bench_kernels(batch=4, repeats=1)
    assert len(out) == 4
    for row in out.values():
        assert "numpy" in row and all(v > 0 for t in row.values() for v in t.values())
