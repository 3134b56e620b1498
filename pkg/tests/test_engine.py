from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simex import synth
from simex.data import Dataset, SplitSpec, split
from simex.engine import (DeltaMatrix, Fleet, FleetError, convergence_checkpoint, delta_matrix, evaluate_delta,
                          member_seed, normalize_deltas, order_by_similarity, pretrain_fleet,
                          train_with_ordering_convergence)
from simex.models import TrainConfig, build_autoencoder


@pytest.fixture(scope="module")
def refs():
    # three well-separated glyph classes: hbar, vbar, ring
    ds = synth.glyphs(30, seed=11, classes=[0, 1, 4])
    tr, te = split(ds, SplitSpec(seed=0))
    return ({f"c{c}": tr.select_classes([c], id=f"c{c}") for c in (0, 1, 4)},
            {f"c{c}": te.select_classes([c], id=f"c{c}") for c in (0, 1, 4)})


@pytest.fixture(scope="module")
def fleet(refs):
    return pretrain_fleet(refs[0], TrainConfig(epochs=15, lr=1e-3, seed=0))


def test_fleet_members_and_metadata(fleet, refs):
    assert fleet.ids == ["c0", "c1", "c4"]
    for rid in fleet.ids:
        m = fleet[rid]
        assert m.meta["reference_id"] == rid and m.meta["loss"] == "mse"
        assert m.meta["seed"] == member_seed(0, rid)
    assert len({member_seed(0, r) for r in fleet.ids}) == 3


def test_self_similarity_diagonal(fleet, refs):
    m = delta_matrix(fleet, list(refs[1].values()))
    assert m.values.shape == (3, 3)
    assert [int(np.argmin(row)) for row in m.values] == [0, 1, 2]


def test_parallel_equals_serial(refs, fleet):
    par = pretrain_fleet(refs[0], TrainConfig(epochs=15, lr=1e-3, seed=0), workers=3)
    for rid in fleet.ids:
        assert all(a.tobytes() == b.tobytes() for a, b in zip(par[rid].params, fleet[rid].params))
    tests = list(refs[1].values())
    assert delta_matrix(fleet, tests, workers=3).values.tobytes() == delta_matrix(fleet, tests).values.tobytes()


def test_fleet_of_one_and_one_by_one_grid(refs):
    one = pretrain_fleet(refs[0]["c0"], TrainConfig(epochs=1, lr=1e-3))
    assert len(one) == 1
    m = delta_matrix(one, refs[0]["c0"])
    assert m.values.shape == (1, 1)
    assert m.values[0, 0] == evaluate_delta(one["c0"], refs[0]["c0"]).value


def test_fleet_errors(refs):
    with pytest.raises(FleetError, match="at least one"):
        pretrain_fleet([], TrainConfig(epochs=1))
    with pytest.raises(FleetError, match="empty"):
        pretrain_fleet({"e": Dataset("e", np.zeros((0, 28, 28)))}, TrainConfig(epochs=1))
    with pytest.raises(FleetError, match="duplicate"):
        pretrain_fleet([refs[0]["c0"], refs[0]["c0"]], TrainConfig(epochs=1))
    bad = Dataset("bad", np.full((4, 28, 28), 0.5))
    with pytest.raises(FleetError, match="'bad'"), np.errstate(all="ignore"):
        pretrain_fleet(bad, TrainConfig(epochs=2, lr=1e300))
    with pytest.raises(FleetError, match="architecture"):
        Fleet({"a": build_autoencoder((28, 28)), "b": build_autoencoder((32, 32))}, TrainConfig(), "mse")


def test_evaluate_delta_contract(fleet, refs):
    x = refs[1]["c1"]
    res = evaluate_delta(fleet["c1"], x)
    assert res.loss == "mse" and res.per_sample.shape == (len(x),)
    assert res.value == pytest.approx(float(np.mean(res.per_sample)), rel=1e-15)
    doubled = Dataset("dd", np.concatenate([x.samples, x.samples]))
    assert evaluate_delta(fleet["c1"], doubled).value == res.value
    p = res.percentiles()
    assert p["p5"] <= p["p50"] <= p["p95"]
    with pytest.raises(ValueError, match="mismatch"):
        evaluate_delta(fleet["c1"], x, "issim")
    with pytest.raises(ValueError, match="empty"):
        evaluate_delta(fleet["c1"], np.zeros((0, 28, 28), np.float32))


def test_delta_matrix_exports_round_trip(fleet, refs):
    m = delta_matrix(fleet, list(refs[1].values()))
    back = DeltaMatrix.from_json(m.to_json())
    assert back.values.tobytes() == m.values.tobytes() and back.rows == m.rows and back.cols == m.cols
    lines = m.to_csv().splitlines()
    assert lines[0] == "unknown\\reference,c0,c1,c4"
    assert [float(v) for v in lines[1].split(",")[1:]] == m.values[0].tolist()
    with pytest.raises(ValueError):
        DeltaMatrix(["a"], ["b"], [[-1.0]], "mse")
    with pytest.raises(ValueError):
        DeltaMatrix(["a"], ["b"], [[math.nan]], "mse")
    with pytest.raises(ValueError):
        DeltaMatrix(["a"], ["b", "c"], [[1.0]], "mse")


def test_ordering_examples():
    o = order_by_similarity({"E": 0.3, "M": 0.1, "R": 0.2, "F": 0.4, "B": 0.5})
    assert o.ids == ("M", "R", "E", "F", "B")
    assert list(o.values) == sorted(o.values)
    assert order_by_similarity({"x": 1.0}).ids == ("x",)
    assert order_by_similarity({"b": 1.0, "a": 1.0, "c": 0.5}).ids == ("c", "a", "b")
    with pytest.raises(ValueError):
        order_by_similarity({"a": math.inf})
    with pytest.raises(ValueError):
        order_by_similarity({})


def test_normalize_deltas():
    ref = Dataset("r", np.full((3, 2, 2), 1.0))  # each sample has L2 norm 2
    m = DeltaMatrix(["u"], ["r"], [[0.5]], "mse")
    n = normalize_deltas(m, {"r": ref})
    assert n.values[0, 0] == 0.25 and n.normalized and n.norms == {"r": 2.0}
    with pytest.raises(ValueError, match="zero"):
        normalize_deltas(m, {"r": Dataset("r", np.zeros((2, 2, 2)))})
    with pytest.raises(KeyError):
        normalize_deltas(m, {})


@settings(max_examples=40, deadline=None)
@given(vals=st.lists(st.floats(0, 10, allow_nan=False), min_size=4, max_size=4),
       scale=st.floats(0.1, 10))
def test_normalization_preserves_column_order(vals, scale):
    m = DeltaMatrix(["a", "b", "c", "d"], ["r"], np.array(vals)[:, None], "mse")
    ref = Dataset("r", np.full((2, 2, 2), min(scale, 10) / 10))
    n = normalize_deltas(m, {"r": ref})
    assert order_by_similarity(n.column("r")).ids == order_by_similarity(m.column("r")).ids


def test_convergence_rule_traces():
    cps = [3, 5, 7, 10, 25, 50, 100]
    a, b = ("x", "y"), ("y", "x")
    assert convergence_checkpoint([a, b, a, b, b, b, b], cps, 3) == 50
    assert convergence_checkpoint([a] * 7, cps, 3) == 7
    assert convergence_checkpoint([a, b] * 3 + [a], cps, 3) is None
    with pytest.raises(ValueError):
        convergence_checkpoint([a], [3], 1)


def test_train_with_ordering_convergence_small():
    clean = synth.glyphs(10, seed=1, classes=[0, 1, 2])
    probes = {f"s{s}": synth.noisy(synth.glyphs(4, seed=2, classes=[0, 1, 2]), s, seed=3, id=f"s{s}")
              for s in (0.0, 0.3)}
    res = train_with_ordering_convergence(clean, probes, TrainConfig(lr=1e-3, seed=0), checkpoint_epochs=(1, 2, 3, 4),
                                          stability_window=2, final_ordering=("s0.0", "s0.3"))
    assert res.converged and res.epoch == res.epochs_trained
    assert list(res.orderings) == [e for e in (1, 2, 3, 4) if e <= res.epoch]
    assert all(v in (-1.0, 1.0) for v in res.rho_trace.values())
    with pytest.raises(ValueError):
        train_with_ordering_convergence(clean, probes, TrainConfig(), checkpoint_epochs=(3, 2))
