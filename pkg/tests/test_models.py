from __future__ import annotations

import struct

import numpy as np
import pytest

from simex import checkpoint, synth
from simex.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from simex.layers import Conv2D, ShapeError
from simex.models import (TrainConfig, TrainingError, bottleneck_embed, build_autoencoder, build_classifier,
                          reconstruct, train)
from simex.rng import stream

AE_PARAMS = 101649  # frozen regression constant for the 28x28 autoencoder


def test_autoencoder_shapes():
    ae = build_autoencoder()
    x = stream(0, "x").random((3, 28, 28), dtype=np.float32)
    assert ae.reconstruct(x).shape == (3, 28, 28)
    assert ae.embed(x).shape == (3, 120)
    assert ae.embedding_width == 120
    assert ae.param_count() == AE_PARAMS


@pytest.mark.parametrize("h", [16, 20, 32])
def test_other_square_sizes(h):
    ae = build_autoencoder((h, h))
    assert ae.reconstruct(np.zeros((1, h, h), np.float32)).shape == (1, h, h)


@pytest.mark.parametrize("shape", [(28, 30), (12, 12), (18, 18), (28,)])
def test_unsupported_shapes(shape):
    with pytest.raises(ShapeError):
        build_autoencoder(shape)


def test_classifier_outputs_and_shared_trunk():
    x = stream(1, "x").random((5, 28, 28), dtype=np.float32)
    for nc in (9, 10):
        clf = build_classifier(num_classes=nc)
        p = clf.predict_proba(x)
        assert p.shape == (5, nc)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
        assert clf.num_classes == nc
    ae = build_autoencoder()
    clf = build_classifier()
    convs = lambda layers: [(l.in_channels, l.out_channels, l.padding) for l in layers if isinstance(l, Conv2D)]
    assert convs(clf.trunk) == convs(ae.layers[:clf.trunk_end])


def test_reconstruct_range():
    ae = build_autoencoder(seed=3)
    out = reconstruct(ae, stream(2, "x").random((32, 28, 28), dtype=np.float32))
    assert out.min() > 0 and out.max() < 1


@pytest.mark.parametrize("precision,ulps", [("float32", 2 ** -23), ("float64", 2 ** -52)])
def test_batch_independence(precision, ulps):
    # BLAS picks its summation order by batch size, so rows agree to a few ulp, not bitwise
    ae = build_autoencoder(seed=3, precision=precision)
    x = stream(2, "x").random((32, 28, 28)).astype(precision)
    full = reconstruct(ae, x)
    for i in (0, 17, 31):
        np.testing.assert_allclose(reconstruct(ae, x[i:i + 1])[0], full[i], rtol=0, atol=4 * ulps)


def test_inference_matches_training_forward():
    # inference fuses upsample + conv; it must agree with the layer-by-layer forward
    ae = build_autoencoder(seed=4, precision="float64")
    x = stream(3, "x").random((4, 28, 28))
    out, _ = ae.forward(x)
    np.testing.assert_allclose(reconstruct(ae, x), out, rtol=0, atol=1e-13)


def test_embedding_matches_encoder_half():
    ae = build_autoencoder(seed=4)
    x = stream(3, "x").random((4, 28, 28), dtype=np.float32)
    np.testing.assert_array_equal(bottleneck_embed(ae, x), ae.run(x, stop=ae.bottleneck + 1))
    np.testing.assert_array_equal(bottleneck_embed(ae, x), bottleneck_embed(ae, x.copy()))


def test_zero_epochs_keeps_init(glyph_set):
    ae = build_autoencoder(seed=5)
    before = [p.copy() for p in ae.params]
    res = train(ae, glyph_set, TrainConfig(epochs=0))
    assert res.history == []
    assert all(a.tobytes() == b.tobytes() for a, b in zip(before, ae.params))


def test_training_is_deterministic(glyph_set):
    cfg = TrainConfig(epochs=2, lr=1e-3, seed=9, batch_size=16)
    runs = [train(build_autoencoder(seed=1), glyph_set, cfg) for _ in range(2)]
    assert runs[0].history == runs[1].history
    assert all(a.tobytes() == b.tobytes() for a, b in zip(runs[0].model.params, runs[1].model.params))
    assert runs[0].seconds > 0


@pytest.mark.parametrize("loss", ["mse", "issim"])
def test_training_reduces_loss(loss):
    data = synth.glyphs(20, seed=2)  # 200 samples
    res = train(build_autoencoder(seed=0), data, TrainConfig(epochs=30, lr=2e-4, loss=loss, seed=0))
    assert len(res.history) == 30
    assert res.history[-1] < res.history[0]


def test_train_errors():
    ae = build_autoencoder()
    with pytest.raises(ValueError, match="empty"):
        train(ae, np.zeros((0, 28, 28), np.float32), TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="labels"):
        train(build_classifier(), np.zeros((4, 28, 28), np.float32), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    bad = build_autoencoder()
    bad.params[-1][...] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        train(bad, np.full((4, 28, 28), 0.5, np.float32), TrainConfig(epochs=1))


# ----------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path, glyph_set):
    ae = build_autoencoder(seed=6)
    train(ae, glyph_set, TrainConfig(epochs=1, lr=1e-3, loss="issim", seed=6))
    ae.meta.update({"reference_id": "glyphs", "seed": 6})
    path = save_checkpoint(ae, tmp_path / "m.smxc")
    back = load_checkpoint(path)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(ae.params, back.params))
    assert back.meta["loss"] == "issim" and back.meta["reference_id"] == "glyphs" and back.meta["seed"] == 6
    np.testing.assert_array_equal(back.reconstruct(glyph_set.samples), ae.reconstruct(glyph_set.samples))
    assert checkpoint.to_bytes(back) == path.read_bytes()


def test_checkpoint_classifier_float64(tmp_path):
    clf = build_classifier(num_classes=9, seed=2, precision="float64")
    back = load_checkpoint(save_checkpoint(clf, tmp_path / "c.smxc"))
    assert back.dtype == np.float64 and back.trunk_end == clf.trunk_end
    assert all(a.tobytes() == b.tobytes() for a, b in zip(clf.params, back.params))


def test_checkpoint_integrity(tmp_path):
    blob = bytearray(checkpoint.to_bytes(build_autoencoder()))
    corrupt = bytearray(blob)
    corrupt[-100] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint.from_bytes(bytes(corrupt))
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint.from_bytes(bytes(blob[:10]))
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(bytes(blob[:-4]))
    wrong_version = bytearray(blob)
    struct.pack_into("<H", wrong_version, 4, 99)
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.from_bytes(bytes(wrong_version))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.from_bytes(b"XXXX" + bytes(blob[4:]))


def test_checkpoint_write_is_atomic(tmp_path):
    path = save_checkpoint(build_autoencoder(), tmp_path / "a.smxc")
    assert [p.name for p in tmp_path.iterdir()] == [path.name]
