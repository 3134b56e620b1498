"""Autoencoder and LeNet-5 classifier definitions, plus the training loop.

Autoencoder for an HxW input (H == W, H % 4 == 0, H >= 16); numbers for 28x28::

    reshape 1x28x28
    conv 6@5x5 same -> relu -> maxpool2          6x14x14
    conv 16@5x5 valid -> relu -> maxpool2        16x5x5
    flatten -> dense 400->120 -> relu            bottleneck (embedding)
    dense 120->400 -> relu -> reshape 16x5x5
    upsample2 -> conv 6@5x5 full -> relu         6x14x14
    upsample2 -> conv 1@5x5 same -> sigmoid      1x28x28

The "full" convolution (padding k-1) is the exact shape mirror of the encoder's
valid convolution (10x10 -> 14x14), so the decoder needs no cropping.
"""
from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .layers import (Conv2D, Dense, Layer, MaxPool2, ReLU, Reshape, ShapeError, Sigmoid, Upsample2,
                     layer_from_dict, layer_to_dict, upsample_conv_forward)
from .losses import LossKind, loss_and_grad, softmax, softmax_cross_entropy
from .optim import make_optimizer
from .rng import stream

PRECISIONS = {"float32": np.float32, "float64": np.float64}
INFER_CHUNK = 256


class TrainingError(RuntimeError):
    pass


class Network:
    """A strict sequential chain of layers over per-sample ``input_shape``."""

    family = "network"

    def __init__(self, layers: list[Layer], input_shape, dtype=np.float32, meta: dict | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        self.meta = dict(meta or {})
        self.output_shape = self.shape_trace()[-1]

    def shape_trace(self):
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        return shapes

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def init_params(self, seed: int):
        rng = stream(seed, "init")
        for layer in self.layers:
            layer.init_params(rng)

    def _check_input(self, x):
        x = np.asarray(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.family}: expected batch of shape (N, {', '.join(map(str, self.input_shape))}), "
                             f"received {x.shape}")
        return x.astype(self.dtype, copy=False)

    def forward(self, x, start=0, stop=None):
        """Forward through ``layers[start:stop]`` keeping caches."""
        caches = []
        for layer in self.layers[start:stop]:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, grad, start=0):
        """Backward through ``layers[start:start + len(caches)]``.

        Returns the input gradient and per-layer parameter gradients.
        """
        layers = self.layers[start:start + len(caches)]
        grads: list[list[np.ndarray]] = [[] for _ in layers]
        for i in range(len(layers) - 1, -1, -1):
            grad, grads[i] = layers[i].backward(caches[i], grad)
        return grad, grads

    def run(self, x, stop=None, chunk=INFER_CHUNK):
        """Inference through ``layers[:stop]`` in fixed-size chunks, no caches kept."""
        x = self._check_input(x)
        outs = []
        for i in range(0, x.shape[0], chunk):
            outs.append(self._infer(x[i:i + chunk], self.layers[:stop]))
        if not outs:
            shape = self.shape_trace()[len(self.layers[:stop])]
            return np.zeros((0,) + tuple(shape), dtype=self.dtype)
        return np.concatenate(outs, axis=0)

    @staticmethod
    def _infer(h, layers):
        # upsample2 + conv pairs run as phase convolutions on the small input
        i = 0
        while i < len(layers):
            if (isinstance(layers[i], Upsample2) and i + 1 < len(layers)
                    and isinstance(layers[i + 1], Conv2D)):
                h = upsample_conv_forward(h, layers[i + 1])
                i += 2
                continue
            h, _ = layers[i].forward(h)
            i += 1
        return h

    def copy(self):
        return copy.deepcopy(self)

    def architecture(self) -> dict:
        return {"family": self.family, "input_shape": list(self.input_shape),
                "layers": [layer_to_dict(layer) for layer in self.layers]}


class AutoencoderModel(Network):
    family = "autoencoder"

    def __init__(self, layers, input_shape, bottleneck: int, dtype=np.float32, meta=None):
        super().__init__(layers, input_shape, dtype, meta)
        self.bottleneck = int(bottleneck)
        if self.output_shape != self.input_shape:
            raise ShapeError(f"autoencoder output {self.output_shape} does not match input {self.input_shape}")

    @property
    def embedding_width(self) -> int:
        return math.prod(self.shape_trace()[self.bottleneck + 1])

    def reconstruct(self, batch):
        return self.run(batch)

    def embed(self, batch):
        return self.run(batch, stop=self.bottleneck + 1)

    def architecture(self):
        d = super().architecture()
        d["bottleneck"] = self.bottleneck
        return d


class ClassifierModel(Network):
    family = "classifier"

    def __init__(self, layers, input_shape, trunk_end: int, dtype=np.float32, meta=None):
        super().__init__(layers, input_shape, dtype, meta)
        self.trunk_end = int(trunk_end)

    @property
    def num_classes(self) -> int:
        return self.output_shape[0]

    @property
    def trunk(self) -> list[Layer]:
        return self.layers[:self.trunk_end]

    @property
    def head(self) -> list[Layer]:
        return self.layers[self.trunk_end:]

    def predict_proba(self, batch):
        return softmax(self.run(batch))

    def predict(self, batch):
        return np.argmax(self.run(batch), axis=1)

    def architecture(self):
        d = super().architecture()
        d["trunk_end"] = self.trunk_end
        return d


def _trunk_dims(input_shape):
    if len(input_shape) != 2:
        raise ShapeError(f"expected a 2-D (H, W) sample shape, got {tuple(input_shape)}")
    h, w = input_shape
    if h != w or h < 16 or h % 4:
        raise ShapeError(f"unsupported input shape {tuple(input_shape)}: need H == W, H >= 16, H divisible by 4")
    q = (h // 2 - 4) // 2
    return h, q


def _encoder_trunk(h, dtype):
    return [
        Reshape((1, h, h)),
        Conv2D(1, 6, 5, "same", dtype=dtype), ReLU(), MaxPool2(),
        Conv2D(6, 16, 5, "valid", dtype=dtype), ReLU(), MaxPool2(),
        Reshape((-1,)),
    ]


def build_autoencoder(input_shape=(28, 28), seed: int = 0, precision: str = "float32") -> AutoencoderModel:
    dtype = PRECISIONS[precision]
    h, q = _trunk_dims(input_shape)
    flat = 16 * q * q
    layers = _encoder_trunk(h, dtype) + [
        Dense(flat, 120, dtype=dtype), ReLU(),
        Dense(120, flat, dtype=dtype), ReLU(),
        Reshape((16, q, q)),
        Upsample2(), Conv2D(16, 6, 5, "full", dtype=dtype), ReLU(),
        Upsample2(), Conv2D(6, 1, 5, "same", dtype=dtype), Sigmoid(),
        Reshape((h, h)),
    ]
    model = AutoencoderModel(layers, (h, h), bottleneck=9, dtype=dtype, meta={"init_seed": int(seed)})
    model.init_params(seed)
    return model


def build_classifier(input_shape=(28, 28), num_classes: int = 10, seed: int = 0,
                     precision: str = "float32") -> ClassifierModel:
    if num_classes < 2:
        raise ValueError(f"num_classes must be at least 2, got {num_classes}")
    dtype = PRECISIONS[precision]
    h, q = _trunk_dims(input_shape)
    trunk = _encoder_trunk(h, dtype)
    layers = trunk + [
        Dense(16 * q * q, 120, dtype=dtype), ReLU(),
        Dense(120, 84, dtype=dtype), ReLU(),
        Dense(84, num_classes, dtype=dtype),
    ]
    model = ClassifierModel(layers, (h, h), trunk_end=len(trunk), dtype=dtype, meta={"init_seed": int(seed)})
    model.init_params(seed)
    return model


def model_from_architecture(arch: dict, precision="float32") -> Network:
    dtype = PRECISIONS[precision]
    layers = [layer_from_dict(d, dtype) for d in arch["layers"]]
    shape = tuple(arch["input_shape"])
    if arch["family"] == "autoencoder":
        return AutoencoderModel(layers, shape, arch["bottleneck"], dtype)
    if arch["family"] == "classifier":
        return ClassifierModel(layers, shape, arch["trunk_end"], dtype)
    return Network(layers, shape, dtype)


# ------------------------------------------------------------------ training

@dataclass
class TrainConfig:
    optimizer: str = "rmsprop"
    lr: float | None = None
    loss: str = "mse"
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    shuffle: bool = True
    precision: str = "float32"
    optimizer_args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr is not None and not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        LossKind.coerce(self.loss)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainResult:
    model: Network
    history: list[float]
    seconds: float
    stopped_early: bool = False


class Trainer:
    """Mini-batch training state for one model; ``run_epoch`` can be called repeatedly."""

    def __init__(self, model: Network, samples, config: TrainConfig, labels=None, trainable_from: int = 0):
        if len(samples) == 0:
            raise ValueError("cannot train on an empty dataset")
        is_classifier = isinstance(model, ClassifierModel)
        if is_classifier and labels is None:
            raise ValueError("classifier training needs labels")
        self.model = model
        self.samples = model._check_input(samples)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        if self.labels is not None and self.labels.shape != (len(self.samples),):
            raise ValueError("labels must be one per sample")
        self.classifier = is_classifier
        self.config = config
        self.loss_kind = LossKind.coerce(config.loss)
        self.trainable_from = int(trainable_from)
        trainable = [p for layer in model.layers[self.trainable_from:] for p in layer.params]
        self.opt = make_optimizer(config.optimizer, trainable, lr=config.lr, **config.optimizer_args)
        self.rng = stream(config.seed, "shuffle")
        self.epoch = 0

    def _batch_loss(self, out, idx):
        if self.classifier:
            return softmax_cross_entropy(out, self.labels[idx])
        return loss_and_grad(self.samples[idx], out, self.loss_kind)

    def run_epoch(self) -> float:
        n = len(self.samples)
        order = self.rng.permutation(n) if self.config.shuffle else np.arange(n)
        total = 0.0
        start = self.trainable_from
        bs = self.config.batch_size
        for i in range(0, n, bs):
            idx = order[i:i + bs]
            h = self.samples[idx]
            if start:
                for layer in self.model.layers[:start]:
                    h, _ = layer.forward(h)
            out, caches = self.model.forward(h, start=start)
            values, grad = self._batch_loss(out, idx)
            batch_total = float(np.sum(values))
            if not math.isfinite(batch_total):
                raise TrainingError(f"non-finite loss at epoch {self.epoch + 1}, batch starting at {i}")
            total += batch_total
            _, grads = self.model.backward(caches, grad / len(idx), start=start)
            self.opt.step([g for layer_grads in grads for g in layer_grads])
        self.epoch += 1
        return total / n


def train(model: Network, dataset, config: TrainConfig, *, trainable_from: int = 0,
          epoch_callback: Callable[[int, Network, float], bool] | None = None) -> TrainResult:
    """Train ``model`` in place on ``dataset`` (a Dataset or an (N, H, W) array).

    ``epoch_callback(epoch, model, loss)`` returning True stops training early.
    """
    samples = getattr(dataset, "samples", dataset)
    labels = getattr(dataset, "labels", None)
    trainer = Trainer(model, samples, config, labels=labels, trainable_from=trainable_from)
    history = []
    stopped = False
    t0 = time.perf_counter()
    for _ in range(config.epochs):
        history.append(trainer.run_epoch())
        if epoch_callback is not None and epoch_callback(trainer.epoch, model, history[-1]):
            stopped = True
            break
    seconds = time.perf_counter() - t0
    model.meta["epochs_trained"] = model.meta.get("epochs_trained", 0) + len(history)
    model.meta["loss"] = config.loss if not isinstance(model, ClassifierModel) else "xent"
    return TrainResult(model, history, seconds, stopped)


def reconstruct(model: AutoencoderModel, batch):
    return model.reconstruct(batch)


def bottleneck_embed(model: AutoencoderModel, batch):
    return model.embed(batch)
