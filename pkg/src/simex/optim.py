"""First-order optimizers updating parameter arrays in place."""
from __future__ import annotations

import numpy as np

DEFAULTS = {
    "rmsprop": {"lr": 1e-3, "rho": 0.9, "eps": 1e-8},
    "adadelta": {"lr": 1.0, "rho": 0.95, "eps": 1e-6},
    "adam": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "sgd-momentum": {"lr": 1e-2, "momentum": 0.9},
}


class Optimizer:
    kind = ""

    def __init__(self, params, lr=None, **hyper):
        defaults = dict(DEFAULTS[self.kind])
        unknown = set(hyper) - set(defaults)
        if unknown:
            raise TypeError(f"{self.kind}: unknown hyperparameters {sorted(unknown)}")
        defaults.update(hyper)
        if lr is not None:
            defaults["lr"] = lr
        self.lr = float(defaults.pop("lr"))
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        self.hyper = defaults
        self.params = list(params)
        self.t = 0
        self.state = [self._init_state(p) for p in self.params]

    def _init_state(self, p):
        return {}

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"{self.kind}: non-finite gradient values")
        self.t += 1
        for p, g, s in zip(self.params, grads, self.state):
            self._update(p, g.astype(p.dtype, copy=False), s)

    def _update(self, p, g, s):
        raise NotImplementedError


class RMSprop(Optimizer):
    kind = "rmsprop"

    def _init_state(self, p):
        return {"sq": np.zeros_like(p)}

    def _update(self, p, g, s):
        rho, eps = self.hyper["rho"], self.hyper["eps"]
        s["sq"] *= rho
        s["sq"] += (1 - rho) * g * g
        p -= self.lr * g / np.sqrt(s["sq"] + eps)


class Adadelta(Optimizer):
    kind = "adadelta"

    def _init_state(self, p):
        return {"sq": np.zeros_like(p), "delta": np.zeros_like(p)}

    def _update(self, p, g, s):
        rho, eps = self.hyper["rho"], self.hyper["eps"]
        s["sq"] *= rho
        s["sq"] += (1 - rho) * g * g
        step = np.sqrt(s["delta"] + eps) / np.sqrt(s["sq"] + eps) * g
        s["delta"] *= rho
        s["delta"] += (1 - rho) * step * step
        p -= self.lr * step


class Adam(Optimizer):
    kind = "adam"

    def _init_state(self, p):
        return {"m": np.zeros_like(p), "v": np.zeros_like(p)}

    def _update(self, p, g, s):
        b1, b2, eps = self.hyper["beta1"], self.hyper["beta2"], self.hyper["eps"]
        s["m"] *= b1
        s["m"] += (1 - b1) * g
        s["v"] *= b2
        s["v"] += (1 - b2) * g * g
        mhat = s["m"] / (1 - b1 ** self.t)
        vhat = s["v"] / (1 - b2 ** self.t)
        p -= self.lr * mhat / (np.sqrt(vhat) + eps)


class SGDMomentum(Optimizer):
    kind = "sgd-momentum"

    def _init_state(self, p):
        return {"v": np.zeros_like(p)}

    def _update(self, p, g, s):
        s["v"] *= self.hyper["momentum"]
        s["v"] += g
        p -= self.lr * s["v"]


OPTIMIZERS = {cls.kind: cls for cls in (RMSprop, Adadelta, Adam, SGDMomentum)}


def make_optimizer(kind: str, params, lr=None, **hyper) -> Optimizer:
    try:
        cls = OPTIMIZERS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}") from None
    return cls(params, lr=lr, **hyper)


def optimizer_step(opt: Optimizer, grads):
    opt.step(grads)
    return opt.params
