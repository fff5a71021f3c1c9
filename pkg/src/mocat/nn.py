"""Small numpy building blocks shared by the trainable components."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ContractError(RuntimeError):
    """A forward/backward or selector contract was violated."""


class DivergenceError(RuntimeError):
    """Numbers became non-finite during training."""


class Module:
    """Holds named float64 parameters and matching gradient accumulators.

    ``version`` increments whenever parameters change so that a backward pass
    can refuse a forward record computed against older values.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.version = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def bump(self) -> None:
        self.version += 1

    def check(self, cache_version: int) -> None:
        if cache_version != self.version:
            raise ContractError(
                f"{type(self).__name__}: forward record is stale "
                f"(recorded at version {cache_version}, parameters at {self.version})"
            )


def uniform(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray, axis: int = -1) -> np.ndarray:
    return p * (dp - np.sum(dp * p, axis=axis, keepdims=True))


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def layer_norm(y: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    mu = y.mean(axis=-1, keepdims=True)
    var = y.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (y - mu) * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dz: np.ndarray, gain: np.ndarray, cache):
    xhat, inv = cache
    dxhat = dz * gain
    dy = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    red = tuple(range(dz.ndim - 1))
    return dy, (dz * xhat).sum(axis=red), dz.sum(axis=red)


@dataclass
class Adam:
    """Adam over a flat ``name -> array`` mapping; updates arrays in place."""

    params: dict[str, np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}
