"""Small parameterized building blocks bound to a ParamStore."""

from __future__ import annotations

import numpy as np

from vntraj.core import tensor as T
from vntraj.core.params import ParamStore


class Linear:
    def __init__(self, store: ParamStore, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.weight = store.glorot(f"{name}.weight", (fan_in, fan_out), rng)
        self.bias = store.zeros(f"{name}.bias", (fan_out,)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.gamma = store.ones(f"{name}.gamma", (dim,))
        self.beta = store.zeros(f"{name}.beta", (dim,))

    def __call__(self, x):
        return T.layer_norm_rows(x, self.gamma, self.beta)


class MLP:
    """Linear -> LayerNorm -> ReLU -> Linear."""

    def __init__(self, store: ParamStore, name: str, fan_in: int, hidden: int, fan_out: int,
                 rng: np.random.Generator):
        self.fc1 = Linear(store, f"{name}.fc1", fan_in, hidden, rng)
        self.norm = LayerNorm(store, f"{name}.norm", hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, fan_out, rng)

    def __call__(self, x):
        return self.fc2(T.relu(self.norm(self.fc1(x))))
