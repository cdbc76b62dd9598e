"""Parameter store, Adam, and the multi-step learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from vntraj.core.tensor import Tensor, backward as _backprop


class ParamStore:
    """Named float64 parameters with gradient slots and Adam moments."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def glorot(self, name: str, shape: tuple[int, ...], rng: np.random.Generator) -> Tensor:
        fan_in, fan_out = shape[-2], shape[-1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self._params.items():
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter {name!r} in checkpoint")
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"shape mismatch for {name!r}: {value.shape} vs {t.shape}")
            t.data = value.copy()

    def set_trainable(self, prefix: str, trainable: bool) -> None:
        for name in self.names(prefix):
            self._params[name].requires_grad = trainable

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def clear_grad(self) -> None:
        for t in self._params.values():
            t.grad = None


def backward(loss: Tensor, store: ParamStore) -> None:
    """Zero every gradient slot of ``store``, then backpropagate ``loss``.

    Parameters that the loss does not reach keep a zero gradient.
    """
    store.zero_grad()
    _backprop(loss)


def adam_step(store: ParamStore, lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8, only_trainable: bool = True) -> None:
    b1, b2 = betas
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in store.items():
        if only_trainable and not p.requires_grad:
            continue
        if p.grad is None:
            raise RuntimeError(f"adam_step before backward: {name!r} has no gradient")
        m = store._m.get(name)
        if m is None:
            m = store._m[name] = np.zeros_like(p.data)
            store._v[name] = np.zeros_like(p.data)
        v = store._v[name]
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass(frozen=True)
class LrSchedule:
    initial: float = 1e-3
    milestones: tuple[int, ...] = field(default=(6, 12))
    gamma: float = 0.3

    def __post_init__(self):
        ms = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing: {ms}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        object.__setattr__(self, "milestones", ms)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    n = sum(1 for m in schedule.milestones if m <= epoch)
    return schedule.initial * schedule.gamma ** n
