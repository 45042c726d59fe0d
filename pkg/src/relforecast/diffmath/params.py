"""Parameter storage, layer wrappers, Adam and the step scheduler."""

from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype


class ParamStore:
    """Named parameters plus Adam moments; iteration is sorted by name."""

    def __init__(self, seed: int = 0, dtype=None):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.dtype = np.dtype(dtype or default_dtype())
        self.rng = np.random.default_rng(seed)

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return sorted(self.params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self.params[name]

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def uniform(self, name: str, shape: Sequence[int], fan_in: int) -> Tensor:
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return self.add(name, self.rng.uniform(-bound, bound, size=tuple(shape)))

    def zeros(self, name: str, shape: Sequence[int]) -> Tensor:
        return self.add(name, np.zeros(tuple(shape)))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_values(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "ParamStore":
        """Copy with every parameter cast (moments dropped)."""
        out = ParamStore(dtype=dtype)
        for name, p in self.items():
            out.add(name, p.data.astype(dtype))
        return out


class Linear:
    def __init__(self, store: ParamStore, name: str, din: int, dout: int, bias: bool = True):
        self.din, self.dout = din, dout
        self.weight = store.uniform(f"{name}.w", (din, dout), din)
        self.bias = store.uniform(f"{name}.b", (dout,), din) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class MLP:
    """Stack of linear layers; ReLU between layers, none after the last."""

    def __init__(self, store: ParamStore, name: str, din: int, widths: Sequence[int],
                 activations: Sequence[str] | None = None):
        if not widths:
            raise ValueError("MLP needs at least one layer")
        if activations is None:
            activations = ["relu"] * (len(widths) - 1) + ["none"]
        if len(activations) != len(widths):
            raise ValueError("one activation per layer")
        self.layers = []
        prev = din
        for i, (w, act) in enumerate(zip(widths, activations)):
            if act not in ops.ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            lin = Linear(store, f"{name}.{i}", prev, w)
            self.layers.append((lin.weight, lin.bias, act))
            prev = w
        self.dout = prev

    def __call__(self, x: Tensor) -> Tensor:
        return ops.mlp(x, self.layers)


class Conv1dResidual:
    def __init__(self, store: ParamStore, name: str, din: int, dout: int, width: int = 3,
                 activation: str = "relu"):
        self.kernel = store.uniform(f"{name}.k", (width, din, dout), width * din)
        self.bias = store.uniform(f"{name}.b", (dout,), width * din)
        self.skip = None if din == dout else store.uniform(f"{name}.skip", (din, dout), din)
        self.activation = activation

    def __call__(self, seq: Tensor) -> Tensor:
        return ops.conv1d_residual(seq, self.kernel, self.bias, self.skip, self.activation)


class GRUCell:
    def __init__(self, store: ParamStore, name: str, din: int, hidden: int):
        self.hidden = hidden
        self.w_input = store.uniform(f"{name}.wx", (din, 3 * hidden), hidden)
        self.w_hidden = store.uniform(f"{name}.wh", (hidden, 3 * hidden), hidden)
        self.b_input = store.uniform(f"{name}.bx", (3 * hidden,), hidden)
        self.b_hidden = store.uniform(f"{name}.bh", (3 * hidden,), hidden)

    def __call__(self, hidden: Tensor, inp: Tensor) -> Tensor:
        return ops.gru_cell(hidden, inp, self.w_input, self.w_hidden, self.b_input, self.b_hidden)


class StepLR:
    """Multiply the learning rate by ``gamma`` every ``step_size`` epochs."""

    def __init__(self, base_lr: float, step_size: int = 15, gamma: float = 0.25):
        if step_size < 1:
            raise ValueError("step_size must be >= 1")
        self.base_lr = base_lr
        self.step_size = step_size
        self.gamma = gamma

    def lr_at(self, epoch: int) -> float:
        return self.base_lr * self.gamma ** (epoch // self.step_size)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update over every parameter that received a gradient."""
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.grad
        if g is None:
            continue
        m = store.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        v = store.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store.m[name] = m.astype(p.dtype, copy=False)
        store.v[name] = v.astype(p.dtype, copy=False)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
