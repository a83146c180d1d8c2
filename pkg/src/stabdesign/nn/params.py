"""Named parameter storage, initialization and the Adam update."""
from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from ..errors import BadScale, ShapeMismatch
from .tensor import Tensor, default_dtype


class ParameterStore:
    """Named trainable tensors plus first/second moment estimates.

    Buffers (``add_buffer``) are saved with the weights but never updated by
    the optimizer.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=default_dtype()), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def add_buffer(self, name: str, value) -> None:
        self.buffers[name] = np.array(value, dtype=default_dtype())

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def n_values(self) -> int:
        return int(np.sum([p.size for p in self.params.values()]))

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for k, p in self.params.items():
            t = Tensor(p.data.copy(), requires_grad=True, name=k, dtype=p.data.dtype)
            out.params[k] = t
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.buffers = {k: b.copy() for k, b in self.buffers.items()}
        out.step = self.step
        return out

    def load_values(self, other: "ParameterStore", prefix: str = "") -> None:
        """Copy parameter values (not moments) from ``other`` for names under ``prefix``."""
        for k, p in other.params.items():
            if not k.startswith(prefix):
                continue
            mine = self.params[k]
            if mine.shape != p.shape:
                raise ShapeMismatch(f"{k}: {mine.shape} vs {p.shape}")
            mine.data = p.data.copy()

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}


class Scope(Mapping):
    """Read-only view of a store restricted to names under a dotted prefix."""

    def __init__(self, store: ParameterStore, prefix: str):
        self.store = store
        self.prefix = prefix.rstrip(".") + "."

    def __getitem__(self, key: str) -> Tensor:
        return self.store.params[self.prefix + key]

    def __iter__(self):
        n = len(self.prefix)
        return (k[n:] for k in self.store.params if k.startswith(self.prefix))

    def __len__(self):
        return sum(1 for _ in self)

    def scope(self, sub: str) -> "Scope":
        return Scope(self.store, self.prefix + sub)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def adam_step(
    store: ParameterStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    lr_scale: Mapping[str, float] | None = None,
) -> ParameterStore:
    """Bias-corrected Adam update, in place. ``lr_scale`` maps name prefixes to
    learning-rate multipliers (first matching prefix wins)."""
    unknown = set(grads) - set(store.params)
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {sorted(unknown)}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = store.params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        scale = 1.0
        if lr_scale:
            for prefix, s in lr_scale.items():
                if name.startswith(prefix):
                    scale = s
                    break
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr * scale) * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)
    return store


def fine_tune(
    store: ParameterStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    lr_scale: float,
    encoder_prefix: str = "encoder.",
) -> ParameterStore:
    """Adam step where encoder parameters move at ``lr * lr_scale`` and task heads at ``lr``."""
    if not (0.0 < lr_scale <= 1.0):
        raise BadScale(f"lr_scale must be in (0, 1], got {lr_scale}")
    return adam_step(store, grads, lr, lr_scale={encoder_prefix: lr_scale})
