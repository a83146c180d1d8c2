"""Layer functions over named parameters.

Each ``init_*`` registers parameters in a :class:`ParameterStore` under a
prefix; the matching forward function takes a mapping with the short names.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import HeadDivisibility, ShapeMismatch
from . import tensor as T
from .params import ParameterStore, glorot
from .tensor import Tensor

ACTIVATIONS = {"silu": T.silu, "relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid}


def init_dense(store: ParameterStore, prefix: str, d_in: int, d_out: int, rng) -> None:
    store.add(f"{prefix}.w", glorot(rng, d_in, d_out))
    store.add(f"{prefix}.b", np.zeros(d_out))


def dense(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    w = p["w"]
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"dense: input dim {x.shape[-1]} vs weight {w.shape}")
    return T.matmul(x, w) + p["b"]


def init_mlp(store: ParameterStore, prefix: str, sizes: list[int], rng) -> None:
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_dense(store, f"{prefix}.l{i}", a, b, rng)


def mlp(x: Tensor, p, n_layers: int, activation: str = "silu", dropout: float = 0.0, rng=None) -> Tensor:
    """Dense stack; activation (and dropout) after every layer but the last."""
    act = ACTIVATIONS[activation]
    for i in range(n_layers):
        x = dense(x, p.scope(f"l{i}"))
        if i < n_layers - 1:
            x = T.dropout(act(x), dropout, rng)
    return x


def init_gru(store: ParameterStore, prefix: str, d_in: int, d_hidden: int, rng) -> None:
    for gate in ("z", "r", "n"):
        store.add(f"{prefix}.w_{gate}", glorot(rng, d_in, d_hidden))
        store.add(f"{prefix}.u_{gate}", glorot(rng, d_hidden, d_hidden))
        store.add(f"{prefix}.b_{gate}", np.zeros(d_hidden))


def gru_cell(h: Tensor, x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Gated recurrent unit:

        z = σ(x W_z + h U_z + b_z)
        r = σ(x W_r + h U_r + b_r)
        n = tanh(x W_n + (r ⊙ h) U_n + b_n)
        h' = (1 - z) ⊙ n + z ⊙ h
    """
    h, x = T.as_tensor(h), T.as_tensor(x)
    if h.shape[-1] != p["u_z"].shape[0] or x.shape[-1] != p["w_z"].shape[0]:
        raise ShapeMismatch(f"gru_cell: h {h.shape}, x {x.shape}")
    z = T.sigmoid(x @ p["w_z"] + h @ p["u_z"] + p["b_z"])
    r = T.sigmoid(x @ p["w_r"] + h @ p["u_r"] + p["b_r"])
    n = T.tanh(x @ p["w_n"] + (r * h) @ p["u_n"] + p["b_n"])
    return n + z * (h - n)


def init_attention(store: ParameterStore, prefix: str, d_model: int, rng, d_kv: int | None = None) -> None:
    d_kv = d_kv or d_model
    init_dense(store, f"{prefix}.q", d_model, d_model, rng)
    init_dense(store, f"{prefix}.k", d_kv, d_model, rng)
    init_dense(store, f"{prefix}.v", d_kv, d_model, rng)
    init_dense(store, f"{prefix}.o", d_model, d_model, rng)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = T.reshape(x, (*lead, n, n_heads, d // n_heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return T.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return T.reshape(T.transpose(x, axes), (*lead, n, h * dh))


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    p,
    n_heads: int,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product attention per head, heads concatenated, then an output projection.

    ``mask`` (broadcastable to ``(n_queries, n_keys)``) marks allowed pairs; masked
    pairs receive exactly zero weight.
    """
    d_model = p["q.w"].shape[1]
    if d_model % n_heads:
        raise HeadDivisibility(f"model dim {d_model} not divisible by {n_heads} heads")
    if keys.shape[-2] != values.shape[-2]:
        raise ShapeMismatch(f"keys {keys.shape} vs values {values.shape}")
    q = _split_heads(dense(queries, p.scope("q")), n_heads)
    k = _split_heads(dense(keys, p.scope("k")), n_heads)
    v = _split_heads(dense(values, p.scope("v")), n_heads)
    dh = d_model // n_heads
    scores = T.matmul(q, T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    scores = scores * (1.0 / np.sqrt(dh))
    weights = T.softmax(scores, mask)
    out = dense(_merge_heads(T.matmul(weights, v)), p.scope("o"))
    if return_weights:
        return out, weights.data
    return out
