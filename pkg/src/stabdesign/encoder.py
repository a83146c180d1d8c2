"""Attention message-passing encoder with a GRU-refined global super-node."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import EmptyCorpus, EmptyGraph, HeadDivisibility, ShapeMismatch
from .nn import ops as T
from .nn.params import ParameterStore
from .nn.tensor import Tensor
from .protein_graph import N_FEATURES, ProteinGraph

log = logging.getLogger(__name__)

PREFIX = "encoder"


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    n_message_layers: int = 3
    n_heads: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise HeadDivisibility(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.n_message_layers < 1:
            raise ValueError("n_message_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.embed_dim < N_FEATURES:
            # passthrough mode zero-pads raw features up to embed_dim
            raise ValueError(f"embed_dim must be >= {N_FEATURES}")

    @property
    def positional_dim(self) -> int:
        return self.embed_dim


@dataclass(frozen=True, eq=False)
class GraphEmbedding:
    node_embeddings: np.ndarray  # (|V|, embed_dim)
    super_node: np.ndarray  # (embed_dim,)

    @property
    def n_nodes(self) -> int:
        return self.node_embeddings.shape[0]


def init_encoder(config: EncoderConfig, seed: int | np.random.Generator = 0, store: ParameterStore | None = None) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = store if store is not None else ParameterStore()
    d = config.embed_dim
    nn.init_dense(store, f"{PREFIX}.input", N_FEATURES, d, rng)
    for i in range(config.n_message_layers):
        nn.init_attention(store, f"{PREFIX}.layer{i}.attn", d, rng)
    nn.init_gru(store, f"{PREFIX}.super_gru", d, d, rng)
    return store


def positional_encoding(seq_index: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encoding of residue numbering, shape ``(len(seq_index), dim)``."""
    pos = np.asarray(seq_index, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def encode_tensors(
    features,
    seq_index: np.ndarray,
    adjacency: np.ndarray,
    config: EncoderConfig,
    params,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Differentiable encoder pass.

    ``features`` is ``(N, 25)`` or a batch ``(B, N, 25)`` of graphs sharing one
    topology; ``adjacency`` is the ``(N, N)`` neighbour mask *including* self
    loops. ``rng`` enables dropout (train mode); ``None`` means eval.
    Returns node embeddings ``(..., N, D)`` and super-node ``(..., D)``.
    """
    x = T.as_tensor(features)
    if x.shape[-2] == 0:
        raise EmptyGraph("graph has no nodes")
    if x.shape[-1] != N_FEATURES:
        raise ShapeMismatch(f"expected {N_FEATURES} node features, got {x.shape[-1]}")
    p = params.scope(PREFIX) if isinstance(params, ParameterStore) else params
    d = config.embed_dim
    pe = positional_encoding(seq_index, d).astype(p["input.w"].data.dtype)
    h = nn.dense(x, p.scope("input")) + pe
    lead = h.shape[:-2]
    s = Tensor(np.zeros(lead + (d,), dtype=h.data.dtype))
    gru = p.scope("super_gru")
    for i in range(config.n_message_layers):
        msg = nn.multi_head_attention(h, h, h, p.scope(f"layer{i}.attn"), config.n_heads, adjacency)
        msg = T.dropout(msg, config.dropout, rng)
        h = h + T.silu(msg)
        s = nn.gru_cell(s, T.mean(h, axis=-2), gru)
    return h, s


def passthrough_tensors(features, config: EncoderConfig) -> tuple[Tensor, Tensor]:
    """Encoder-off ablation: raw features zero-padded to ``embed_dim``."""
    x = np.asarray(features.data if isinstance(features, Tensor) else features)
    pad = [(0, 0)] * (x.ndim - 1) + [(0, config.embed_dim - x.shape[-1])]
    h = np.pad(x, pad).astype(nn.tensor.default_dtype())
    return Tensor(h), Tensor(h.mean(axis=-2))


def encode(
    graph: ProteinGraph,
    config: EncoderConfig,
    params,
    rng: np.random.Generator | None = None,
    passthrough: bool = False,
    features: np.ndarray | None = None,
) -> GraphEmbedding:
    """Embed ``graph`` (eval mode unless ``rng`` is given); ``features`` overrides the node features."""
    if graph.n_nodes == 0:
        raise EmptyGraph(f"{graph.id}: empty graph")
    feats = graph.node_features if features is None else features
    if passthrough:
        h, s = passthrough_tensors(feats, config)
    else:
        h, s = encode_tensors(feats, graph.seq_indices, graph.adjacency(self_loops=True), config, params, rng)
    node = np.array(h.data)
    sup = np.array(s.data)
    node.flags.writeable = False
    sup.flags.writeable = False
    return GraphEmbedding(node, sup)


@dataclass
class PretrainResult:
    params: ParameterStore
    losses: list[float]


def pretrain_unsupervised(
    graphs: list[ProteinGraph],
    config: EncoderConfig,
    steps: int = 200,
    lr: float = 1e-3,
    mask_rate: float = 0.15,
    seed: int = 0,
    params: ParameterStore | None = None,
) -> PretrainResult:
    """Masked-feature reconstruction.

    Each step zeroes a random ``mask_rate`` fraction of node rows of one graph and
    regresses all 25 input features of every node from its embedding through a
    linear decode head, which is discarded afterwards.
    """
    if not graphs:
        raise EmptyCorpus("pretraining needs at least one graph")
    rng = np.random.default_rng(seed)
    store = params.copy() if params is not None else init_encoder(config, rng)
    nn.init_dense(store, "decoder", config.embed_dim, N_FEATURES, rng)
    adj = [g.adjacency(self_loops=True) for g in graphs]
    losses = []
    for _ in range(steps):
        gi = int(rng.integers(len(graphs)))
        g = graphs[gi]
        target = g.node_features
        masked = target.copy()
        masked[rng.random(g.n_nodes) < mask_rate] = 0.0

        def loss_fn():
            h, _ = encode_tensors(masked, g.seq_indices, adj[gi], config, store, rng)
            return T.mse(nn.dense(h, store.scope("decoder")), target)

        loss, grads = nn.forward_backward(loss_fn, store)
        nn.adam_step(store, grads, lr)
        losses.append(loss.item())
    out = ParameterStore()
    for k, p in store.subset(PREFIX + ".").items():
        out.params[k] = p
        out.m[k] = store.m[k]
        out.v[k] = store.v[k]
    out.step = store.step
    return PretrainResult(out, losses)
