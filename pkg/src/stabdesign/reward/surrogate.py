"""Learned ΔΔG surrogate: shared graph encoder, cross-attention fusion, MLP head."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import KFold

from .. import nn
from ..encoder import EncoderConfig, GraphEmbedding, encode_tensors, init_encoder
from ..errors import ShapeMismatch, TooFewRecords
from ..nn import ops as T
from ..nn.params import ParameterStore
from ..nn.tensor import Tensor
from ..protein_graph import ProteinGraph, featurize_residue
from .metrics import Metrics, mean_metrics, metrics
from .oracles import DDGRecord, Mutation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SurrogateConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hidden_dim: int = 64
    cross_heads: int = 4
    batch_size: int = 32
    epochs: int = 30
    lr: float = 3e-3
    encoder_lr_scale: float = 0.1
    freeze_encoder: bool = False
    k_folds: int = 5
    seed: int = 0


def init_surrogate(config: SurrogateConfig, seed=0, encoder_params: ParameterStore | None = None) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    if encoder_params is not None:
        for k, p in encoder_params.subset("encoder.").items():
            store.add(k, p.data)
    else:
        init_encoder(config.encoder, rng, store)
    d = config.encoder.embed_dim
    nn.init_attention(store, "cross", d, rng)
    nn.init_mlp(store, "head", [2 * d, config.hidden_dim, config.hidden_dim, 1], rng)
    store.add_buffer("target_mean", 0.0)
    store.add_buffer("target_std", 1.0)
    return store


def fuse_and_score(
    params: ParameterStore,
    config: SurrogateConfig,
    wild_nodes: Tensor,
    wild_super: Tensor,
    diff_nodes: Tensor,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Cross-attention (queries = wild nodes, keys/values = difference-graph nodes),
    mean-pool, concatenate the wild super-node, two-hidden-layer MLP.

    ``diff_nodes`` may carry a leading batch axis; returns shape ``(...,)`` in
    standardized target units.
    """
    if wild_nodes.shape[-2:] != diff_nodes.shape[-2:]:
        raise ShapeMismatch(f"wild {wild_nodes.shape} vs difference {diff_nodes.shape}")
    fused = nn.multi_head_attention(wild_nodes, diff_nodes, diff_nodes, params.scope("cross"), config.cross_heads)
    pooled = T.mean(fused, axis=-2)
    ctx = T.expand(wild_super, pooled.shape) if wild_super.shape != pooled.shape else wild_super
    z = T.concat([pooled, ctx], axis=-1)
    out = nn.mlp(z, params.scope("head"), 3, dropout=config.encoder.dropout, rng=rng)
    return T.reshape(out, out.shape[:-1])


def surrogate_forward(params: ParameterStore, config: SurrogateConfig, wild_embedding: GraphEmbedding, diff_graph: ProteinGraph) -> float:
    """ΔΔG (kcal/mol) for one difference graph against a precomputed wild embedding."""
    diff_nodes, _ = encode_tensors(
        diff_graph.node_features, diff_graph.seq_indices, diff_graph.adjacency(self_loops=True), config.encoder, params
    )
    raw = fuse_and_score(params, config, Tensor(wild_embedding.node_embeddings), Tensor(wild_embedding.super_node), diff_nodes)
    return float(raw.data) * float(params.buffers["target_std"]) + float(params.buffers["target_mean"])


def _diff_features(graph: ProteinGraph, ms: list[Mutation]) -> np.ndarray:
    out = np.zeros((len(ms),) + graph.node_features.shape)
    for b, m in enumerate(ms):
        m.check(graph)
        out[b, m.position] = featurize_residue(m.mut_aa) - featurize_residue(m.wild_aa)
    return out


class SurrogateModel:
    """Trainable surrogate bundling parameters with their config."""

    def __init__(self, config: SurrogateConfig, params: ParameterStore | None = None, encoder_params=None):
        self.config = config
        self.params = params if params is not None else init_surrogate(config, config.seed, encoder_params)
        self._wild_cache: dict = {}

    # -- inference ---------------------------------------------------------
    def wild_embedding(self, graph: ProteinGraph) -> GraphEmbedding:
        key = (graph.id, graph.node_features.tobytes())
        emb = self._wild_cache.get(key)
        if emb is None:
            h, s = encode_tensors(graph.node_features, graph.seq_indices, graph.adjacency(True), self.config.encoder, self.params)
            emb = GraphEmbedding(h.data.copy(), s.data.copy())
            self._wild_cache[key] = emb
        return emb

    def predict(self, graph: ProteinGraph, ms: list[Mutation], batch: int = 64) -> np.ndarray:
        emb = self.wild_embedding(graph)
        wn, ws = Tensor(emb.node_embeddings), Tensor(emb.super_node)
        adj = graph.adjacency(True)
        out = []
        for i in range(0, len(ms), batch):
            diff = _diff_features(graph, ms[i:i + batch])
            dn, _ = encode_tensors(diff, graph.seq_indices, adj, self.config.encoder, self.params)
            out.append(fuse_and_score(self.params, self.config, wn, ws, dn).data.astype(np.float64))
        raw = np.concatenate(out) if out else np.zeros(0)
        return raw * float(self.params.buffers["target_std"]) + float(self.params.buffers["target_mean"])

    # -- training ----------------------------------------------------------
    def batch_loss(self, graphs: dict[str, ProteinGraph], batch: list[DDGRecord], targets: np.ndarray, rng) -> Tensor:
        """Mean squared error (standardized units) over a mixed-protein batch."""
        groups: dict[str, list[int]] = defaultdict(list)
        for i, r in enumerate(batch):
            groups[r.mutation.protein_id].append(i)
        cfg = self.config
        total = None
        for pid, idx in groups.items():
            g = graphs[pid]
            adj = g.adjacency(True)
            wn, ws = encode_tensors(g.node_features, g.seq_indices, adj, cfg.encoder, self.params, rng)
            diff = _diff_features(g, [batch[i].mutation for i in idx])
            dn, _ = encode_tensors(diff, g.seq_indices, adj, cfg.encoder, self.params, rng)
            pred = fuse_and_score(self.params, cfg, wn, ws, dn, rng)
            part = T.mse(pred, targets[idx]) * (len(idx) / len(batch))
            total = part if total is None else total + part
        return total

    def fit(self, graphs: dict[str, ProteinGraph], records: list[DDGRecord], epochs: int | None = None, seed: int | None = None) -> list[float]:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        y = np.array([r.ddg for r in records], dtype=np.float64)
        mu, sd = float(y.mean()), float(y.std()) or 1.0
        self.params.buffers["target_mean"] = np.array(mu, dtype=self.params.buffers["target_mean"].dtype)
        self.params.buffers["target_std"] = np.array(sd, dtype=self.params.buffers["target_std"].dtype)
        z = (y - mu) / sd
        trainable = self.params.params
        if cfg.freeze_encoder:
            trainable = {k: v for k, v in trainable.items() if not k.startswith("encoder.")}
        history = []
        for _ in range(epochs if epochs is not None else cfg.epochs):
            order = rng.permutation(len(records))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss, grads = nn.forward_backward(
                    lambda: self.batch_loss(graphs, [records[i] for i in idx], z[idx], rng), trainable
                )
                if cfg.freeze_encoder:
                    nn.adam_step(self.params, grads, cfg.lr)
                else:
                    nn.fine_tune(self.params, grads, cfg.lr, cfg.encoder_lr_scale)
                history.append(loss.item())
        self._wild_cache.clear()
        return history

    def predict_records(self, graphs: dict[str, ProteinGraph], records: list[DDGRecord]) -> np.ndarray:
        out = np.empty(len(records))
        by_pid: dict[str, list[int]] = defaultdict(list)
        for i, r in enumerate(records):
            by_pid[r.mutation.protein_id].append(i)
        for pid, idx in by_pid.items():
            out[idx] = self.predict(graphs[pid], [records[i].mutation for i in idx])
        return out


@dataclass
class TrainingReport:
    folds: list[Metrics]
    mean: dict
    loss_history: list[float]

    def to_json(self) -> dict:
        return {"folds": [m.to_json() for m in self.folds], "mean": self.mean}


def train_surrogate(
    records: list[DDGRecord],
    graphs: dict[str, ProteinGraph],
    config: SurrogateConfig = SurrogateConfig(),
    encoder_params: ParameterStore | None = None,
) -> tuple[SurrogateModel, TrainingReport]:
    """k-fold evaluation on held-out folds, then a final fit on all records."""
    k = config.k_folds
    if len(records) < 5 * k:
        raise TooFewRecords(f"{len(records)} records; need at least {5 * k} for {k}-fold evaluation")
    folds = []
    splitter = KFold(n_splits=k, shuffle=True, random_state=config.seed)
    for f, (tr, te) in enumerate(splitter.split(np.arange(len(records)))):
        model = SurrogateModel(config, encoder_params=encoder_params)
        model.fit(graphs, [records[i] for i in tr], seed=config.seed + 1 + f)
        held = [records[i] for i in te]
        pred = model.predict_records(graphs, held)
        m = metrics(pred, [r.ddg for r in held])
        log.info("fold %d: rmse=%.3f r2=%s pcc=%s", f, m.rmse, m.r2, m.pcc)
        folds.append(m)
    final = SurrogateModel(config, encoder_params=encoder_params)
    history = final.fit(graphs, records)
    return final, TrainingReport(folds, mean_metrics(folds), history)
