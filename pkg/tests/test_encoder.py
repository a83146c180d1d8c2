import numpy as np
import pytest

from stabdesign import nn
from stabdesign.encoder import (
    EncoderConfig,
    encode,
    encode_tensors,
    init_encoder,
    positional_encoding,
    pretrain_unsupervised,
)
from stabdesign.errors import EmptyCorpus, EmptyGraph, HeadDivisibility, ShapeMismatch
from stabdesign.nn.tensor import Tensor
from stabdesign.protein_graph import synthetic_graph

CFG = EncoderConfig(embed_dim=32, n_message_layers=3, n_heads=4, dropout=0.1)


def random_sequence(rng, n):
    return "".join(rng.choice(list("ACDEFGHIKLMNPQRSTVWY"), n))


def test_config_validation():
    with pytest.raises(HeadDivisibility):
        EncoderConfig(embed_dim=30, n_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(n_message_layers=0)
    assert EncoderConfig().positional_dim == 64


def test_output_shapes_and_finite():
    g = synthetic_graph("MKTAYIAKQRLE", seed=0)
    emb = encode(g, CFG, init_encoder(CFG, 0))
    assert emb.node_embeddings.shape == (12, 32) and emb.super_node.shape == (32,)
    assert np.all(np.isfinite(emb.node_embeddings)) and np.all(np.isfinite(emb.super_node))
    assert emb.n_nodes == g.n_nodes


def test_positional_encoding_values():
    pe = positional_encoding(np.array([0, 3]), 4)
    assert np.allclose(pe[0], [0, 1, 0, 1])
    assert np.allclose(pe[1], [np.sin(3), np.cos(3), np.sin(3 / 100), np.cos(3 / 100)])


def test_single_node_super_node_is_one_gru_step_per_layer():
    params = init_encoder(CFG, 1)
    x = np.random.default_rng(0).normal(size=(1, 25))
    adj = np.ones((1, 1), dtype=bool)
    one = EncoderConfig(embed_dim=32, n_message_layers=1, n_heads=4)
    two = EncoderConfig(embed_dim=32, n_message_layers=2, n_heads=4)
    h1, s1 = encode_tensors(x, np.array([1]), adj, one, params)
    h2, s2 = encode_tensors(x, np.array([1]), adj, two, params)
    gru = params.scope("encoder").scope("super_gru")
    assert np.allclose(s1.data, nn.gru_cell(Tensor(np.zeros(32, np.float32)), Tensor(h1.data[0]), gru).data, atol=1e-6)
    assert np.allclose(s2.data, nn.gru_cell(s1, Tensor(h2.data[0]), gru).data, atol=1e-6)


def test_storage_order_equivariance_20_graphs():
    rng = np.random.default_rng(3)
    params = init_encoder(CFG, 2)
    for _ in range(20):
        n = int(rng.integers(2, 25))
        g = synthetic_graph(random_sequence(rng, n), seed=int(rng.integers(1000)))
        perm = rng.permutation(n)
        adj = g.adjacency(self_loops=True)
        h, s = encode_tensors(g.node_features, g.seq_indices, adj, CFG, params)
        hp, sp = encode_tensors(g.node_features[perm], g.seq_indices[perm], adj[np.ix_(perm, perm)], CFG, params)
        assert np.allclose(hp.data, h.data[perm], atol=1e-5)
        assert np.allclose(sp.data, s.data, atol=1e-5)


def test_id_not_a_feature():
    params = init_encoder(CFG, 0)
    a = encode(synthetic_graph("MKTAYIAK", seed=5, id="a"), CFG, params)
    b = encode(synthetic_graph("MKTAYIAK", seed=5, id="b"), CFG, params)
    assert np.array_equal(a.node_embeddings, b.node_embeddings)
    assert np.array_equal(a.super_node, b.super_node)


def test_non_neighbours_do_not_influence_one_layer():
    cfg = EncoderConfig(embed_dim=32, n_message_layers=1, n_heads=4, dropout=0.0)
    params = init_encoder(cfg, 0)
    g = synthetic_graph(random_sequence(np.random.default_rng(1), 30), seed=1)
    adj = g.adjacency(self_loops=True)
    j = 0
    outside = np.flatnonzero(~adj[j])
    assert outside.size > 0
    x = g.node_features.copy()
    h0, _ = encode_tensors(x, g.seq_indices, adj, cfg, params)
    x[outside] += np.random.default_rng(2).normal(size=(outside.size, 25))
    h1, _ = encode_tensors(x, g.seq_indices, adj, cfg, params)
    assert np.array_equal(h0.data[j], h1.data[j])
    assert not np.allclose(h0.data[outside], h1.data[outside])


def test_eval_mode_deterministic_train_mode_stochastic():
    g = synthetic_graph("MKTAYIAKQRLE", seed=0)
    params = init_encoder(CFG, 0)
    a, b = encode(g, CFG, params), encode(g, CFG, params)
    assert np.array_equal(a.node_embeddings, b.node_embeddings)
    c = encode(g, CFG, params, rng=np.random.default_rng(0))
    assert not np.array_equal(a.node_embeddings, c.node_embeddings)


def test_passthrough_pads_raw_features():
    g = synthetic_graph("MKTAY", seed=0)
    emb = encode(g, CFG, None, passthrough=True)
    assert np.allclose(emb.node_embeddings[:, :25], g.node_features)
    assert np.all(emb.node_embeddings[:, 25:] == 0)
    assert np.allclose(emb.super_node, emb.node_embeddings.mean(axis=0))


def test_errors():
    params = init_encoder(CFG, 0)
    with pytest.raises(ShapeMismatch):
        encode_tensors(np.zeros((3, 24)), np.arange(3), np.eye(3, dtype=bool), CFG, params)
    with pytest.raises(EmptyGraph):
        encode_tensors(np.zeros((0, 25)), np.arange(0), np.zeros((0, 0), dtype=bool), CFG, params)
    with pytest.raises(EmptyCorpus):
        pretrain_unsupervised([], CFG)


def _smooth(xs, w=20):
    return np.convolve(xs, np.ones(w) / w, mode="valid")


def test_pretraining_loss_decreases():
    g = synthetic_graph("MKTAYIAKQRLE", seed=0)
    res = pretrain_unsupervised([g], CFG, steps=200, lr=3e-3, seed=0)
    s = _smooth(res.losses)
    assert s[-1] < s[0]
    assert not any(k.startswith("decoder") for k in res.params.params)
    assert set(res.params.params) == set(init_encoder(CFG, 0).params)


def test_pretraining_mask_rate_zero_reaches_near_zero():
    g = synthetic_graph("MKTAYIAKQRLE", seed=0)
    res = pretrain_unsupervised([g], CFG, steps=300, lr=1e-2, mask_rate=0.0, seed=0)
    assert res.losses[-1] < 0.02 * res.losses[0]


def test_pretraining_reproducible():
    g = synthetic_graph("MKTAYIAK", seed=0)
    a = pretrain_unsupervised([g], CFG, steps=20, seed=4)
    b = pretrain_unsupervised([g], CFG, steps=20, seed=4)
    assert abs(a.losses[-1] - b.losses[-1]) <= 1e-6
