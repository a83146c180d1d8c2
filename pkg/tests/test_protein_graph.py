import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import brute_force_edges, graph_from_coords, pdb_line
from stabdesign.errors import MalformedRecord, NoResidues, TooFewResidues, UnknownAminoAcid
from stabdesign.protein_graph import (
    AMINO_ACIDS,
    N_FEATURES,
    AminoAcidTable,
    Residue,
    apply_mutation,
    build_contact_graph,
    default_table,
    featurize_residue,
    graph_from_json,
    parse_pdb,
    parse_pdb_report,
    synthetic_graph,
    write_pdb,
)

THREE = [pdb_line(1, "GLY", 1, 0, 0, 0), pdb_line(2, "ALA", 2, 3.8, 0, 0), pdb_line(3, "LYS", 3, 7.6, 0, 0)]


def test_parse_three_residues_in_order():
    res = parse_pdb("\n".join(THREE))
    assert [r.aa_code for r in res] == ["G", "A", "K"]
    assert [r.seq_index for r in res] == [1, 2, 3]
    assert res[1].ca_coord == (3.8, 0.0, 0.0)


def test_parse_empty_raises():
    with pytest.raises(NoResidues):
        parse_pdb("")


def test_altloc_first_occurrence_wins():
    lines = [
        pdb_line(1, "GLY", 1, 0, 0, 0),
        pdb_line(2, "ALA", 2, 1.0, 2.0, 3.0, alt="A"),
        pdb_line(3, "ALA", 2, 9.0, 9.0, 9.0, alt="B"),
    ]
    res = parse_pdb("\n".join(lines))
    assert len(res) == 2
    assert res[1].ca_coord == (1.0, 2.0, 3.0)


def test_non_ca_and_hetatm_ignored():
    lines = THREE + [
        "ATOM      4  N   LYS A   3       7.600   1.000   0.000  1.00  0.00           N",
        "HETATM    5  CA  HOH A 100       1.000   1.000   1.000  1.00  0.00           C",
    ]
    assert len(parse_pdb("\n".join(lines))) == 3


def test_noncanonical_skipped_and_counted():
    lines = THREE + [pdb_line(4, "MSE", 4, 11.4, 0, 0)]
    res, skipped = parse_pdb_report("\n".join(lines))
    assert len(res) == 3 and skipped == 1


def test_malformed_coordinate():
    bad = THREE[0][:30] + "   abc.0" + THREE[0][38:]
    with pytest.raises(MalformedRecord):
        parse_pdb(bad)


def test_chain_selection_default_first_and_override():
    lines = [pdb_line(1, "GLY", 1, 0, 0, 0, chain="B"), pdb_line(2, "ALA", 1, 5, 0, 0, chain="A")]
    assert parse_pdb("\n".join(lines))[0].chain_id == "B"
    assert parse_pdb("\n".join(lines), chain="A")[0].aa_code == "A"
    with pytest.raises(NoResidues):
        parse_pdb("\n".join(lines), chain="C")


def test_output_sorted_by_sequence():
    lines = [THREE[2], THREE[0], THREE[1]]
    assert [r.seq_index for r in parse_pdb("\n".join(lines))] == [1, 2, 3]


def test_write_parse_round_trip():
    g = synthetic_graph("MKTAYIAKQR", seed=4)
    again = parse_pdb(write_pdb(g.nodes))
    assert [(r.aa_code, r.seq_index, r.ca_coord) for r in again] == [(r.aa_code, r.seq_index, r.ca_coord) for r in g.nodes]


@pytest.mark.parametrize("d,expected", [(7.9, 1), (8.0, 1), (8.1, 0)])
def test_cutoff_boundary(d, expected):
    g = graph_from_coords([(0, 0, 0), (d, 0, 0)])
    assert len(g.edges) == expected


def test_collinear_triplet():
    g = graph_from_coords([(0, 0, 0), (5, 0, 0), (10, 0, 0)])
    assert {tuple(e) for e in g.edges} == {(0, 1), (1, 2)}


def test_random_cloud_matches_brute_force():
    rng = np.random.default_rng(7)
    coords = rng.uniform(0, 25, (50, 3))
    g = graph_from_coords(coords)
    assert {tuple(map(int, e)) for e in g.edges} == brute_force_edges(coords)


def test_too_few_residues():
    with pytest.raises(TooFewResidues):
        build_contact_graph([Residue("A", 1, "G", (0.0, 0.0, 0.0))])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.just(3)), elements=st.floats(-15, 15)))
def test_edge_properties(coords):
    g = graph_from_coords(coords)
    for j, k in g.edges:
        assert j < k and g.has_edge(j, k) and g.has_edge(k, j)
    assert not any(g.has_edge(j, j) for j in range(g.n_nodes))
    adj = g.adjacency()
    assert np.array_equal(adj, adj.T)
    assert {tuple(map(int, e)) for e in g.edges} == brute_force_edges(coords)


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 20), st.just(3)), elements=st.floats(-12, 12)),
    st.floats(2.0, 10.0),
    st.floats(0.0, 5.0),
)
def test_cutoff_monotone(coords, c1, extra):
    res = [Residue("A", i + 1, "A", tuple(c)) for i, c in enumerate(coords)]
    small = {tuple(e) for e in build_contact_graph(res, c1).edges}
    big = {tuple(e) for e in build_contact_graph(res, c1 + extra).edges}
    assert small <= big


def test_featurize_shape_and_one_hot():
    for aa in AMINO_ACIDS:
        f = featurize_residue(aa)
        assert f.shape == (N_FEATURES,) == (25,)
        assert f[:20].sum() == 1.0 and np.count_nonzero(f[:20]) == 1
        assert f[AMINO_ACIDS.index(aa)] == 1.0


def test_featurize_unknown():
    with pytest.raises(UnknownAminoAcid):
        featurize_residue("X")


def test_glycine_zscores_recomputed_from_shipped_table():
    from importlib import resources

    doc = json.loads(resources.files("stabdesign.data").joinpath("aa_properties.json").read_text())
    names = ["molecular_weight", "pKa", "pKb", "pKx", "pI"]
    rows = [[doc["residues"][aa][n] for n in names] for aa in AMINO_ACIDS]
    cols = list(zip(*rows))
    gly = rows[AMINO_ACIDS.index("G")]
    expected = []
    for col, v in zip(cols, gly):
        mean = sum(col) / 20
        sd = (sum((c - mean) ** 2 for c in col) / 20) ** 0.5
        expected.append((v - mean) / sd)
    assert np.allclose(featurize_residue("G")[20:], expected, rtol=0, atol=1e-12)


def test_table_invariants():
    t = default_table()
    assert t.raw.shape == (20, 5)
    assert np.allclose(t.normalized.mean(axis=0), 0, atol=1e-12)
    # non-ionizable side chains carry the 0.0 pKx sentinel
    assert t.raw[AMINO_ACIDS.index("G"), 3] == 0.0
    assert t.raw[AMINO_ACIDS.index("K"), 3] > 0.0
    with pytest.raises(ValueError):
        AminoAcidTable(np.zeros((19, 5)))


def test_featurization_deterministic():
    assert featurize_residue("W").tobytes() == featurize_residue("W").tobytes()


def test_json_round_trip():
    g = synthetic_graph("MKTAYIAKQRLE", seed=0, id="x")
    doc = json.loads(json.dumps(g.to_json()))
    assert set(doc) == {"id", "nodes", "edges"}
    g2 = graph_from_json(doc)
    assert g2.id == "x" and g2.sequence == g.sequence
    assert np.array_equal(g2.edges, g.edges)
    assert np.array_equal(g2.node_features, g.node_features)


def test_graph_is_immutable():
    g = synthetic_graph("MKTAY", seed=0)
    with pytest.raises(ValueError):
        g.node_features[0, 0] = 5.0


def test_apply_mutation_changes_one_row():
    g = synthetic_graph("MKTAY", seed=0)
    m = apply_mutation(g, 2, "W")
    diff = np.flatnonzero(np.any(m.node_features != g.node_features, axis=1))
    assert list(diff) == [2]
    assert m.sequence == "MKWAY"
    assert np.array_equal(m.edges, g.edges)


def test_node_index_author_numbering():
    g = synthetic_graph("MKTAY", seed=0)
    assert g.node_index(3) == 2
    with pytest.raises(KeyError):
        g.node_index(99)
