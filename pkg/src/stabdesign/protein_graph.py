"""PDB parsing, amino-acid featurization and Cα contact graphs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import (
    MalformedRecord,
    NoResidues,
    TooFewResidues,
    UnknownAminoAcid,
)

log = logging.getLogger(__name__)

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
AA_INDEX = {aa: i for i, aa in enumerate(AMINO_ACIDS)}
PROPERTY_NAMES = ("molecular_weight", "pKa", "pKb", "pKx", "pI")
N_FEATURES = len(AMINO_ACIDS) + len(PROPERTY_NAMES)
DEFAULT_CUTOFF = 8.0

THREE_TO_ONE = {
    "ALA": "A", "CYS": "C", "ASP": "D", "GLU": "E", "PHE": "F",
    "GLY": "G", "HIS": "H", "ILE": "I", "LYS": "K", "LEU": "L",
    "MET": "M", "ASN": "N", "PRO": "P", "GLN": "Q", "ARG": "R",
    "SER": "S", "THR": "T", "VAL": "V", "TRP": "W", "TYR": "Y",
}
ONE_TO_THREE = {v: k for k, v in THREE_TO_ONE.items()}


# ---------------------------------------------------------------------------
# amino-acid table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AminoAcidTable:
    """Per-residue physicochemical properties plus the one-hot layout.

    ``raw`` is the 20x5 property matrix in ``AMINO_ACIDS`` order; ``normalized``
    holds the column z-scores over those 20 rows.
    """

    raw: np.ndarray
    version: int = 1
    normalized: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        if raw.shape != (20, 5):
            raise ValueError(f"property table must be 20x5, got {raw.shape}")
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        std[std == 0] = 1.0
        norm = (raw - mean) / std
        raw.flags.writeable = False
        norm.flags.writeable = False
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "normalized", norm)

    def index(self, aa: str) -> int:
        try:
            return AA_INDEX[aa]
        except KeyError:
            raise UnknownAminoAcid(f"not a canonical amino acid: {aa!r}") from None

    def properties(self, aa: str) -> np.ndarray:
        return self.raw[self.index(aa)]


@lru_cache(maxsize=1)
def default_table() -> AminoAcidTable:
    text = resources.files("stabdesign.data").joinpath("aa_properties.json").read_text()
    doc = json.loads(text)
    rows = [[doc["residues"][aa][p] for p in PROPERTY_NAMES] for aa in AMINO_ACIDS]
    return AminoAcidTable(np.array(rows, dtype=np.float64), version=int(doc["version"]))


def featurize_residue(aa_code: str, table: AminoAcidTable | None = None) -> np.ndarray:
    """25-vector: one-hot over the 20 amino acids followed by 5 z-scored properties."""
    table = table or default_table()
    i = table.index(aa_code)
    out = np.zeros(N_FEATURES, dtype=np.float64)
    out[i] = 1.0
    out[20:] = table.normalized[i]
    return out


# ---------------------------------------------------------------------------
# PDB parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Residue:
    chain_id: str
    seq_index: int
    aa_code: str
    ca_coord: tuple[float, float, float]

    def __post_init__(self):
        if self.aa_code not in AA_INDEX:
            raise UnknownAminoAcid(f"not a canonical amino acid: {self.aa_code!r}")
        if not all(math.isfinite(c) for c in self.ca_coord):
            raise MalformedRecord(f"non-finite coordinate for residue {self.seq_index}")


def parse_pdb_report(text: str, chain: str | None = None) -> tuple[list[Residue], int]:
    """Parse Cα ATOM records; returns the residues and the number of skipped
    non-canonical residues."""
    seen: dict[tuple[int, str], Residue] = {}
    order: list[tuple[int, str]] = []
    skipped: set[tuple[int, str]] = set()
    selected = chain
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.startswith("ATOM  "):
            continue
        if line[12:16].strip() != "CA":
            continue
        if len(line) < 54:
            raise MalformedRecord(f"line {lineno}: ATOM record shorter than 54 columns")
        chain_id = line[21]
        if selected is None:
            selected = chain_id
        if chain_id != selected:
            continue
        try:
            res_seq = int(line[22:26])
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from None
        key = (res_seq, line[26] if len(line) > 26 else " ")
        if key in seen or key in skipped:
            continue  # altLoc duplicates: first occurrence wins
        aa = THREE_TO_ONE.get(line[17:20].strip())
        if aa is None:
            skipped.add(key)
            continue
        seen[key] = Residue(chain_id, res_seq, aa, xyz)
        order.append(key)
    if not seen:
        raise NoResidues("no Cα ATOM records found" + (f" for chain {chain!r}" if chain else ""))
    if skipped:
        log.warning("skipped %d non-canonical residue(s)", len(skipped))
    order.sort()
    return [seen[k] for k in order], len(skipped)


def parse_pdb(text: str, chain: str | None = None) -> list[Residue]:
    return parse_pdb_report(text, chain)[0]


def read_pdb(path: str | Path, chain: str | None = None) -> list[Residue]:
    return parse_pdb(Path(path).read_text(), chain)


def write_pdb(residues: Sequence[Residue]) -> str:
    """Minimal Cα-only PDB text for the given residues."""
    lines = []
    for serial, r in enumerate(residues, start=1):
        x, y, z = r.ca_coord
        lines.append(
            f"ATOM  {serial:5d}  CA  {ONE_TO_THREE[r.aa_code]} {r.chain_id}{r.seq_index:4d}    "
            f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           C"
        )
    lines.append("END")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProteinGraph:
    id: str
    nodes: tuple[Residue, ...]
    node_features: np.ndarray
    edges: np.ndarray  # (m, 2) int64, i < j, lexicographically sorted
    cutoff: float = DEFAULT_CUTOFF

    def __post_init__(self):
        feats = np.array(self.node_features, dtype=np.float64)
        feats.flags.writeable = False
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        edges.flags.writeable = False
        object.__setattr__(self, "node_features", feats)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_edge_set", frozenset(map(tuple, edges.tolist())))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def sequence(self) -> str:
        return "".join(r.aa_code for r in self.nodes)

    @property
    def seq_indices(self) -> np.ndarray:
        return np.array([r.seq_index for r in self.nodes], dtype=np.int64)

    def has_edge(self, j: int, k: int) -> bool:
        return (min(j, k), max(j, k)) in self._edge_set

    def adjacency(self, self_loops: bool = False) -> np.ndarray:
        n = self.n_nodes
        a = np.zeros((n, n), dtype=bool)
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = True
            a[self.edges[:, 1], self.edges[:, 0]] = True
        if self_loops:
            np.fill_diagonal(a, True)
        return a

    def node_index(self, seq_index: int, chain: str | None = None) -> int:
        for i, r in enumerate(self.nodes):
            if r.seq_index == seq_index and (chain is None or r.chain_id == chain):
                return i
        raise KeyError(f"{self.id}: no residue numbered {seq_index}")

    def with_features(self, features: np.ndarray, nodes: Iterable[Residue] | None = None) -> ProteinGraph:
        return ProteinGraph(
            self.id, tuple(nodes) if nodes is not None else self.nodes, features, self.edges, self.cutoff
        )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "nodes": [
                {"index": i, "aa": r.aa_code, "coord": list(r.ca_coord)}
                for i, r in enumerate(self.nodes)
            ],
            "edges": self.edges.tolist(),
        }


def build_contact_graph(
    residues: Sequence[Residue],
    cutoff: float = DEFAULT_CUTOFF,
    id: str = "protein",
    table: AminoAcidTable | None = None,
) -> ProteinGraph:
    """Contact graph with an edge for every Cα pair within ``cutoff`` Å (inclusive)."""
    if len(residues) < 2:
        raise TooFewResidues(f"need at least 2 residues, got {len(residues)}")
    table = table or default_table()
    coords = np.array([r.ca_coord for r in residues], dtype=np.float64)
    edges = kernels.contact_pairs(coords, cutoff)
    feats = np.stack([featurize_residue(r.aa_code, table) for r in residues])
    return ProteinGraph(id, tuple(residues), feats, edges, cutoff)


def graph_from_json(doc: dict, chain: str = "A") -> ProteinGraph:
    residues = [
        Residue(chain, int(n.get("seq_index", n["index"] + 1)), n["aa"], tuple(n["coord"]))
        for n in doc["nodes"]
    ]
    feats = np.stack([featurize_residue(r.aa_code) for r in residues])
    return ProteinGraph(doc["id"], tuple(residues), feats, np.array(doc["edges"], dtype=np.int64))


def load_graph(path: str | Path, chain: str | None = None, cutoff: float = DEFAULT_CUTOFF) -> ProteinGraph:
    path = Path(path)
    return build_contact_graph(read_pdb(path, chain), cutoff, id=path.stem)


def apply_mutation(graph: ProteinGraph, position: int, aa: str) -> ProteinGraph:
    """Same topology with residue ``position`` replaced by ``aa``."""
    old = graph.nodes[position]
    nodes = list(graph.nodes)
    nodes[position] = Residue(old.chain_id, old.seq_index, aa, old.ca_coord)
    feats = graph.node_features.copy()
    feats[position] = featurize_residue(aa)
    return graph.with_features(feats, nodes)


def synthetic_backbone(
    sequence: str,
    seed: int = 0,
    id: str = "synthetic",
    chain: str = "A",
    step: float = 3.8,
    start_index: int = 1,
) -> list[Residue]:
    """Compact random Cα trace with fixed 3.8 Å virtual bonds.

    Each new direction is the previous one bent by roughly 60-90 degrees so the
    chain folds back on itself like a globule instead of a straight rod.
    """
    rng = np.random.default_rng(seed)
    coords = [np.zeros(3)]
    direction = np.array([1.0, 0.0, 0.0])
    for _ in range(len(sequence) - 1):
        for _attempt in range(100):
            perp = rng.normal(size=3)
            perp -= perp.dot(direction) * direction
            perp /= np.linalg.norm(perp)
            angle = rng.uniform(np.pi / 3, np.pi / 2)
            cand = np.cos(angle) * direction + np.sin(angle) * perp
            nxt = coords[-1] + step * cand
            if all(np.linalg.norm(nxt - c) >= 3.8 - 1e-9 for c in coords[:-1]):
                break
        direction = cand
        coords.append(nxt)
    return [
        Residue(chain, start_index + i, aa, tuple(float(round(v, 3)) for v in xyz))
        for i, (aa, xyz) in enumerate(zip(sequence, coords))
    ]


def synthetic_graph(sequence: str, seed: int = 0, id: str = "synthetic", cutoff: float = DEFAULT_CUTOFF) -> ProteinGraph:
    return build_contact_graph(synthetic_backbone(sequence, seed, id), cutoff, id=id)
