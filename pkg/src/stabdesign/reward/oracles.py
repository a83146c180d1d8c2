"""ΔΔG reward oracles: experimental lookup table, synthetic landscapes, learned surrogate."""
from __future__ import annotations

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..errors import DataError, InvalidMutation, UnknownMutation
from ..protein_graph import AA_INDEX, AMINO_ACIDS, ProteinGraph, featurize_residue

CSV_COLUMNS = ("protein_id", "chain", "position", "wild_aa", "mut_aa", "ddg")


def substitution_codes(wild_aa: str) -> str:
    """The 19 substitution targets for a wild-type residue, in canonical order."""
    return AMINO_ACIDS.replace(wild_aa, "")


@dataclass(frozen=True)
class Mutation:
    protein_id: str
    position: int  # node index into the graph
    wild_aa: str
    mut_aa: str

    def __post_init__(self):
        if self.mut_aa == self.wild_aa:
            raise InvalidMutation(f"{self}: substitution equals the wild type")
        for aa in (self.wild_aa, self.mut_aa):
            if aa not in AA_INDEX:
                raise InvalidMutation(f"{self}: non-canonical residue {aa!r}")

    def check(self, graph: ProteinGraph) -> None:
        if not 0 <= self.position < graph.n_nodes:
            raise InvalidMutation(f"position {self.position} outside graph of {graph.n_nodes} nodes")
        actual = graph.nodes[self.position].aa_code
        if actual != self.wild_aa:
            raise InvalidMutation(f"position {self.position} holds {actual}, not {self.wild_aa}")

    @property
    def label(self) -> str:
        return f"{self.wild_aa}{self.position}{self.mut_aa}"


@dataclass(frozen=True)
class DDGRecord:
    mutation: Mutation
    ddg: float  # kcal/mol, positive = stabilizing

    def __post_init__(self):
        if not math.isfinite(self.ddg):
            raise DataError(f"{self.mutation.label}: non-finite ddg")


def build_difference_graph(graph: ProteinGraph, m: Mutation) -> ProteinGraph:
    """Wild-type topology whose only nonzero feature row is featurize(mut) - featurize(wild)."""
    m.check(graph)
    feats = np.zeros_like(graph.node_features)
    feats[m.position] = featurize_residue(m.mut_aa) - featurize_residue(m.wild_aa)
    return graph.with_features(feats)


# ---------------------------------------------------------------------------
# CSV datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawRecord:
    protein_id: str
    chain: str
    position: int  # PDB author numbering
    wild_aa: str
    mut_aa: str
    ddg: float


def read_ddg_csv(path: str | Path, flip_sign: bool = False) -> list[RawRecord]:
    """Read ``protein_id,chain,position,wild_aa,mut_aa,ddg``; ``flip_sign`` negates ddg
    for sources that use positive = destabilizing."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing column(s) {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                ddg = float(row["ddg"])
                rec = RawRecord(
                    row["protein_id"].strip(), row["chain"].strip() or "A", int(row["position"]),
                    row["wild_aa"].strip().upper(), row["mut_aa"].strip().upper(),
                    -ddg if flip_sign else ddg,
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            out.append(rec)
    return out


def write_ddg_csv(path: str | Path, records: Iterable[RawRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.protein_id, r.chain, r.position, r.wild_aa, r.mut_aa, repr(r.ddg)])


def resolve_records(raw: Iterable[RawRecord], graphs: Mapping[str, ProteinGraph]) -> list[DDGRecord]:
    """Map author-numbered CSV rows onto node indices of the matching graphs."""
    out = []
    for r in raw:
        g = graphs.get(r.protein_id)
        if g is None:
            raise DataError(f"no structure for protein {r.protein_id!r}")
        try:
            idx = g.node_index(r.position, r.chain)
        except KeyError as exc:
            raise DataError(str(exc)) from None
        m = Mutation(r.protein_id, idx, r.wild_aa, r.mut_aa)
        try:
            m.check(g)
        except InvalidMutation as exc:
            raise DataError(f"{r.protein_id} {r.chain}{r.position}: {exc}") from None
        out.append(DDGRecord(m, r.ddg))
    return out


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

class RewardOracle(ABC):
    """ΔΔG(embedded graph, position, substitution)."""

    @abstractmethod
    def evaluate(self, graph: ProteinGraph, embedding, m: Mutation) -> float: ...

    def coverage(self, graph: ProteinGraph) -> np.ndarray | None:
        """``(|V|, 20)`` bool matrix of evaluable (position, mut_aa), or None if total."""
        return None

    def evaluate_many(self, graph: ProteinGraph, embedding, ms: list[Mutation]) -> np.ndarray:
        return np.array([self.evaluate(graph, embedding, m) for m in ms], dtype=np.float64)


class TableOracle(RewardOracle):
    """Exact lookup of experimental records. Missing pairs are an error, never a guess."""

    def __init__(self, records: Iterable[DDGRecord]):
        self.table: dict[tuple[str, int, str], float] = {}
        for r in records:
            m = r.mutation
            self.table[(m.protein_id, m.position, m.mut_aa)] = float(r.ddg)

    def evaluate(self, graph, embedding, m: Mutation) -> float:
        try:
            return self.table[(m.protein_id, m.position, m.mut_aa)]
        except KeyError:
            raise UnknownMutation(f"{m.protein_id}:{m.label} has no record") from None

    def coverage(self, graph: ProteinGraph) -> np.ndarray:
        cov = np.zeros((graph.n_nodes, 20), dtype=bool)
        for pid, pos, aa in self.table:
            if pid == graph.id and pos < graph.n_nodes:
                cov[pos, AA_INDEX[aa]] = True
        return cov


class SyntheticOracle(RewardOracle):
    """Closed-form landscape ``values[position, aa_index]`` per protein id.

    A landscape registered under ``"*"`` applies to any graph of matching size.
    """

    def __init__(self, landscapes: Mapping[str, np.ndarray]):
        self.landscapes = {k: np.asarray(v, dtype=np.float64) for k, v in landscapes.items()}

    def landscape(self, graph: ProteinGraph) -> np.ndarray:
        land = self.landscapes.get(graph.id, self.landscapes.get("*"))
        if land is None or land.shape != (graph.n_nodes, 20):
            raise UnknownMutation(f"no landscape of shape ({graph.n_nodes}, 20) for {graph.id!r}")
        return land

    def evaluate(self, graph, embedding, m: Mutation) -> float:
        return float(self.landscape(graph)[m.position, AA_INDEX[m.mut_aa]])

    def coverage(self, graph):
        return np.isfinite(self.landscape(graph))

    @classmethod
    def planted_optimum(cls, n_nodes: int, position: int, aa: str, protein_id: str = "*") -> "SyntheticOracle":
        """1.0 at the planted pair, ``-0.1 * |pos - position|`` everywhere else."""
        pos = np.arange(n_nodes, dtype=np.float64)
        land = np.repeat((-0.1 * np.abs(pos - position))[:, None], 20, axis=1)
        land[position, AA_INDEX[aa]] = 1.0
        return cls({protein_id: land})

    @classmethod
    def mixed_sign(cls, n_nodes: int, seed: int = 0, protein_id: str = "*", positive_fraction: float = 0.15) -> "SyntheticOracle":
        """Mostly destabilizing landscape with a few stabilizing positions and residues.

        value = position effect + residue effect + small interaction noise, shifted so
        that roughly ``positive_fraction`` of pairs are > 0.
        """
        rng = np.random.default_rng(seed)
        land = rng.normal(0.0, 1.0, n_nodes)[:, None] + rng.normal(0.0, 0.7, 20)[None, :]
        land += rng.normal(0.0, 0.2, (n_nodes, 20))
        land -= np.quantile(land, 1.0 - positive_fraction)
        return cls({protein_id: land})


class LearnedOracle(RewardOracle):
    """Rewards from a trained surrogate model (eval mode, deterministic).

    The surrogate embeds the wild type with its own encoder, so the ``embedding``
    argument (which may come from an agent running a different encoder or the
    passthrough ablation) is ignored.
    """

    def __init__(self, model):
        self.model = model

    def evaluate(self, graph, embedding, m: Mutation) -> float:
        return float(self.model.predict(graph, [m])[0])

    def evaluate_many(self, graph, embedding, ms):
        return self.model.predict(graph, ms)
