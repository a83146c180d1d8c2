"""Selection probabilities, cumulative rewards and plot-ready exports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyTrace, NonFinite
from .protein_graph import ProteinGraph
from .reward.oracles import substitution_codes

REWARD_MODES = ("max_substitution", "q1")


def _softmax_rows(x: np.ndarray, temperature: float, mask: np.ndarray | None) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    x = np.asarray(x, dtype=np.float64)
    valid = np.ones(x.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not np.all(np.isfinite(x[valid])):
        raise NonFinite("rewards must be finite")
    z = np.where(valid, x / temperature, -np.inf)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.where(valid, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def position_probabilities(position_rewards, temperature: float = 1.0, mask=None) -> np.ndarray:
    """Softmax over positions; masked entries get probability 0."""
    r = np.asarray(position_rewards, dtype=np.float64)
    if r.ndim != 1:
        raise DimMismatch(f"expected a vector, got shape {r.shape}")
    return _softmax_rows(r, temperature, mask)


def conditional_probabilities(mutation_rewards, temperature: float = 1.0, mask=None) -> np.ndarray:
    """Row-wise softmax of a ``(|V|, 19)`` reward matrix."""
    r = np.asarray(mutation_rewards, dtype=np.float64)
    if r.ndim != 2:
        raise DimMismatch(f"expected a matrix, got shape {r.shape}")
    return _softmax_rows(r, temperature, mask)


@dataclass(frozen=True)
class ProbabilityProfile:
    p_position: np.ndarray  # (|V|,)
    p_mut_given_pos: np.ndarray  # (|V|, 19)
    p_joint: np.ndarray  # (|V|, 19)

    @property
    def marginal(self) -> np.ndarray:
        """Per-position joint mass (equals ``p_position``)."""
        return self.p_joint.sum(axis=1)


def joint_profile(position_rewards, mutation_rewards, temperature: float = 1.0, mask=None) -> ProbabilityProfile:
    """``mask`` (``(|V|, 19)`` bool) removes unevaluable pairs and positions left without any."""
    pr = np.asarray(position_rewards, dtype=np.float64)
    mr = np.asarray(mutation_rewards, dtype=np.float64)
    if pr.ndim != 1 or mr.ndim != 2 or mr.shape[0] != pr.shape[0]:
        raise DimMismatch(f"position rewards {pr.shape} vs mutation rewards {mr.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != mr.shape:
            raise DimMismatch(f"mask {mask.shape} vs mutation rewards {mr.shape}")
        rows = mask.any(axis=1)
        pp = position_probabilities(pr, temperature, rows)
        pm = conditional_probabilities(np.where(rows[:, None], mr, 0.0), temperature, mask | ~rows[:, None])
        pm = np.where(rows[:, None], pm, 0.0)
    else:
        pp = position_probabilities(pr, temperature)
        pm = conditional_probabilities(mr, temperature)
    return ProbabilityProfile(pp, pm, pp[:, None] * pm)


def position_rewards_from(mutation_rewards: np.ndarray, q1: np.ndarray | None = None, mode: str = "max_substitution") -> np.ndarray:
    """Reduce to one reward per position: best substitution (default) or the Q1 score."""
    if mode == "max_substitution":
        return np.max(np.asarray(mutation_rewards, dtype=np.float64), axis=1)
    if mode == "q1":
        if q1 is None:
            raise ValueError("mode 'q1' needs Q1 scores")
        return np.asarray(q1, dtype=np.float64)
    raise ValueError(f"unknown mode {mode!r}; expected one of {REWARD_MODES}")


def cumulative_reward(trace) -> tuple[float, np.ndarray]:
    t = np.asarray(trace, dtype=np.float64)
    if t.size == 0:
        raise EmptyTrace("empty reward trace")
    curve = np.cumsum(t)
    return float(curve[-1]), curve


def top_designs(profile: ProbabilityProfile, graph: ProteinGraph, rewards: np.ndarray, k: int = 10) -> list[dict]:
    order = np.lexsort((np.arange(profile.p_joint.size), -profile.p_joint.ravel()))[:k]
    out = []
    for rank, flat in enumerate(order, start=1):
        j, c = divmod(int(flat), profile.p_joint.shape[1])
        wild = graph.nodes[j].aa_code
        out.append({
            "rank": rank, "position": j, "seq_index": int(graph.nodes[j].seq_index), "wild_aa": wild,
            "mut_aa": substitution_codes(wild)[c], "reward": float(rewards[j, c]), "p_joint": float(profile.p_joint[j, c]),
        })
    return out


def export_profiles(
    profile: ProbabilityProfile,
    rewards: np.ndarray,
    graph: ProteinGraph,
    directory: str | Path,
    mode: str = "max_substitution",
    top_k: int = 10,
) -> dict[str, Path]:
    """Write ``{id}_{mode}_positions.csv``, ``{id}_{mode}_mutations.csv`` and ``{id}_{mode}_summary.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = f"{graph.id}_{mode}"
    paths = {
        "positions": d / f"{stem}_positions.csv",
        "mutations": d / f"{stem}_mutations.csv",
        "summary": d / f"{stem}_summary.json",
    }
    with open(paths["positions"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "seq_index", "wild_aa", "p_position"])
        for j, r in enumerate(graph.nodes):
            w.writerow([j, r.seq_index, r.aa_code, repr(float(profile.p_position[j]))])
    with open(paths["mutations"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "mut_aa", "reward", "p_joint"])
        for j, r in enumerate(graph.nodes):
            for c, aa in enumerate(substitution_codes(r.aa_code)):
                w.writerow([j, aa, repr(float(rewards[j, c])), repr(float(profile.p_joint[j, c]))])
    summary = {"protein_id": graph.id, "mode": mode, "n_positions": graph.n_nodes, "top": top_designs(profile, graph, rewards, top_k)}
    paths["summary"].write_text(json.dumps(summary, indent=2))
    return paths
