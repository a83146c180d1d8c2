"""Hierarchical deep Q-learning over (position, substitution) mutation actions.

Q1 scores every node from ``[super ‖ node_j]``; Q2 scores the 19 substitutions
at the chosen node from ``[super ‖ node_a1 ‖ one-hot(slot)]``. One decision
therefore costs |V| + 19 network evaluations instead of |V| x 19.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .encoder import EncoderConfig, GraphEmbedding, encode, init_encoder
from .errors import AllMasked, DataError, EmptyCorpus, EmptyGraph, InvalidPosition, OracleFailure, StabDesignError
from .nn import ops as T
from .nn.params import ParameterStore
from .nn.tensor import Tensor
from .protein_graph import AA_INDEX, ProteinGraph, apply_mutation
from .replay import Experience, ReplayBuffer
from .reward.oracles import Mutation, RewardOracle, substitution_codes

log = logging.getLogger(__name__)

N_SUBSTITUTIONS = 19
_EYE19 = np.eye(N_SUBSTITUTIONS)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int | None = None  # None: half of the training episodes
    replay_capacity: int = 2000
    batch_size: int = 32
    target_sync_period: int = 50  # in train steps
    max_steps_per_episode: int = 1
    hidden_dim: int = 64
    lr: float = 1e-3
    reward_threshold: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must be <= epsilon_start")
        if self.replay_capacity < self.batch_size:
            raise ValueError("replay_capacity must be >= batch_size")
        if self.max_steps_per_episode < 1:
            raise ValueError("max_steps_per_episode must be >= 1")


# ---------------------------------------------------------------------------
# Q-heads (pure functions over parameters)
# ---------------------------------------------------------------------------

def init_q_networks(embed_dim: int, hidden_dim: int, seed=0) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    nn.init_mlp(store, "q1", [2 * embed_dim, hidden_dim, hidden_dim, 1], rng)
    nn.init_mlp(store, "q2", [2 * embed_dim + N_SUBSTITUTIONS, hidden_dim, hidden_dim, 1], rng)
    return store


def _head(params: ParameterStore, name: str, x) -> Tensor:
    out = nn.mlp(T.as_tensor(x), params.scope(name), 3)
    return T.reshape(out, out.shape[:-1])


def q1_inputs(embedding: GraphEmbedding) -> np.ndarray:
    n = embedding.n_nodes
    return np.concatenate([np.broadcast_to(embedding.super_node, (n, embedding.super_node.shape[0])), embedding.node_embeddings], axis=1)


def q2_inputs(embedding: GraphEmbedding, a1: int) -> np.ndarray:
    ctx = np.concatenate([embedding.super_node, embedding.node_embeddings[a1]])
    return np.concatenate([np.broadcast_to(ctx, (N_SUBSTITUTIONS, ctx.shape[0])), _EYE19.astype(ctx.dtype)], axis=1)


def q1_values(params: ParameterStore, embedding: GraphEmbedding, mask: np.ndarray | None = None) -> np.ndarray:
    if embedding.n_nodes == 0:
        raise EmptyGraph("no positions to score")
    q = _head(params, "q1", q1_inputs(embedding)).data.astype(np.float64)
    if mask is not None:
        q = np.where(mask, q, -np.inf)
    return q


def q2_values(params: ParameterStore, embedding: GraphEmbedding, a1: int, mask: np.ndarray | None = None) -> np.ndarray:
    if not 0 <= a1 < embedding.n_nodes:
        raise InvalidPosition(f"position {a1} outside 0..{embedding.n_nodes - 1}")
    q = _head(params, "q2", q2_inputs(embedding, a1)).data.astype(np.float64)
    if mask is not None:
        q = np.where(mask, q, -np.inf)
    return q


def select_position(scores: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """ε-greedy over finite entries (``-inf`` = masked); greedy ties go to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    allowed = np.flatnonzero(np.isfinite(scores))
    if allowed.size == 0:
        raise AllMasked("every action is masked")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(allowed[rng.integers(allowed.size)])
    return int(np.argmax(np.where(np.isfinite(scores), scores, -np.inf)))


def td_targets(batch: list[Experience], target_params: ParameterStore, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Bootstrapped targets for both heads.

    Terminal: ``r``. Otherwise Q1 uses ``r + γ max_j Q1⁻(s', j)`` and Q2 uses
    ``r + γ max_c Q2⁻(s', j*, c)`` at the greedy target-Q1 position ``j*``.
    """
    y1 = np.empty(len(batch))
    y2 = np.empty(len(batch))
    for i, e in enumerate(batch):
        if e.terminal or gamma == 0.0:
            y1[i] = y2[i] = e.reward
            continue
        q1 = q1_values(target_params, e.next_state, e.next_position_mask)
        j = int(np.argmax(q1))
        sub_mask = None if e.next_substitution_mask is None else e.next_substitution_mask[j]
        q2 = q2_values(target_params, e.next_state, j, sub_mask)
        y1[i] = e.reward + gamma * float(np.max(q1))
        y2[i] = e.reward + gamma * float(np.max(q2))
    return y1, y2


def head_losses(params: ParameterStore, batch: list[Experience], y1: np.ndarray, y2: np.ndarray) -> tuple[Tensor, Tensor]:
    x1 = np.stack([np.concatenate([e.state.super_node, e.state.node_embeddings[e.a1]]) for e in batch])
    x2 = np.stack([
        np.concatenate([e.state.super_node, e.state.node_embeddings[e.a1], _EYE19[e.a2].astype(e.state.super_node.dtype)])
        for e in batch
    ])
    return T.mse(_head(params, "q1", x1), y1), T.mse(_head(params, "q2", x2), y2)


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------

@dataclass
class Step:
    mutation: Mutation
    reward: float
    q_evaluations: int  # Q-network evaluations spent choosing this action
    flat_reference: int  # evaluations a flat |V| x 19 agent would need


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    experiences: list[Experience] = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))

    @property
    def mutations(self) -> list[Mutation]:
        return [s.mutation for s in self.steps]


@dataclass
class CurvePoint:
    episode: int
    reward: float
    epsilon: float
    loss1: float
    loss2: float


@dataclass
class DesignResult:
    protein_id: str
    ranked: list[dict]
    q1: np.ndarray  # (|V|,)
    q2: np.ndarray  # (|V|, 19)
    greedy: Trajectory
    substitutions: list[str]  # the 19 codes per position, aligned with q2 columns


class HierarchicalAgent:
    def __init__(
        self,
        config: AgentConfig = AgentConfig(),
        encoder_config: EncoderConfig = EncoderConfig(),
        encoder_params: ParameterStore | None = None,
        seed: int = 0,
        passthrough: bool = False,
    ):
        self.config = config
        self.encoder_config = encoder_config
        self.passthrough = passthrough
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.encoder_params = encoder_params if encoder_params is not None else init_encoder(encoder_config, seed)
        self.q = init_q_networks(encoder_config.embed_dim, config.hidden_dim, seed + 1)
        self.q_target = self.q.copy()
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.train_steps = 0
        self.episodes_completed = 0
        self.q_evaluations = 0
        self.flat_evaluations = 0
        self._embed_cache: dict = {}

    # -- state encoding ----------------------------------------------------
    def embed(self, graph: ProteinGraph) -> GraphEmbedding:
        key = (graph.id, graph.sequence)
        emb = self._embed_cache.get(key)
        if emb is None:
            emb = encode(graph, self.encoder_config, self.encoder_params, passthrough=self.passthrough)
            self._embed_cache[key] = emb
        return emb

    # -- scoring -----------------------------------------------------------
    def q1_scores(self, embedding: GraphEmbedding, mask=None) -> np.ndarray:
        q = q1_values(self.q, embedding, mask)
        self.q_evaluations += embedding.n_nodes
        return q

    def q2_scores(self, embedding: GraphEmbedding, a1: int, mask=None) -> np.ndarray:
        q = q2_values(self.q, embedding, a1, mask)
        self.q_evaluations += N_SUBSTITUTIONS
        return q

    def flat_scores(self, embedding: GraphEmbedding, sub_mask=None) -> np.ndarray:
        """All |V| x 19 pair scores (what a non-hierarchical agent must evaluate)."""
        n = embedding.n_nodes
        x = np.concatenate([q2_inputs(embedding, j) for j in range(n)])
        q = _head(self.q, "q2", x).data.astype(np.float64).reshape(n, N_SUBSTITUTIONS)
        self.flat_evaluations += n * N_SUBSTITUTIONS
        if sub_mask is not None:
            q = np.where(sub_mask, q, -np.inf)
        return q

    @staticmethod
    def masks(graph: ProteinGraph, oracle: RewardOracle | None) -> tuple[np.ndarray | None, np.ndarray | None]:
        cov = oracle.coverage(graph) if oracle is not None else None
        if cov is None:
            return None, None
        sub = np.zeros((graph.n_nodes, N_SUBSTITUTIONS), dtype=bool)
        for j, r in enumerate(graph.nodes):
            sub[j] = cov[j, [AA_INDEX[a] for a in substitution_codes(r.aa_code)]]
        return sub.any(axis=1), sub

    def epsilon(self, episode: int, decay_episodes: int) -> float:
        c = self.config
        frac = min(1.0, episode / max(1, decay_episodes))
        return c.epsilon_start + frac * (c.epsilon_end - c.epsilon_start)

    # -- learning ----------------------------------------------------------
    def train_step(self, batch: list[Experience]) -> tuple[float, float]:
        y1, y2 = td_targets(batch, self.q_target, self.config.gamma)
        with nn.Tape() as tape:
            l1, l2 = head_losses(self.q, batch, y1, y2)
        g1 = tape.gradient(l1, self.q.subset("q1."))
        g2 = tape.gradient(l2, self.q.subset("q2."))
        nn.adam_step(self.q, {**g1, **g2}, self.config.lr)
        self.train_steps += 1
        if self.train_steps % self.config.target_sync_period == 0:
            self.sync_targets()
        return l1.item(), l2.item()

    def sync_targets(self) -> None:
        self.q_target.load_values(self.q)

    def run_episode(
        self,
        graph: ProteinGraph,
        oracle: RewardOracle,
        mode: str = "explore",
        epsilon: float = 0.0,
        learn: bool = False,
        losses: list | None = None,
    ) -> Trajectory:
        if mode not in ("explore", "greedy"):
            raise ValueError(f"mode must be 'explore' or 'greedy', got {mode!r}")
        eps = epsilon if mode == "explore" else 0.0
        traj = Trajectory()
        state = graph
        pos_mask, sub_mask = self.masks(state, oracle)
        for t in range(self.config.max_steps_per_episode):
            emb = self.embed(state)
            before = self.q_evaluations
            a1 = select_position(self.q1_scores(emb, pos_mask), eps, self.rng)
            a2 = select_position(self.q2_scores(emb, a1, None if sub_mask is None else sub_mask[a1]), eps, self.rng)
            wild = state.nodes[a1].aa_code
            mut = Mutation(graph.id, a1, wild, substitution_codes(wild)[a2])
            try:
                reward = float(oracle.evaluate(state, emb, mut))
            except StabDesignError:
                raise
            except Exception as exc:  # noqa: BLE001 - surface as a typed failure
                raise OracleFailure(f"oracle failed on {mut.label}: {exc}") from exc
            nxt = apply_mutation(state, a1, mut.mut_aa)
            next_pos_mask, next_sub_mask = self.masks(nxt, oracle)
            terminal = t == self.config.max_steps_per_episode - 1 or (
                self.config.reward_threshold is not None and reward >= self.config.reward_threshold
            )
            if next_pos_mask is not None and not next_pos_mask.any():
                terminal = True
            exp = Experience(emb, a1, a2, reward, self.embed(nxt), terminal, next_pos_mask, next_sub_mask)
            traj.steps.append(Step(mut, reward, self.q_evaluations - before, emb.n_nodes * N_SUBSTITUTIONS))
            traj.experiences.append(exp)
            if learn:
                self.buffer.add(exp)
                if len(self.buffer) >= self.config.batch_size:
                    out = self.train_step(self.buffer.sample(self.config.batch_size, self.rng))
                    if losses is not None:
                        losses.append(out)
            if terminal:
                break
            state, pos_mask, sub_mask = nxt, next_pos_mask, next_sub_mask
        return traj

    def train(self, graphs: list[ProteinGraph], oracle: RewardOracle, episodes: int) -> list[CurvePoint]:
        """ε-greedy episodes over proteins drawn uniformly from ``graphs``, one
        Q update per environment step once the buffer holds a full batch.

        ε falls linearly from ``epsilon_start`` to ``epsilon_end`` over the first
        half of all episodes (or ``epsilon_decay_episodes``), then stays flat.
        """
        if not graphs:
            raise EmptyCorpus("no proteins to train on")
        if episodes < 1:
            raise ValueError("episodes must be >= 1")
        # the schedule runs on absolute episode numbers so a resumed run continues it
        start = self.episodes_completed
        decay = self.config.epsilon_decay_episodes or max(1, (start + episodes) // 2)
        curve = []
        for i in range(start, start + episodes):
            eps = self.epsilon(i, decay)
            g = graphs[int(self.rng.integers(len(graphs)))]
            losses: list = []
            traj = self.run_episode(g, oracle, "explore", eps, learn=True, losses=losses)
            self.episodes_completed += 1
            l1, l2 = (np.mean(losses, axis=0) if losses else (float("nan"), float("nan")))
            curve.append(CurvePoint(self.episodes_completed, traj.total_reward, eps, float(l1), float(l2)))
        return curve

    # -- inference ---------------------------------------------------------
    def design(self, graph: ProteinGraph, oracle: RewardOracle | None = None) -> DesignResult:
        """Greedy rollout plus the full Q-score dump, ranked hierarchically
        (position by Q1, then substitution by Q2)."""
        if graph.n_nodes == 0:
            raise EmptyGraph(f"{graph.id}: empty graph")
        pos_mask, sub_mask = self.masks(graph, oracle)
        emb = self.embed(graph)
        q1 = q1_values(self.q, emb, pos_mask)
        q2 = self.flat_scores(emb, sub_mask)
        greedy = self.run_episode(graph, oracle, "greedy") if oracle is not None else self._greedy_scores_only(graph)
        rows = []
        for j in range(graph.n_nodes):
            wild = graph.nodes[j].aa_code
            for c, aa in enumerate(substitution_codes(wild)):
                if np.isfinite(q1[j]) and np.isfinite(q2[j, c]):
                    rows.append((-q1[j], -q2[j, c], j, c, aa, wild))
        rows.sort()
        ranked = [
            {
                "rank": r + 1, "position": j, "seq_index": int(graph.nodes[j].seq_index),
                "wild_aa": wild, "mut_aa": aa, "q1": float(-nq1), "q2": float(-nq2),
            }
            for r, (nq1, nq2, j, c, aa, wild) in enumerate(rows)
        ]
        subs = [substitution_codes(r.aa_code) for r in graph.nodes]
        return DesignResult(graph.id, ranked, q1, q2, greedy, subs)

    def _greedy_scores_only(self, graph: ProteinGraph) -> Trajectory:
        emb = self.embed(graph)
        a1 = select_position(q1_values(self.q, emb), 0.0, self.rng)
        a2 = select_position(q2_values(self.q, emb, a1), 0.0, self.rng)
        wild = graph.nodes[a1].aa_code
        traj = Trajectory()
        traj.steps.append(Step(Mutation(graph.id, a1, wild, substitution_codes(wild)[a2]), float("nan"), 0, 0))
        return traj

    # -- persistence -------------------------------------------------------
    def save(self, directory: str | Path, extra: dict | None = None) -> Path:
        from .nn.io import save_weights

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        store = ParameterStore()
        for k, p in self.q.items():
            store.params[k] = p
            store.m[k], store.v[k] = self.q.m[k], self.q.v[k]
        for k, p in self.q_target.items():
            store.params["target." + k] = p
            store.m["target." + k], store.v["target." + k] = self.q_target.m[k], self.q_target.v[k]
        for k, p in self.encoder_params.subset("encoder.").items():
            store.params[k] = p
            store.m[k], store.v[k] = self.encoder_params.m[k], self.encoder_params.v[k]
        store.step = self.q.step
        save_weights(store, d / "agent.sdw")
        manifest = {
            "kind": "agent",
            "agent_config": asdict(self.config),
            "encoder_config": asdict(self.encoder_config),
            "passthrough": self.passthrough,
            "seed": self.seed,
            "episodes_completed": self.episodes_completed,
            "train_steps": self.train_steps,
            **(extra or {}),
        }
        (d / "agent.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory: str | Path) -> "HierarchicalAgent":
        from .nn.io import load_weights

        d = Path(directory)
        manifest = json.loads((d / "agent.json").read_text())
        store = load_weights(d / "agent.sdw")
        agent = cls(
            AgentConfig(**manifest["agent_config"]),
            EncoderConfig(**manifest["encoder_config"]),
            seed=manifest["seed"],
            passthrough=manifest["passthrough"],
        )
        for target, prefix in ((agent.q, ""), (agent.q_target, "target."), (agent.encoder_params, None)):
            names = list(target.params) if prefix is not None else list(target.subset("encoder."))
            for k in names:
                src = (prefix or "") + k
                if src not in store.params:
                    raise DataError(f"checkpoint lacks parameter {src!r}")
                if store.params[src].shape != target.params[k].shape:
                    raise DataError(
                        f"checkpoint parameter {src!r} has shape {store.params[src].shape}, "
                        f"expected {target.params[k].shape}"
                    )
                target.params[k].data = store.params[src].data.astype(target.params[k].data.dtype)
                target.m[k], target.v[k] = store.m[src], store.v[src]
        agent.q.step = store.step
        agent.episodes_completed = manifest["episodes_completed"]
        agent.train_steps = manifest.get("train_steps", 0)
        return agent


def write_curve(path: str | Path, curve: list[CurvePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "reward", "epsilon", "loss1", "loss2"])
        for p in curve:
            w.writerow([p.episode, repr(p.reward), repr(p.epsilon), repr(p.loss1), repr(p.loss2)])
