"""Reference optimizers over the (position, substitution) space: random search,
exhaustive enumeration and Gaussian-process Bayesian optimization."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.stats import norm

from . import kernels
from .errors import EmptySpace, OracleFailure, SingularKernel, StabDesignError
from .protein_graph import AA_INDEX, ProteinGraph, default_table
from .reward.oracles import Mutation, RewardOracle, substitution_codes

log = logging.getLogger(__name__)

N_CANDIDATE_FEATURES = 46
BENCHMARK_COLUMNS = ("method", "protein_id", "repeat", "budget", "best_reward", "cumulative_reward", "seconds")


def candidate_space(graph: ProteinGraph, oracle: RewardOracle | None = None) -> list[tuple[int, int]]:
    """Unmasked ``(position, substitution slot)`` pairs in row-major order."""
    cov = oracle.coverage(graph) if oracle is not None else None
    out = []
    for j, r in enumerate(graph.nodes):
        for c, aa in enumerate(substitution_codes(r.aa_code)):
            if cov is None or cov[j, AA_INDEX[aa]]:
                out.append((j, c))
    return out


def to_mutation(graph: ProteinGraph, position: int, slot: int) -> Mutation:
    wild = graph.nodes[position].aa_code
    return Mutation(graph.id, position, wild, substitution_codes(wild)[slot])


def candidate_features(graph: ProteinGraph, position: int, slot: int) -> np.ndarray:
    """``[position/|V| ‖ one-hot wild ‖ one-hot mutant ‖ property delta]`` (46 values)."""
    m = to_mutation(graph, position, slot)
    props = default_table().normalized
    out = np.zeros(N_CANDIDATE_FEATURES)
    out[0] = position / graph.n_nodes
    out[1 + AA_INDEX[m.wild_aa]] = 1.0
    out[21 + AA_INDEX[m.mut_aa]] = 1.0
    out[41:] = props[AA_INDEX[m.mut_aa]] - props[AA_INDEX[m.wild_aa]]
    return out


def _query(oracle: RewardOracle, graph: ProteinGraph, m: Mutation) -> float:
    try:
        r = float(oracle.evaluate(graph, None, m))
    except StabDesignError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise OracleFailure(f"oracle failed on {m.label}: {exc}") from exc
    if not np.isfinite(r):
        raise OracleFailure(f"oracle returned {r} for {m.label}")
    return r


@dataclass
class SearchResult:
    best: Mutation
    best_reward: float
    mutations: list[Mutation]  # in query order
    rewards: np.ndarray  # in query order

    @property
    def running_best(self) -> np.ndarray:
        return np.maximum.accumulate(self.rewards)

    @property
    def cumulative_reward(self) -> float:
        return float(np.sum(self.rewards))


def _result(graph, space, picks, rewards) -> SearchResult:
    rewards = np.asarray(rewards, dtype=np.float64)
    i = int(np.argmax(rewards))
    muts = [to_mutation(graph, *space[p]) for p in picks]
    return SearchResult(muts[i], float(rewards[i]), muts, rewards)


def random_search(graph: ProteinGraph, oracle: RewardOracle, budget: int, rng: np.random.Generator) -> SearchResult:
    """Uniform draws without replacement; beyond the space size, draws repeat uniformly."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = candidate_space(graph, oracle)
    if not space:
        raise EmptySpace(f"{graph.id}: no evaluable mutations")
    n = len(space)
    picks = list(rng.choice(n, size=min(budget, n), replace=False))
    if budget > n:
        picks += list(rng.integers(n, size=budget - n))
    rewards = [_query(oracle, graph, to_mutation(graph, *space[p])) for p in picks]
    return _result(graph, space, picks, rewards)


@dataclass
class ExhaustiveResult:
    best: Mutation
    best_reward: float
    table: np.ndarray  # (|V|, 19); NaN where masked


def exhaustive_best(graph: ProteinGraph, oracle: RewardOracle) -> ExhaustiveResult:
    space = candidate_space(graph, oracle)
    if not space:
        raise EmptySpace(f"{graph.id}: no evaluable mutations")
    table = np.full((graph.n_nodes, 19), np.nan)
    for j, c in space:
        table[j, c] = _query(oracle, graph, to_mutation(graph, j, c))
    flat = np.where(np.isnan(table), -np.inf, table).ravel()
    k = int(np.argmax(flat))
    j, c = divmod(k, 19)
    return ExhaustiveResult(to_mutation(graph, j, c), float(table[j, c]), table)


class GaussianProcess:
    """Zero-mean GP regression with a fixed RBF kernel on standardized targets.

    Jitter starts at ``jitter`` and grows tenfold until the Cholesky factorization
    succeeds or ``max_jitter`` is exceeded.
    """

    def __init__(self, lengthscale: float = 1.0, variance: float = 1.0, jitter: float = 1e-8, max_jitter: float = 1e-4):
        if not 0.0 < jitter <= max_jitter:
            raise ValueError("need 0 < jitter <= max_jitter")
        self.lengthscale = lengthscale
        self.variance = variance
        self.jitter = jitter
        self.max_jitter = max_jitter
        self.used_jitter = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GaussianProcess":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        z = (y - self.y_mean) / self.y_std
        k = kernels.rbf_kernel(x, x, self.lengthscale, self.variance)
        jitter = self.jitter
        while True:
            try:
                self.chol = np.linalg.cholesky(k + jitter * np.eye(len(x)))
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
                if jitter > self.max_jitter * (1 + 1e-9):
                    raise SingularKernel(f"kernel matrix not positive definite with jitter up to {self.max_jitter}") from None
        self.used_jitter = jitter
        self.x = x
        self.alpha = _cho_solve(self.chol, z)
        return self

    def predict(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance in the original target units."""
        ks = kernels.rbf_kernel(np.atleast_2d(np.asarray(xs, dtype=np.float64)), self.x, self.lengthscale, self.variance)
        mean = ks @ self.alpha
        v = np.linalg.solve(self.chol, ks.T)
        var = np.maximum(self.variance - np.sum(v * v, axis=0), 0.0)
        return mean * self.y_std + self.y_mean, var * self.y_std**2


def _cho_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.solve(chol.T, np.linalg.solve(chol, b))


def expected_improvement(mean, var, best: float, xi: float = 0.0) -> np.ndarray:
    """EI for maximization; exactly ``max(mean - best - xi, 0)`` where the variance is 0."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(var, dtype=np.float64), 0.0))
    gain = mean - best - xi
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, gain / sigma, 0.0)
        ei = gain * norm.cdf(z) + sigma * norm.pdf(z)
    return np.maximum(np.where(sigma > 0, ei, np.maximum(gain, 0.0)), 0.0)


def bo_gp_optimize(
    graph: ProteinGraph,
    oracle: RewardOracle,
    budget: int,
    init_samples: int,
    rng: np.random.Generator,
    surrogate_factory: Callable[[], GaussianProcess] = GaussianProcess,
) -> SearchResult:
    """Uniform initial design, then one expected-improvement query per step.

    ``surrogate_factory`` may return any object with the ``fit``/``predict``
    interface of :class:`GaussianProcess`.
    """
    if not budget > init_samples >= 2:
        raise ValueError("need budget > init_samples >= 2")
    space = candidate_space(graph, oracle)
    if not space:
        raise EmptySpace(f"{graph.id}: no evaluable mutations")
    feats = np.stack([candidate_features(graph, j, c) for j, c in space])
    sd = feats.std(axis=0)
    feats = (feats - feats.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    picks = list(rng.choice(len(space), size=min(init_samples, len(space)), replace=False))
    rewards = [_query(oracle, graph, to_mutation(graph, *space[p])) for p in picks]
    seen = np.zeros(len(space), dtype=bool)
    seen[picks] = True
    while len(picks) < budget and not seen.all():
        gp = surrogate_factory().fit(feats[picks], np.array(rewards))
        free = np.flatnonzero(~seen)
        mean, var = gp.predict(feats[free])
        p = int(free[np.argmax(expected_improvement(mean, var, max(rewards)))])
        picks.append(p)
        seen[p] = True
        rewards.append(_query(oracle, graph, to_mutation(graph, *space[p])))
    return _result(graph, space, picks, rewards)


# ---------------------------------------------------------------------------
# benchmark harness
# ---------------------------------------------------------------------------

Method = Callable[[ProteinGraph, RewardOracle, int, np.random.Generator], SearchResult]


def random_method(graph, oracle, budget, rng) -> SearchResult:
    return random_search(graph, oracle, budget, rng)


def exhaustive_method(graph, oracle, budget, rng) -> SearchResult:
    """Ignores the budget and evaluates the whole space."""
    space = candidate_space(graph, oracle)
    rewards = [_query(oracle, graph, to_mutation(graph, j, c)) for j, c in space]
    return _result(graph, space, list(range(len(space))), rewards)


def bo_gp_method(init_samples: int = 5) -> Method:
    def run(graph, oracle, budget, rng):
        return bo_gp_optimize(graph, oracle, budget, min(init_samples, budget - 1), rng)
    return run


def agent_method(agent) -> Method:
    """Query the oracle on a trained agent's top-``budget`` ranked designs."""
    def run(graph, oracle, budget, rng):
        ranked = agent.design(graph).ranked[:budget]
        if not ranked:
            raise EmptySpace(f"{graph.id}: agent produced no designs")
        space = [(d["position"], substitution_codes(d["wild_aa"]).index(d["mut_aa"])) for d in ranked]
        rewards = [_query(oracle, graph, to_mutation(graph, j, c)) for j, c in space]
        return _result(graph, space, list(range(len(space))), rewards)
    return run


@dataclass
class BenchmarkTable:
    rows: list[dict]

    def summary(self) -> list[dict]:
        """Mean and std per (method, protein) and per method across proteins (``protein_id='*'``)."""
        out = []
        methods = list(dict.fromkeys(r["method"] for r in self.rows))
        proteins = list(dict.fromkeys(r["protein_id"] for r in self.rows))
        for meth in methods:
            for pid in proteins + ["*"]:
                sel = [r for r in self.rows if r["method"] == meth and (pid == "*" or r["protein_id"] == pid)]
                if not sel:
                    continue
                entry = {"method": meth, "protein_id": pid, "n": len(sel)}
                for col in ("best_reward", "cumulative_reward", "seconds"):
                    vals = np.array([r[col] for r in sel])
                    entry[f"{col}_mean"] = float(vals.mean())
                    entry[f"{col}_std"] = float(vals.std())
                out.append(entry)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=BENCHMARK_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"rows": self.rows, "summary": self.summary()}, indent=2))


def benchmark(
    graphs: list[ProteinGraph],
    methods: Mapping[str, Method],
    oracle: RewardOracle,
    budget: int,
    repeats: int = 10,
    seed: int = 0,
) -> BenchmarkTable:
    """Every method on every protein ``repeats`` times, repeat ``i`` seeded with ``seed + i``."""
    if not methods:
        raise ValueError("methods must be nonempty")
    rows = []
    for name, method in methods.items():
        for g in graphs:
            for rep in range(repeats):
                rng = np.random.default_rng(seed + rep)
                t0 = time.perf_counter()
                res = method(g, oracle, budget, rng)
                secs = time.perf_counter() - t0
                rows.append({
                    "method": name, "protein_id": g.id, "repeat": rep, "budget": budget,
                    "best_reward": res.best_reward, "cumulative_reward": res.cumulative_reward, "seconds": secs,
                })
                log.info("%s %s repeat %d: best %.3f", name, g.id, rep, res.best_reward)
    return BenchmarkTable(rows)
