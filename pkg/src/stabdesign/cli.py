"""Command-line entry point: ``stabdesign {train-surrogate,train-agent,design,benchmark,eval}``.

Every run writes ``manifest.json`` into its output directory. Passing that
manifest back through ``--config`` repeats the run with the same settings.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .agent import HierarchicalAgent, write_curve
from .baselines import (
    agent_method, benchmark, bo_gp_method, exhaustive_best, exhaustive_method, random_method,
)
from .config import RunConfig, dump_yaml, load_config, resolve_path
from .encoder import EncoderConfig, init_encoder, pretrain_unsupervised
from .errors import ConfigError, DataError, StabDesignError
from .evaluation import export_profiles, joint_profile, position_rewards_from
from .nn import load_weights, save_weights
from .nn.params import ParameterStore
from .protein_graph import AA_INDEX, ProteinGraph, load_graph
from .reward import (
    LearnedOracle, RewardOracle, SurrogateConfig, SurrogateModel, SyntheticOracle, TableOracle, metrics,
    read_ddg_csv, resolve_records, train_surrogate,
)

log = logging.getLogger("stabdesign")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _versions() -> dict:
    import scipy
    import sklearn
    import yaml

    return {
        "stabdesign": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "scipy": scipy.__version__, "scikit-learn": sklearn.__version__, "pyyaml": yaml.__version__,
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, base: Path, outputs: list[Path], extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": _versions(),
        "base_dir": str(base),
        "config": cfg.to_dict(),
        "outputs": {p.relative_to(out).as_posix(): _sha256(p) for p in sorted(outputs)},
        **(extra or {}),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_proteins(cfg: RunConfig, base: Path, required: str = "data.pdb_files") -> dict[str, ProteinGraph]:
    paths = [resolve_path(p, base) for p in cfg.data.pdb_files]
    if cfg.data.pdb_dir:
        d = resolve_path(cfg.data.pdb_dir, base)
        if not d.is_dir():
            raise DataError(f"data.pdb_dir: {d} is not a directory")
        paths += sorted(d.glob("*.pdb"))
    if not paths:
        raise ConfigError(f"{required} (or data.pdb_dir) is required")
    graphs = {}
    for p in paths:
        if not p.is_file():
            raise DataError(f"structure file {p} does not exist")
        g = load_graph(p, cfg.data.chain)
        graphs[g.id] = g
    return graphs


def load_records(cfg: RunConfig, base: Path, graphs):
    if not cfg.data.ddg_csv:
        raise ConfigError("data.ddg_csv is required for this command")
    path = resolve_path(cfg.data.ddg_csv, base)
    if not path.is_file():
        raise DataError(f"data.ddg_csv: {path} does not exist")
    raw = read_ddg_csv(path, cfg.data.flip_sign)
    kept = [r for r in raw if r.protein_id in graphs]
    if len(kept) < len(raw):
        skipped = sorted({r.protein_id for r in raw} - set(graphs))
        log.warning("ignoring %d record(s) for proteins without a loaded structure: %s", len(raw) - len(kept), ", ".join(skipped))
    if not kept:
        raise DataError(f"data.ddg_csv: no records for the loaded proteins ({', '.join(graphs)})")
    return resolve_records(kept, graphs)


def save_surrogate(model: SurrogateModel, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    w = save_weights(model.params, directory / "surrogate.sdw")
    c = directory / "surrogate.json"
    c.write_text(json.dumps({"kind": "surrogate", "config": asdict(model.config)}, indent=2, sort_keys=True))
    return [w, c]


def load_surrogate(directory: Path) -> SurrogateModel:
    meta_path = directory / "surrogate.json"
    if not meta_path.is_file():
        raise DataError(f"{directory} holds no surrogate (missing surrogate.json)")
    raw = json.loads(meta_path.read_text())["config"]
    enc = EncoderConfig(**raw.pop("encoder"))
    config = SurrogateConfig(encoder=enc, **raw)
    stored = load_weights(directory / "surrogate.sdw")
    model = SurrogateModel(config)
    for k, p in model.params.items():
        if k not in stored.params:
            raise DataError(f"surrogate weights lack {k!r}")
        if stored.params[k].shape != p.shape:
            raise DataError(f"surrogate weight {k!r} has shape {stored.params[k].shape}, expected {p.shape}")
        p.data = stored.params[k].data.astype(p.data.dtype)
    model.params.buffers.update({k: v.copy() for k, v in stored.buffers.items()})
    return model


def build_oracle(cfg: RunConfig, base: Path, graphs: dict[str, ProteinGraph]) -> tuple[RewardOracle, ParameterStore | None]:
    """The configured oracle plus, for a surrogate oracle, its encoder weights for the agent."""
    o = cfg.oracle
    if o.kind == "table":
        return TableOracle(load_records(cfg, base, graphs)), None
    if o.kind == "surrogate":
        if not o.surrogate_dir:
            raise ConfigError("oracle.surrogate_dir is required when oracle.kind is surrogate")
        model = load_surrogate(resolve_path(o.surrogate_dir, base))
        return LearnedOracle(model), model.params
    if o.planted_aa not in AA_INDEX:
        raise ConfigError(f"oracle.planted_aa: {o.planted_aa!r} is not a canonical amino acid")
    lands = {}
    for pid, g in graphs.items():
        if o.landscape == "planted":
            pos = g.n_nodes // 2 if o.planted_position is None else o.planted_position
            if not 0 <= pos < g.n_nodes:
                raise ConfigError(f"oracle.planted_position {pos} outside {pid} ({g.n_nodes} residues)")
            if g.nodes[pos].aa_code == o.planted_aa:
                raise ConfigError(f"oracle.planted_aa equals the wild type at {pid} position {pos}")
            lands[pid] = SyntheticOracle.planted_optimum(g.n_nodes, pos, o.planted_aa).landscapes["*"]
        else:
            lands[pid] = SyntheticOracle.mixed_sign(g.n_nodes, o.landscape_seed, positive_fraction=o.positive_fraction).landscapes["*"]
    return SyntheticOracle(lands), None


def _output_dir(cfg: RunConfig, base: Path, override: str | None) -> Path:
    # outputs land relative to the working directory, never next to a bundled config
    out = Path(override if override else cfg.output_dir).expanduser()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train_surrogate(cfg: RunConfig, base: Path, out: Path) -> list[Path]:
    graphs = load_proteins(cfg, base)
    records = load_records(cfg, base, graphs)
    enc = None
    outputs = []
    if cfg.pretrain.steps > 0:
        res = pretrain_unsupervised(list(graphs.values()), cfg.encoder, cfg.pretrain.steps, cfg.pretrain.lr, cfg.pretrain.mask_rate, cfg.seed)
        enc = res.params
        outputs.append(_write_json(out / "pretrain_losses.json", res.losses))
    model, report = train_surrogate(records, graphs, cfg.surrogate_config(), enc)
    outputs.append(_write_json(out / "metrics.json", report.to_json()))
    loss_path = out / "loss_history.csv"
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch", "loss"])
        w.writerows([i, repr(v)] for i, v in enumerate(report.loss_history))
    outputs.append(loss_path)
    outputs += save_surrogate(model, out / "surrogate")
    m = report.mean
    print(f"{len(report.folds)} folds: rmse={m.get('rmse')} r2={m.get('r2')} pcc={m.get('pcc')}")
    return outputs


def cmd_train_agent(cfg: RunConfig, base: Path, out: Path) -> list[Path]:
    graphs = load_proteins(cfg, base)
    oracle, surrogate_params = build_oracle(cfg, base, graphs)
    if cfg.agent.resume_from:
        agent = HierarchicalAgent.load(resolve_path(cfg.agent.resume_from, base))
        # fresh stream derived from progress so a resumed run is itself reproducible
        agent.rng = np.random.default_rng([cfg.seed, agent.episodes_completed])
    else:
        if surrogate_params is not None:
            enc = ParameterStore()
            for k, p in surrogate_params.subset("encoder.").items():
                enc.add(k, p.data)
            enc_cfg = cfg.encoder
        else:
            enc_cfg = cfg.encoder
            enc = init_encoder(enc_cfg, cfg.seed)
        agent = HierarchicalAgent(cfg.agent_config(), enc_cfg, enc, seed=cfg.seed, passthrough=cfg.encoder_passthrough)
    curve = agent.train(list(graphs.values()), oracle, cfg.agent.episodes)
    curve_path = out / "learning_curve.csv"
    write_curve(curve_path, curve)
    ckpt = agent.save(out / "checkpoint", {"config_hash": cfg.hash()})
    greedy = {}
    for pid, g in graphs.items():
        traj = agent.run_episode(g, oracle, "greedy")
        greedy[pid] = [{"mutation": s.mutation.label, "reward": s.reward} for s in traj.steps]
    summary = _write_json(out / "greedy.json", greedy)
    print(f"trained to episode {agent.episodes_completed}; greedy: " + ", ".join(f"{k}={v[0]['mutation']}" for k, v in greedy.items()))
    return [curve_path, summary, ckpt / "agent.sdw", ckpt / "agent.json"]


def cmd_design(args, cfg: RunConfig, base: Path, out: Path) -> list[Path]:
    ckpt = Path(args.checkpoint)
    if not (ckpt / "agent.json").is_file():
        raise DataError(f"{ckpt} is not an agent checkpoint (missing agent.json)")
    agent = HierarchicalAgent.load(ckpt)
    pdb = Path(args.pdb)
    if not pdb.is_file():
        raise DataError(f"structure file {pdb} does not exist")
    graph = load_graph(pdb, args.chain or cfg.data.chain)
    res = agent.design(graph)
    mode = args.mode or cfg.eval.mode
    rewards = res.q2
    prof = joint_profile(position_rewards_from(rewards, res.q1, mode), rewards, cfg.eval.temperature)
    paths = export_profiles(prof, rewards, graph, out, mode, args.top_k or cfg.eval.top_k)
    ranked_path = out / f"{graph.id}_ranked.csv"
    with open(ranked_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(res.ranked[0]))
        w.writeheader()
        w.writerows(res.ranked)
    top = res.ranked[0]
    print(f"{graph.id}: top design {top['wild_aa']}{top['seq_index']}{top['mut_aa']}")
    return [ranked_path, *paths.values()]


def cmd_benchmark(cfg: RunConfig, base: Path, out: Path) -> list[Path]:
    graphs = load_proteins(cfg, base)
    oracle, _ = build_oracle(cfg, base, graphs)
    b = cfg.benchmark
    methods = {}
    for name in b.methods:
        if name == "random":
            methods[name] = random_method
        elif name == "exhaustive":
            methods[name] = exhaustive_method
        elif name == "bo_gp":
            if b.budget <= 2:
                raise ConfigError("benchmark.budget must exceed 2 for bo_gp")
            methods[name] = bo_gp_method(b.init_samples)
        elif name == "hrl":
            if not b.agent_checkpoint:
                raise ConfigError("benchmark.agent_checkpoint is required for the hrl method")
            methods[name] = agent_method(HierarchicalAgent.load(resolve_path(b.agent_checkpoint, base)))
    table = benchmark(list(graphs.values()), methods, oracle, b.budget, b.repeats, cfg.seed)
    csv_path, json_path = out / "benchmark.csv", out / "benchmark.json"
    table.write_csv(csv_path)
    table.write_json(json_path)
    for row in table.summary():
        if row["protein_id"] == "*":
            print(f"{row['method']}: best {row['best_reward_mean']:.3f} ± {row['best_reward_std']:.3f}, "
                  f"cumulative {row['cumulative_reward_mean']:.3f}")
    return [csv_path, json_path]


def cmd_eval(cfg: RunConfig, base: Path, out: Path) -> list[Path]:
    """Joint-probability profiles from the oracle's full reward table, plus
    surrogate metrics against ``data.ddg_csv`` when the oracle is a surrogate."""
    graphs = load_proteins(cfg, base)
    oracle, _ = build_oracle(cfg, base, graphs)
    if cfg.eval.mode != "max_substitution":
        raise ConfigError("eval.mode must be max_substitution for oracle profiles (Q1 scores need the design command)")
    outputs = []
    summary = {}
    for pid, g in graphs.items():
        ex = exhaustive_best(g, oracle)
        mask = ~np.isnan(ex.table)
        rewards = np.where(mask, ex.table, -np.inf)
        prof = joint_profile(position_rewards_from(rewards), rewards, cfg.eval.temperature, mask)
        outputs += export_profiles(prof, rewards, g, out, "oracle", cfg.eval.top_k).values()
        summary[pid] = {"best": ex.best.label, "best_reward": ex.best_reward}
    if cfg.oracle.kind == "surrogate" and cfg.data.ddg_csv:
        records = load_records(cfg, base, graphs)
        pred = np.array([oracle.evaluate(graphs[r.mutation.protein_id], None, r.mutation) for r in records])
        summary["metrics"] = metrics(pred, [r.ddg for r in records]).to_json()
    outputs.append(_write_json(out / "eval.json", summary))
    return outputs


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stabdesign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config or a previous run's manifest.json")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. --set agent.episodes=500 (repeatable)")
        p.add_argument("--out", help="output directory (default: output_dir from the config)")
        return p

    common(sub.add_parser("train-surrogate", help="k-fold train the ΔΔG surrogate and save weights"))
    common(sub.add_parser("train-agent", help="train the hierarchical Q-learning agent"))
    d = common(sub.add_parser("design", help="rank mutations for a structure with a trained agent"))
    d.add_argument("--checkpoint", required=True, help="agent checkpoint directory")
    d.add_argument("--pdb", required=True, help="structure to design")
    d.add_argument("--chain", help="chain to read (default: first chain in the file)")
    d.add_argument("--mode", choices=("max_substitution", "q1"), help="position-reward reduction")
    d.add_argument("--top-k", type=int, help="number of designs in the summary JSON")
    common(sub.add_parser("benchmark", help="compare search methods on the configured proteins"))
    common(sub.add_parser("eval", help="export joint-probability profiles from the oracle"))
    sub.add_parser("show-config", help="print the default configuration as YAML")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "show-config":
        print(dump_yaml(RunConfig()), end="")
        return EXIT_OK
    try:
        cfg, base = load_config(args.config, args.overrides)
        out = _output_dir(cfg, base, args.out)
        extra = None
        if args.command == "train-surrogate":
            outputs = cmd_train_surrogate(cfg, base, out)
        elif args.command == "train-agent":
            outputs = cmd_train_agent(cfg, base, out)
        elif args.command == "design":
            outputs = cmd_design(args, cfg, base, out)
            extra = {"args": {
                "checkpoint": str(Path(args.checkpoint).resolve()), "pdb": str(Path(args.pdb).resolve()),
                "chain": args.chain, "mode": args.mode, "top_k": args.top_k,
            }}
        elif args.command == "benchmark":
            outputs = cmd_benchmark(cfg, base, out)
        else:
            outputs = cmd_eval(cfg, base, out)
        write_manifest(out, args.command, cfg, base, outputs, extra)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StabDesignError, ArithmeticError, RuntimeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
