"""ΔΔG oracles, the learned surrogate and its evaluation metrics."""
from .metrics import Metrics, metrics
from .oracles import (
    DDGRecord,
    LearnedOracle,
    Mutation,
    RawRecord,
    RewardOracle,
    SyntheticOracle,
    TableOracle,
    build_difference_graph,
    read_ddg_csv,
    resolve_records,
    substitution_codes,
    write_ddg_csv,
)
from .surrogate import SurrogateConfig, SurrogateModel, surrogate_forward, train_surrogate

__all__ = [
    "Metrics", "metrics", "DDGRecord", "LearnedOracle", "Mutation", "RawRecord",
    "RewardOracle", "SyntheticOracle", "TableOracle", "build_difference_graph",
    "read_ddg_csv", "resolve_records", "substitution_codes", "write_ddg_csv",
    "SurrogateConfig", "SurrogateModel", "surrogate_forward", "train_surrogate",
]
