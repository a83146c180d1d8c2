"""Regression metrics for ΔΔG predictors."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import LengthMismatch


@dataclass(frozen=True)
class Metrics:
    rmse: float
    r2: float | None
    pcc: float | None
    degenerate: bool = False  # constant targets: R² and PCC undefined

    def to_json(self) -> dict:
        return asdict(self)


def metrics(pred, target) -> Metrics:
    """RMSE, R² and Pearson correlation.

    ``r2`` is ``None`` when the targets are constant; ``pcc`` is ``None`` when
    either vector is constant. Neither is ever NaN.
    """
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} targets")
    if p.size < 2:
        raise LengthMismatch("need at least 2 values")
    resid = p - t
    ss_res = float(np.dot(resid, resid))
    rmse = math.sqrt(ss_res / p.size)
    dt = t - t.mean()
    dp = p - p.mean()
    ss_tot = float(np.dot(dt, dt))
    ss_p = float(np.dot(dp, dp))
    r2 = None if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    if ss_tot == 0.0 or ss_p == 0.0:
        pcc = None
    else:
        pcc = float(np.dot(dp, dt)) / math.sqrt(ss_p * ss_tot)
        pcc = min(1.0, max(-1.0, pcc))
    return Metrics(rmse, r2, pcc, degenerate=ss_tot == 0.0)


def mean_metrics(folds: list[Metrics]) -> dict:
    def avg(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "rmse": avg([m.rmse for m in folds]),
        "r2": avg([m.r2 for m in folds]),
        "pcc": avg([m.pcc for m in folds]),
        "degenerate_folds": sum(m.degenerate for m in folds),
    }
