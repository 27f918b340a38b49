"""Expert-utilization summaries and gate-distribution smoothness metrics.

Utilization averages a trained model's routing weights within metadata
groups (task ids or era ids), giving one weight-over-experts row per group,
heatmap-ready. Smoothness condenses such a matrix into three per-row
statistics aggregated by mean: population variance, natural-log Shannon
entropy, and the max-min spread. Concentrated (one-hot-like) rows mean
expert specialization; uniform rows mean indifferent routing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import backbone as bb
from . import router as rt
from .errors import ContractError, DataError
from .synthdata import Sample

__all__ = [
    "UtilizationMatrix",
    "SmoothnessReport",
    "utilization",
    "smoothness",
    "mean_gate_entropy",
    "export_heatmap_data",
    "load_heatmap_data",
    "write_smoothness_json",
]


@dataclass
class UtilizationMatrix:
    axis: str  # "task" or "era"
    group_ids: list[int]
    weights: np.ndarray  # [n_groups, n_experts], each row a mean of gate vectors

    @property
    def n_experts(self) -> int:
        return self.weights.shape[1]


def _gate_for(model: bb.AdaptedModel, axis: str, task_id: int, era_id: int) -> np.ndarray:
    router = model.routers[0]
    w_t, w_e = rt.route(router, model.mode, task_id, era_id, granularity=None)
    return w_t.data if axis == "task" else w_e.data


def utilization(model: bb.AdaptedModel, samples: list[Sample], axis: str) -> UtilizationMatrix:
    """Mean routing weight per metadata group on the chosen gate.

    Task-axis groups are routing-level ids (the granularity map is applied
    to each sample's dataset id first); era-axis groups are era ids. Every
    group known to the router must be populated. Uses the first router; the
    default shared-router build has exactly one.
    """
    if axis not in ("task", "era"):
        raise ContractError(f"axis must be 'task' or 'era', got {axis!r}")
    router = model.routers[0]
    n_groups = router.n_tasks if axis == "task" else router.n_eras
    sums = np.zeros((n_groups, router.n_experts))
    counts = np.zeros(n_groups, dtype=np.int64)
    for s in samples:
        task_id = model.granularity.task_of(s.task_id) if model.granularity else s.task_id
        group = task_id if axis == "task" else s.era_id
        sums[group] += _gate_for(model, axis, task_id, s.era_id)
        counts[group] += 1
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"no samples for {axis} group(s) {empty.tolist()}")
    return UtilizationMatrix(
        axis=axis, group_ids=list(range(n_groups)), weights=sums / counts[:, None]
    )


@dataclass
class SmoothnessReport:
    variance: float
    entropy: float  # natural log; ranges over [0, ln N]
    max_min: float


def _row_entropy(row: np.ndarray) -> float:
    p = row[row > 0.0]
    return float(-(p * np.log(p)).sum())


def smoothness(matrix: UtilizationMatrix) -> SmoothnessReport:
    """Per-row variance / entropy / spread, averaged with equal row weight."""
    w = matrix.weights
    sums = w.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-6:
        raise ContractError(f"utilization rows must sum to 1, got sums {sums}")
    return SmoothnessReport(
        variance=float(np.mean(w.var(axis=1))),
        entropy=float(np.mean([_row_entropy(row) for row in w])),
        max_min=float(np.mean(w.max(axis=1) - w.min(axis=1))),
    )


def mean_gate_entropy(model: bb.AdaptedModel, samples: list[Sample]) -> float:
    """Mean row entropy across BOTH gates' utilization matrices.

    A mode that ignores one signal routes uniformly on that axis; the
    uniform rows count, since they are the model's actual routing behavior.
    """
    task_e = smoothness(utilization(model, samples, "task")).entropy
    era_e = smoothness(utilization(model, samples, "era")).entropy
    return 0.5 * (task_e + era_e)


def export_heatmap_data(matrix: UtilizationMatrix, path) -> None:
    """Row-major CSV: group,expert,weight — byte-stable across calls."""
    lines = ["group,expert,weight"]
    for gid, row in zip(matrix.group_ids, matrix.weights):
        for expert, weight in enumerate(row):
            lines.append(f"{gid},{expert},{repr(float(weight))}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_heatmap_data(path) -> UtilizationMatrix:
    """Rebuild a matrix from an exported CSV (axis is not stored)."""
    rows: dict[int, dict[int, float]] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "group,expert,weight":
            raise DataError(f"unexpected heatmap header {header!r} in {path}")
        for line in fh:
            if not line.strip():
                continue
            gid, expert, weight = line.strip().split(",")
            rows.setdefault(int(gid), {})[int(expert)] = float(weight)
    group_ids = sorted(rows)
    n_experts = max(max(r) for r in rows.values()) + 1
    weights = np.zeros((len(group_ids), n_experts))
    for i, gid in enumerate(group_ids):
        for expert, weight in rows[gid].items():
            weights[i, expert] = weight
    return UtilizationMatrix(axis="unknown", group_ids=group_ids, weights=weights)


def write_smoothness_json(report: SmoothnessReport, variant: str, axis: str, path) -> None:
    record = {
        "variant": variant,
        "axis": axis,
        "variance": report.variance,
        "entropy": report.entropy,
        "max_min": report.max_min,
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
