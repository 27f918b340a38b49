"""Sample-level expert routing from task and era metadata.

Two learned embedding tables (one per metadata signal) feed linear
projections and a softmax, producing one weight vector per signal:

    w_t = softmax(W_T^T v_task)      w_e = softmax(W_E^T v_era)

A concat variant merges both signals through a small rectifier MLP into a
single gate instead. Routing modes select which signals participate; the
degenerate no-mixture mode bypasses routing entirely and is only legal with
one expert.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .tensor import Tensor

__all__ = [
    "RouterParams",
    "RoutingMode",
    "GranularityMap",
    "init_router",
    "task_weights",
    "era_weights",
    "concat_gate_weights",
    "route",
]


class RoutingMode(enum.Enum):
    """Which metadata signals drive the gates."""

    SEPARATE_GATES = "separate"
    CONCAT_SINGLE_GATE = "concat"
    TASK_ONLY = "task-only"
    ERA_ONLY = "era-only"
    NO_MOE = "no-moe"

    @classmethod
    def from_string(cls, name: str) -> "RoutingMode":
        for mode in cls:
            if mode.value == name:
                return mode
        valid = ", ".join(m.value for m in cls)
        raise ConfigError(f"unknown routing mode {name!r}; expected one of: {valid}")


@dataclass
class RouterParams:
    """Embedding tables and projections for both gates plus the concat MLP.

    All fields are allocated regardless of mode so checkpoints have a fixed
    tensor inventory; the mode decides which of them train.
    """

    V_t: Tensor  # [n_tasks, d_t] task embedding table
    V_e: Tensor  # [n_eras, d_e]  era embedding table
    W_T: Tensor  # [d_t, N]
    W_E: Tensor  # [d_e, N]
    M1: Tensor  # [(d_t + d_e), d_h] concat-variant hidden projection
    M2: Tensor  # [d_h, N]

    @property
    def n_tasks(self) -> int:
        return self.V_t.shape[0]

    @property
    def n_eras(self) -> int:
        return self.V_e.shape[0]

    @property
    def n_experts(self) -> int:
        return self.W_T.shape[1]


def init_router(
    rng: np.random.Generator,
    n_tasks: int,
    n_eras: int,
    n_experts: int,
    d_t: int = 16,
    d_e: int = 16,
    d_h: int = 32,
) -> RouterParams:
    """Embeddings ~ N(0, 1); projections ~ N(0, 1/fan_in) to avoid saturation."""
    if n_tasks < 1 or n_eras < 1:
        raise ConfigError(f"need at least one task and one era, got {n_tasks} and {n_eras}")
    if n_experts < 1:
        raise ConfigError(f"expert count must be positive, got {n_experts}")
    return RouterParams(
        V_t=T.gaussian(rng, (n_tasks, d_t), std=1.0),
        V_e=T.gaussian(rng, (n_eras, d_e), std=1.0),
        W_T=T.gaussian(rng, (d_t, n_experts), std=1.0 / np.sqrt(d_t)),
        W_E=T.gaussian(rng, (d_e, n_experts), std=1.0 / np.sqrt(d_e)),
        M1=T.gaussian(rng, (d_t + d_e, d_h), std=1.0 / np.sqrt(d_t + d_e)),
        M2=T.gaussian(rng, (d_h, n_experts), std=1.0 / np.sqrt(d_h)),
    )


@dataclass
class GranularityMap:
    """Total mapping from dataset id to routing-level task id."""

    table: dict[int, int] = field(default_factory=dict)

    @classmethod
    def fine(cls, n_datasets: int) -> "GranularityMap":
        """One task id per dataset."""
        return cls({d: d for d in range(n_datasets)})

    @classmethod
    def coarse(cls, n_datasets: int, family_size: int = 2) -> "GranularityMap":
        """Group consecutive datasets into families sharing one task id."""
        if family_size < 1:
            raise ConfigError(f"family size must be positive, got {family_size}")
        return cls({d: d // family_size for d in range(n_datasets)})

    @classmethod
    def from_table(cls, table: dict[int, int]) -> "GranularityMap":
        mapping = {int(k): int(v) for k, v in table.items()}
        if any(v < 0 for v in mapping.values()):
            raise ConfigError("task ids in the granularity table must be nonnegative")
        return cls(mapping)

    @property
    def n_task_ids(self) -> int:
        return max(self.table.values()) + 1 if self.table else 0

    def task_of(self, dataset_id: int) -> int:
        if dataset_id not in self.table:
            raise DataError(f"dataset id {dataset_id} missing from the granularity table")
        return self.table[dataset_id]


def _lookup(table: Tensor, idx: int, what: str) -> Tensor:
    if not 0 <= idx < table.shape[0]:
        raise DataError(f"{what} id {idx} out of range for table of {table.shape[0]}")
    return T.take_row(table, idx)


def task_weights(params: RouterParams, task_id: int) -> Tensor:
    """softmax(W_T^T v_task) for the given task id."""
    v = _lookup(params.V_t, task_id, "task")
    return T.softmax(T.matvec(T.transpose(params.W_T), v))


def era_weights(params: RouterParams, era_id: int) -> Tensor:
    """softmax(W_E^T v_era) for the given era id."""
    v = _lookup(params.V_e, era_id, "era")
    return T.softmax(T.matvec(T.transpose(params.W_E), v))


def concat_gate_weights(params: RouterParams, task_id: int, era_id: int) -> tuple[Tensor, Tensor]:
    """Single gate over both signals: softmax(M2^T relu(M1^T [v_task; v_era])).

    Returns (z, uniform): the merged gate drives the task-side slot and the
    era slot stays flat, so the adapter sees the single signal exactly once
    rather than squared.
    """
    v = T.concat(_lookup(params.V_t, task_id, "task"), _lookup(params.V_e, era_id, "era"))
    hidden = T.relu(T.matvec(T.transpose(params.M1), v))
    z = T.softmax(T.matvec(T.transpose(params.M2), hidden))
    return z, _uniform_gate(params.n_experts)


def _uniform_gate(n: int) -> Tensor:
    return Tensor(np.full(n, 1.0 / n))


def route(
    params: RouterParams,
    mode: RoutingMode,
    task_id: int,
    era_id: int,
    granularity: GranularityMap | None = None,
) -> tuple[Tensor, Tensor]:
    """Compute (w_t, w_e) for one sample under the given mode.

    `task_id` is a dataset id when a granularity map is supplied (the map is
    applied first) and a routing-level task id otherwise.
    """
    if granularity is not None:
        task_id = granularity.task_of(task_id)
    n = params.n_experts
    if mode is RoutingMode.NO_MOE:
        if n != 1:
            raise ConfigError(f"no-moe mode requires exactly 1 expert, got {n}")
        return Tensor(np.ones(1)), Tensor(np.ones(1))
    if mode is RoutingMode.SEPARATE_GATES:
        return task_weights(params, task_id), era_weights(params, era_id)
    if mode is RoutingMode.CONCAT_SINGLE_GATE:
        return concat_gate_weights(params, task_id, era_id)
    if mode is RoutingMode.TASK_ONLY:
        return task_weights(params, task_id), _uniform_gate(n)
    if mode is RoutingMode.ERA_ONLY:
        return _uniform_gate(n), era_weights(params, era_id)
    raise ConfigError(f"unhandled routing mode {mode!r}")
