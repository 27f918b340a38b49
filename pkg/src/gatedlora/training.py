"""Joint multi-task, multi-era training of adapters, router, and heads.

One optimization loop serves every routing mode; the mode decides which
router parameters join the trainable set. Determinism is total: the master
seed derives independent generators for data order and dropout, so two runs
with the same config produce bit-identical trajectories, and runs differing
only in routing mode share identical initialization wherever shapes agree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import backbone as bb
from . import tensor as T
from .errors import ConfigError, ContractError, TrainingDiverged
from .router import GranularityMap, RoutingMode
from .seeding import derive_rng
from .synthdata import Batch, Dataset, Sample, batch_iter
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "CellMetrics",
    "RunResult",
    "AblationRow",
    "SGD",
    "Adam",
    "make_optimizer",
    "joint_loss",
    "evaluate",
    "train",
    "train_separate_per_task",
    "run_ablation_suite",
    "cell_key",
    "write_metrics_csv",
    "write_train_loss_csv",
    "write_ablation_csv",
]


@dataclass
class TrainConfig:
    """Everything a run needs beyond the dataset itself.

    Architecture knobs live here too so one object determines the model;
    input width, head widths, and era count come from the dataset's spec.
    """

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rank: int = 16
    n_experts: int = 8
    mode: RoutingMode = RoutingMode.SEPARATE_GATES
    granularity: str = "fine"
    granularity_table: dict[int, int] | None = None
    seed: int = 0
    dropout_rate: float = 0.05
    alpha: float | None = None
    d_model: int = 32
    depth: int = 2
    d_t: int = 16
    d_e: int = 16
    d_h: int = 32
    per_layer_routers: bool = False

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = RoutingMode.from_string(self.mode)
        if self.rank < 1 or self.n_experts < 1:
            raise ConfigError(f"rank and n_experts must be positive, got {self.rank}, {self.n_experts}")
        if self.rank % self.n_experts != 0:
            raise ConfigError(f"rank {self.rank} is not divisible by n_experts {self.n_experts}")
        # 0 is allowed so a frozen-optimizer run can serve as a no-op control
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be nonnegative, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(f"bad budget: epochs={self.epochs}, batch_size={self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.granularity not in ("fine", "coarse"):
            raise ConfigError(f"granularity must be 'fine' or 'coarse', got {self.granularity!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")

    def resolve_granularity(self, n_datasets: int) -> GranularityMap:
        if self.granularity_table is not None:
            return GranularityMap.from_table(self.granularity_table)
        if self.granularity == "coarse":
            return GranularityMap.coarse(n_datasets)
        return GranularityMap.fine(n_datasets)


class SGD:
    """Plain gradient descent over a fixed parameter list."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for _, p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad
                p.zero_grad()


class Adam:
    """Adam with bias correction; state keyed by parameter name.

    A parameter whose gradient is absent this step (its head saw no batch)
    keeps its moments untouched, and a parameter with an all-zero gradient
    provably does not move: both moment estimates stay zero.
    """

    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros(p.shape) for name, p in params}
        self.v = {name: np.zeros(p.shape) for name, p in params}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()


def make_optimizer(config: TrainConfig, params: list[tuple[str, Tensor]]):
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)


def joint_loss(
    model: bb.AdaptedModel,
    batch: Batch,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean cross-entropy of the batch task's head over its logits."""
    logits = bb.forward(model, batch.x, batch.task_id, batch.era_id, training=training, rng=rng)
    return T.cross_entropy_with_logits(logits, batch.labels)


@dataclass
class CellMetrics:
    loss: float
    accuracy: float
    n: int


@dataclass
class RunResult:
    config: TrainConfig
    train_loss: list[float]
    dev_history: list[dict[tuple[int, int], CellMetrics]]
    test_metrics: dict[tuple[int, int], CellMetrics]
    wall_clock: float
    steps: int
    model: bb.AdaptedModel = field(repr=False, default=None)

    @property
    def mean_test_accuracy(self) -> float:
        """Equal-weight mean over (task, era) cells."""
        return float(np.mean([m.accuracy for m in self.test_metrics.values()]))


def cell_key(task_id: int, era_id: int) -> str:
    return f"t{task_id}e{era_id}"


def evaluate(model: bb.AdaptedModel, samples: list[Sample]) -> dict[tuple[int, int], CellMetrics]:
    """Per-cell loss and accuracy in eval mode (dropout off)."""
    groups: dict[tuple[int, int], list[Sample]] = {}
    for s in samples:
        groups.setdefault((s.task_id, s.era_id), []).append(s)
    out = {}
    for key in sorted(groups):
        batch = Batch.from_samples(groups[key])
        logits = bb.forward(model, batch.x, batch.task_id, batch.era_id, training=False)
        loss = T.cross_entropy_with_logits(logits, batch.labels).item()
        pred = np.argmax(logits.data, axis=1)
        out[key] = CellMetrics(
            loss=loss, accuracy=float(np.mean(pred == batch.labels)), n=len(batch)
        )
    return out


def build_model_for(config: TrainConfig, dataset: Dataset) -> bb.AdaptedModel:
    spec = dataset.spec
    backbone_config = bb.BackboneConfig(
        d_in=spec.d_in,
        head_widths=spec.head_widths,
        d_model=config.d_model,
        depth=config.depth,
    )
    return bb.build_model(
        config.seed,
        backbone_config,
        n_eras=spec.n_eras,
        rank=config.rank,
        n_experts=config.n_experts,
        mode=config.mode,
        granularity=config.resolve_granularity(spec.n_tasks),
        d_t=config.d_t,
        d_e=config.d_e,
        d_h=config.d_h,
        dropout_rate=config.dropout_rate,
        alpha=config.alpha,
        per_layer_routers=config.per_layer_routers,
    )


def train(config: TrainConfig, dataset: Dataset) -> RunResult:
    """Optimize the trainable set on the dataset's train split.

    Aborts with the offending step index if the loss goes non-finite, and
    verifies the frozen backbone is bit-identical at the end.
    """
    start = time.perf_counter()
    model = build_model_for(config, dataset)
    snapshot = bb.snapshot_frozen(model)
    params = bb.trainable_parameters(model)
    optimizer = make_optimizer(config, params)
    shuffle_rng = derive_rng(config.seed, "shuffle")
    dropout_rng = derive_rng(config.seed, "dropout")

    train_loss: list[float] = []
    dev_history: list[dict[tuple[int, int], CellMetrics]] = []
    step = 0
    for _epoch in range(config.epochs):
        loss_sum = 0.0
        n_seen = 0
        for batch in batch_iter(dataset.train, config.batch_size, shuffle_rng):
            with T.Tape():
                loss = joint_loss(model, batch, training=True, rng=dropout_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(step=step, loss_value=value)
                T.backward(loss)
            optimizer.step()
            loss_sum += value * len(batch)
            n_seen += len(batch)
            step += 1
        train_loss.append(loss_sum / n_seen)
        dev_history.append(evaluate(model, dataset.dev))

    test_metrics = evaluate(model, dataset.test)
    if not bb.freeze_check(model, snapshot):
        raise ContractError("frozen backbone drifted during training")
    return RunResult(
        config=config,
        train_loss=train_loss,
        dev_history=dev_history,
        test_metrics=test_metrics,
        wall_clock=time.perf_counter() - start,
        steps=step,
        model=model,
    )


def train_separate_per_task(config: TrainConfig, dataset: Dataset) -> dict[int, RunResult]:
    """One single-expert adapter model per task, trained on that task only.

    The per-task baseline the joint runs are compared against: each model
    sees both eras of exactly one task and no routing.
    """
    results = {}
    for task_id in range(dataset.spec.n_tasks):
        sub = Dataset(
            spec=dataset.spec,
            train=[s for s in dataset.train if s.task_id == task_id],
            dev=[s for s in dataset.dev if s.task_id == task_id],
            test=[s for s in dataset.test if s.task_id == task_id],
        )
        solo_config = replace(config, mode=RoutingMode.NO_MOE, n_experts=1)
        results[task_id] = train(solo_config, sub)
    return results


@dataclass
class AblationRow:
    variant: str
    granularity: str  # "coarse", "fine", or "n/a" where the task signal is unused
    result: RunResult


_ABLATION_GRID: list[tuple[RoutingMode, tuple[str, ...]]] = [
    (RoutingMode.NO_MOE, ("n/a",)),
    (RoutingMode.ERA_ONLY, ("n/a",)),
    (RoutingMode.TASK_ONLY, ("coarse", "fine")),
    (RoutingMode.SEPARATE_GATES, ("coarse", "fine")),
    (RoutingMode.CONCAT_SINGLE_GATE, ("coarse", "fine")),
]


def run_ablation_suite(base_config: TrainConfig, dataset: Dataset) -> list[AblationRow]:
    """Every routing variant crossed with task granularity where it applies.

    All rows share the base seed, so they see identical data and identical
    initialization wherever shapes agree.
    """
    rows = []
    for mode, granularities in _ABLATION_GRID:
        for gran in granularities:
            overrides: dict = {"mode": mode}
            if mode is RoutingMode.NO_MOE:
                overrides["n_experts"] = 1
            if gran != "n/a":
                overrides["granularity"] = gran
            result = train(replace(base_config, **overrides), dataset)
            rows.append(AblationRow(variant=mode.value, granularity=gran, result=result))
    return rows


def _fmt(x: float) -> str:
    return repr(float(x))


def write_train_loss_csv(result: RunResult, path) -> None:
    lines = ["epoch,loss"]
    for epoch, loss in enumerate(result.train_loss):
        lines.append(f"{epoch},{_fmt(loss)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_metrics_csv(result: RunResult, path) -> None:
    """Flat per-cell metrics: variant, cell, metric, value."""
    variant = result.config.mode.value
    lines = ["variant,cell,metric,value"]
    for (t, e), m in sorted(result.test_metrics.items()):
        lines.append(f"{variant},{cell_key(t, e)},test_loss,{_fmt(m.loss)}")
        lines.append(f"{variant},{cell_key(t, e)},test_accuracy,{_fmt(m.accuracy)}")
    if result.dev_history:
        for (t, e), m in sorted(result.dev_history[-1].items()):
            lines.append(f"{variant},{cell_key(t, e)},dev_loss,{_fmt(m.loss)}")
            lines.append(f"{variant},{cell_key(t, e)},dev_accuracy,{_fmt(m.accuracy)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    lines = ["variant,granularity,cell,accuracy,loss"]
    for row in rows:
        for (t, e), m in sorted(row.result.test_metrics.items()):
            lines.append(
                f"{row.variant},{row.granularity},{cell_key(t, e)},{_fmt(m.accuracy)},{_fmt(m.loss)}"
            )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def result_record(result: RunResult) -> dict:
    """JSON-ready summary of a run (wall clock included here, not in CSVs)."""
    return {
        "mode": result.config.mode.value,
        "granularity": result.config.granularity,
        "seed": result.config.seed,
        "epochs": result.config.epochs,
        "steps": result.steps,
        "train_loss": result.train_loss,
        "test": {
            cell_key(t, e): {"loss": m.loss, "accuracy": m.accuracy, "n": m.n}
            for (t, e), m in sorted(result.test_metrics.items())
        },
        "mean_test_accuracy": result.mean_test_accuracy,
        "wall_clock_seconds": result.wall_clock,
    }
