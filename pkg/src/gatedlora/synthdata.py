"""Synthetic multi-task, multi-era classification data with tunable conflict.

Each task t gets a linear generator G_t mapping inputs to class logits,
interpolated between one generator shared by all tasks and a fully
independent draw:

    G_t = (1 - conflict) * G_shared + conflict * G_t_independent

Odd-numbered eras scale the generator by (1 - 2 * conflict), so at
conflict=0 every (task, era) cell shares one labeling rule, while at
conflict=1 era 1 negates era 0's decision boundary for the same task.
Labels are the argmax of noisy logits over standard Gaussian inputs. A
linear model trained jointly on both eras of a conflict=1 task is fighting
itself; that is the interference the gated adapters are meant to resolve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .seeding import derive_rng
from .tensor import Tensor

__all__ = [
    "Sample",
    "SynthSpec",
    "Dataset",
    "Batch",
    "generate",
    "batch_iter",
    "save_records",
    "load_records",
]

MAX_CLASS_FRACTION = 0.7
LOGIT_NOISE_STD = 0.1
_MAX_ATTEMPTS = 20


@dataclass
class Sample:
    x: np.ndarray  # [d_in] float64
    task_id: int
    era_id: int
    label: int


@dataclass
class SynthSpec:
    """Shape and difficulty of the synthetic grid.

    `conflict` in [0, 1]: 0 means one shared labeling rule everywhere, 1
    means independent tasks whose odd eras flip the boundary.
    """

    n_tasks: int = 4
    n_eras: int = 2
    d_in: int = 16
    n_train: int = 500  # per (task, era) cell
    n_dev: int = 100
    n_test: int = 100
    conflict: float = 1.0
    seed: int = 0
    classes_per_task: tuple[int, ...] = ()

    def __post_init__(self):
        if self.n_tasks < 1 or self.n_eras < 1 or self.d_in < 1:
            raise ConfigError(
                f"n_tasks, n_eras, d_in must be positive, got "
                f"{self.n_tasks}, {self.n_eras}, {self.d_in}"
            )
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs at least one sample per cell")
        if not 0.0 <= self.conflict <= 1.0:
            raise ConfigError(f"conflict must lie in [0, 1], got {self.conflict}")
        if not self.classes_per_task:
            # alternate binary / ternary tasks by default
            self.classes_per_task = tuple(2 + (t % 2) for t in range(self.n_tasks))
        if len(self.classes_per_task) != self.n_tasks:
            raise ConfigError(
                f"classes_per_task has {len(self.classes_per_task)} entries "
                f"for {self.n_tasks} tasks"
            )
        if any(c < 2 for c in self.classes_per_task):
            raise ConfigError(f"every task needs at least 2 classes, got {self.classes_per_task}")

    @property
    def head_widths(self) -> dict[int, int]:
        return {t: c for t, c in enumerate(self.classes_per_task)}


@dataclass
class Dataset:
    spec: SynthSpec
    train: list[Sample] = field(default_factory=list)
    dev: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)


def _era_scale(era_id: int, conflict: float) -> float:
    return 1.0 if era_id % 2 == 0 else 1.0 - 2.0 * conflict


def _generators(spec: SynthSpec) -> list[np.ndarray]:
    """One [n_classes, d_in] logit matrix per task, shared-vs-independent mix."""
    max_c = max(spec.classes_per_task)
    shared = derive_rng(spec.seed, "generator.shared").normal(size=(max_c, spec.d_in))
    gens = []
    for t, c in enumerate(spec.classes_per_task):
        own = derive_rng(spec.seed, f"generator.task{t}").normal(size=(c, spec.d_in))
        gens.append((1.0 - spec.conflict) * shared[:c] + spec.conflict * own)
    return gens


def _draw_cell(
    spec: SynthSpec, gen: np.ndarray, task_id: int, era_id: int, split: str, n: int
) -> list[Sample]:
    """Sample one (task, era, split) cell, retrying until classes are balanced."""
    n_classes = gen.shape[0]
    scaled = _era_scale(era_id, spec.conflict) * gen
    for attempt in range(_MAX_ATTEMPTS):
        rng = derive_rng(spec.seed, f"cell.t{task_id}.e{era_id}.{split}.a{attempt}")
        x = rng.normal(size=(n, spec.d_in))
        logits = x @ scaled.T + rng.normal(0.0, LOGIT_NOISE_STD, size=(n, n_classes))
        labels = np.argmax(logits, axis=1)
        counts = np.bincount(labels, minlength=n_classes)
        if counts.max() <= MAX_CLASS_FRACTION * n:
            return [
                Sample(x=x[i].copy(), task_id=task_id, era_id=era_id, label=int(labels[i]))
                for i in range(n)
            ]
    raise DataError(
        f"cell task={task_id} era={era_id} split={split} stayed class-imbalanced "
        f"after {_MAX_ATTEMPTS} draws"
    )


def generate(spec: SynthSpec) -> Dataset:
    """Fully seeded train/dev/test grid covering every (task, era) cell."""
    gens = _generators(spec)
    ds = Dataset(spec=spec)
    for task_id in range(spec.n_tasks):
        for era_id in range(spec.n_eras):
            ds.train += _draw_cell(spec, gens[task_id], task_id, era_id, "train", spec.n_train)
            ds.dev += _draw_cell(spec, gens[task_id], task_id, era_id, "dev", spec.n_dev)
            ds.test += _draw_cell(spec, gens[task_id], task_id, era_id, "test", spec.n_test)
    return ds


@dataclass
class Batch:
    """A metadata-homogeneous minibatch ready for the adapted model."""

    x: Tensor  # [batch, d_in]
    labels: np.ndarray  # [batch] int
    task_id: int
    era_id: int

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "Batch":
        if not samples:
            raise ContractError("cannot build a batch from zero samples")
        keys = {(s.task_id, s.era_id) for s in samples}
        if len(keys) != 1:
            raise ContractError(
                f"batch mixes metadata {sorted(keys)}; regroup samples by (task, era) first"
            )
        return cls(
            x=Tensor(np.stack([s.x for s in samples])),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            task_id=samples[0].task_id,
            era_id=samples[0].era_id,
        )

    def __len__(self) -> int:
        return len(self.labels)


def batch_iter(samples: list[Sample], batch_size: int, rng: np.random.Generator):
    """One epoch of shuffled, metadata-homogeneous batches covering `samples`.

    Walks a global shuffled order, flushing a cell's buffer whenever it
    reaches batch_size; remainders flush at the end (sorted by cell so the
    sequence is a pure function of the generator state).
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    if not samples:
        raise ContractError("cannot iterate an empty dataset")
    order = rng.permutation(len(samples))
    buffers: dict[tuple[int, int], list[Sample]] = {}
    for idx in order:
        s = samples[idx]
        buf = buffers.setdefault((s.task_id, s.era_id), [])
        buf.append(s)
        if len(buf) == batch_size:
            yield Batch.from_samples(buf)
            buffers[(s.task_id, s.era_id)] = []
    for key in sorted(buffers):
        if buffers[key]:
            yield Batch.from_samples(buffers[key])


def save_records(samples: list[Sample], path) -> None:
    """One JSON record per line: ids, label, feature vector."""
    with open(path, "w", newline="\n") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {"task": s.task_id, "era": s.era_id, "label": s.label, "x": list(s.x)},
                    separators=(",", ":"),
                )
                + "\n"
            )


def load_records(path) -> list[Sample]:
    samples = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                samples.append(
                    Sample(
                        x=np.array(rec["x"], dtype=np.float64),
                        task_id=int(rec["task"]),
                        era_id=int(rec["era"]),
                        label=int(rec["label"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"bad record at {path}:{line_no}: {exc}") from exc
    return samples
