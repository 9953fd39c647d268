"""Task-stream construction for domain-, class- and task-incremental protocols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from clref.errors import ContractError
from clref.nncore import Batch

SCENARIOS = ("domain_il", "class_il", "task_il")
GENERATORS = ("permuted", "rotated", "split_classes", "synthetic_gaussian")


@dataclass(frozen=True)
class Task:
    task_id: int
    train: Batch
    test: Batch
    classes: tuple[int, ...]


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[Task, ...]
    scenario: str
    generator: str
    n_classes: int

    def __len__(self):
        return len(self.tasks)

    @property
    def n_inputs(self) -> int:
        return self.tasks[0].train.inputs.shape[1]

    def class_mask(self, task_id: int) -> np.ndarray:
        mask = np.zeros(self.n_classes, dtype=bool)
        mask[list(self.tasks[task_id].classes)] = True
        return mask


@dataclass(frozen=True)
class StreamSpec:
    """How to build a stream. Fields irrelevant to ``kind`` are ignored."""

    kind: str = "permuted"
    n_tasks: int = 5
    seed: int = 0
    scenario: str | None = None
    train_size: int | None = None
    test_size: int | None = None
    angles: tuple[float, ...] | None = None
    # synthetic_gaussian
    classes_per_task: int = 2
    dim: int = 20
    n_train: int = 200
    n_test: int = 200
    cov_scale: float = 1.0
    mean_radius: float = 3.0
    label_flip: bool = False

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ContractError(f"unknown stream generator {self.kind!r}; choose from {GENERATORS}")
        if self.n_tasks < 1:
            raise ContractError("a stream needs at least one task")
        if self.scenario is not None and self.scenario not in SCENARIOS:
            raise ContractError(f"unknown scenario {self.scenario!r}")

    @property
    def resolved_scenario(self) -> str:
        if self.scenario:
            return self.scenario
        return "class_il" if self.kind == "split_classes" else "domain_il"


def _subset(batch: Batch, size, rng) -> Batch:
    if size is None or size >= len(batch):
        return batch
    return batch.take(np.sort(rng.choice(len(batch), size=size, replace=False)))


def default_angles(n_tasks: int) -> tuple[float, ...]:
    """Evenly spaced rotations in [0, 180)."""
    return tuple(180.0 * t / n_tasks for t in range(n_tasks))


def rotate_images(inputs: np.ndarray, angle: float) -> np.ndarray:
    side = int(round(np.sqrt(inputs.shape[1])))
    if side * side != inputs.shape[1]:
        raise ContractError("rotation needs square images")
    if angle % 360 == 0:
        return inputs.copy()
    imgs = inputs.reshape(-1, side, side)
    out = ndimage.rotate(imgs, angle, axes=(2, 1), reshape=False, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0).reshape(len(inputs), -1)


def build_task_stream(spec: StreamSpec, base: tuple[Batch, Batch] | None = None) -> TaskStream:
    """Deterministically derive ``spec.n_tasks`` tasks from ``base = (train, test)``."""
    scenario = spec.resolved_scenario
    if spec.kind == "synthetic_gaussian":
        return _synthetic(spec, scenario)
    if base is None:
        raise ContractError(f"generator {spec.kind!r} needs base data")
    train, test = base
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    all_classes = tuple(range(n_classes))
    tasks = []
    if spec.kind == "permuted":
        d = train.inputs.shape[1]
        for t in range(spec.n_tasks):
            rng = np.random.default_rng([spec.seed, t])
            perm = np.arange(d) if t == 0 else rng.permutation(d)
            tr = _subset(train, spec.train_size, rng)
            te = _subset(test, spec.test_size, rng)
            tasks.append(Task(t, Batch(tr.inputs[:, perm], tr.labels), Batch(te.inputs[:, perm], te.labels),
                              all_classes))
    elif spec.kind == "rotated":
        angles = spec.angles or default_angles(spec.n_tasks)
        if len(angles) != spec.n_tasks:
            raise ContractError("need one rotation angle per task")
        for t, angle in enumerate(angles):
            rng = np.random.default_rng([spec.seed, t])
            tr = _subset(train, spec.train_size, rng)
            te = _subset(test, spec.test_size, rng)
            tasks.append(Task(t, Batch(rotate_images(tr.inputs, angle), tr.labels),
                              Batch(rotate_images(te.inputs, angle), te.labels), all_classes))
    else:
        if n_classes % spec.n_tasks:
            raise ContractError(f"{n_classes} classes cannot be split evenly into {spec.n_tasks} tasks")
        k = n_classes // spec.n_tasks
        for t in range(spec.n_tasks):
            group = tuple(range(t * k, (t + 1) * k))
            rng = np.random.default_rng([spec.seed, t])
            tr = _subset(train.take(np.isin(train.labels, group)), spec.train_size, rng)
            te = _subset(test.take(np.isin(test.labels, group)), spec.test_size, rng)
            tasks.append(Task(t, tr, te, group))
    return TaskStream(tuple(tasks), scenario, spec.kind, n_classes)


def _synthetic(spec: StreamSpec, scenario: str) -> TaskStream:
    """Gaussian blobs with class means on a sphere of radius ``mean_radius``.

    Domain-IL streams share ``classes_per_task`` labels and draw fresh means
    per task; ``label_flip`` instead reuses the first task's means and
    reverses the labels on odd tasks, which makes consecutive tasks conflict.
    Class- and task-IL streams give every task its own label group.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.classes_per_task
    domain = scenario == "domain_il"
    n_classes = k if domain else k * spec.n_tasks

    def sphere(n):
        v = rng.standard_normal((n, spec.dim))
        return spec.mean_radius * v / np.linalg.norm(v, axis=1, keepdims=True)

    first_means = sphere(k)
    tasks = []
    for t in range(spec.n_tasks):
        if domain:
            means = first_means if (t == 0 or spec.label_flip) else sphere(k)
            labels = np.arange(k)
            if spec.label_flip and t % 2 == 1:
                labels = labels[::-1]
        else:
            means = sphere(k)
            labels = np.arange(t * k, (t + 1) * k)

        def draw(n_per_class):
            ys = np.repeat(np.arange(k), n_per_class)
            xs = means[ys] + spec.cov_scale * rng.standard_normal((len(ys), spec.dim))
            order = rng.permutation(len(ys))
            return Batch(xs[order], labels[ys][order])

        per_tr = max(1, spec.n_train // k)
        per_te = max(1, spec.n_test // k)
        classes = tuple(int(c) for c in np.sort(labels))
        tasks.append(Task(t, draw(per_tr), draw(per_te), classes))
    return TaskStream(tuple(tasks), scenario, "synthetic_gaussian", n_classes)
