"""The continual-learning training loop."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from clref import clmethods, nncore
from clref.errors import ContractError, NumericError
from clref.fisher import DiagFisher, estimate_diag_fisher
from clref.harness.config import RunConfig
from clref.harness.data import load_base_data
from clref.harness.metrics import AccuracyMatrix
from clref.harness.streams import TaskStream, build_task_stream
from clref.refresh import RefreshConfig, refresh_train_step

log = logging.getLogger(__name__)

_NO_REFRESH = RefreshConfig(steps=0)


@dataclass
class RunResult:
    matrix: AccuracyMatrix
    timings: dict
    diagnostics: dict
    params: np.ndarray = field(repr=False)
    seed: int = 0


def make_stream(config: RunConfig) -> TaskStream:
    base = None
    if config.stream.kind != "synthetic_gaussian":
        base = load_base_data(config.data, seed=config.stream.seed,
                              test_fraction=config.data.get("test_fraction", 0.2))
    return build_task_stream(config.stream, base)


def evaluate(spec, params, stream: TaskStream, upto: int, scenario: str | None = None) -> list[float]:
    """Test accuracy on tasks ``0..upto``; task-IL masks logits to each task's classes."""
    scenario = scenario or stream.scenario
    out = []
    for i in range(upto + 1):
        mask = stream.class_mask(i) if scenario == "task_il" else None
        out.append(nncore.accuracy(spec, params, stream.tasks[i].test, mask))
    return out


def _union(tasks) -> nncore.Batch:
    return nncore.Batch(np.vstack([t.train.inputs for t in tasks]),
                        np.concatenate([t.train.labels for t in tasks]))


def run_sequence(config: RunConfig, seed: int | None = None, stream: TaskStream | None = None,
                 record_steps: bool = False) -> RunResult:
    """Train through every task of the stream and fill the accuracy matrix.

    One seed drives initialization, shuffling and replay draws; the refresh
    noise stream is seeded separately from ``refresh.rng_seed`` and the run
    seed so that toggling refresh does not perturb the replay draws.
    """
    seed = config.seeds[0] if seed is None else seed
    t0 = time.perf_counter()
    stream = stream or make_stream(config)
    spec = config.network
    if stream.n_inputs != spec.n_inputs or stream.n_classes > spec.n_classes:
        raise ContractError(
            f"network {spec.layer_sizes} does not fit a stream with {stream.n_inputs} inputs "
            f"and {stream.n_classes} classes"
        )
    timings = {"data": time.perf_counter() - t0, "train": 0.0, "fisher": 0.0, "eval": 0.0}

    params = nncore.init_params(spec, seed)
    rng = np.random.default_rng(seed)
    refresh_cfg = config.refresh if config.refresh_enabled else _NO_REFRESH
    noise_rng = np.random.default_rng([refresh_cfg.rng_seed, seed])
    objective = config.objective
    if objective.replay_batch_size is None:
        objective = dataclasses.replace(objective, replay_batch_size=config.batch_size)
    buffer = None
    if objective.uses_buffer:
        buffer = clmethods.ReplayBuffer(config.buffer_capacity, spec.n_inputs, spec.n_classes, rng_seed=seed + 1)
    needs_logits = objective.method == "derpp"
    needs_fisher = objective.method == "oewc" or config.refresh_enabled

    theta_old, fisher_acc, fisher_last = None, None, None
    matrix = AccuracyMatrix(len(stream))
    step_types, capped, losses = [], 0, []
    iteration = 0

    for t, task in enumerate(stream.tasks):
        train = _union(stream.tasks[: t + 1]) if objective.method == "joint" else task.train
        refresh_fisher = None
        if config.refresh_enabled:
            refresh_fisher = {"last_task": fisher_last, "accumulated": fisher_acc}.get(refresh_cfg.fisher_source)
        tic = time.perf_counter()
        for _ in range(config.epochs):
            order = rng.permutation(len(train))
            for start in range(0, len(order), config.batch_size):
                batch = train.take(order[start:start + config.batch_size])
                iteration += 1
                if needs_logits:
                    logits = nncore.forward(spec, params, batch.inputs)
                params, diag = refresh_train_step(
                    spec, params, batch, buffer, objective, refresh_fisher, refresh_cfg,
                    config.lr, iteration, rng, noise_rng,
                )
                if not np.isfinite(diag["loss"]) or not np.all(np.isfinite(params)):
                    raise NumericError(f"training diverged at iteration {iteration}", where=iteration)
                if record_steps:
                    step_types.append(diag["step_type"])
                    losses.append(diag["loss"])
                capped += diag["capped"]
                if buffer is not None:
                    z = logits if needs_logits else np.zeros((len(batch), spec.n_classes))
                    buffer.add_batch(batch.inputs, batch.labels, z, t)
        timings["train"] += time.perf_counter() - tic

        if needs_fisher and t < len(stream) - 1:
            tic = time.perf_counter()
            f_task = estimate_diag_fisher(spec, params, task.train, config.fisher_max_examples,
                                          config.fisher_damping)
            theta_old, fisher_acc = clmethods.consolidate_oewc(theta_old, fisher_acc, params, f_task,
                                                               objective.ewc_decay)
            fisher_last = f_task
            if objective.method == "oewc":
                objective = objective.with_references(theta_old, fisher_acc)
            timings["fisher"] += time.perf_counter() - tic

        tic = time.perf_counter()
        for i, acc in enumerate(evaluate(spec, params, stream, t)):
            matrix.set(t, i, acc)
        timings["eval"] += time.perf_counter() - tic
        log.info("seed %d task %d: %s", seed, t, ["%.3f" % a for a in matrix.values[t, : t + 1]])

    timings["total"] = time.perf_counter() - t0
    diagnostics = {"iterations": iteration, "capped_unlearn_steps": capped}
    if record_steps:
        diagnostics["step_types"] = step_types
        diagnostics["losses"] = losses
    return RunResult(matrix, timings, diagnostics, params, seed)
