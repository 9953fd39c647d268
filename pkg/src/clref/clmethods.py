"""The unified CL objective and its method presets.

Every preset is an instance of

    CE(x, y) + alpha * D_phi(model output, reference) + beta * D_psi(theta, theta_old)

with the potentials chosen per method:

========  ===========================================  ==================
method    output-space term                            weight-space term
========  ===========================================  ==================
finetune  none                                         none
er        KL(onehot(y) || softmax) on replay = CE      none
derpp     ||logits - stored logits||^2 on replay,      none
          plus a second CE term on another replay draw
oewc      none                                         0.5 (t - t_old)^T F (t - t_old)
cpr       KL(softmax || uniform) - ln C = -entropy     optional
joint     none (the harness feeds the union of tasks)  none
========  ===========================================  ==================
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from clref import nncore
from clref.errors import ContractError
from clref.fisher import DiagFisher

METHODS = ("finetune", "er", "derpp", "oewc", "cpr", "joint")
KL_ORDERS = ("target_first", "model_first")
# argument order of the KL term each preset uses by default
DEFAULT_KL_ORDER = {"er": "target_first", "cpr": "model_first"}
DEFAULT_REPLAY_BATCH = 32


@dataclass(frozen=True)
class ReplayItem:
    input: np.ndarray
    label: int
    logits: np.ndarray
    source_task: int = 0


class ReplayBuffer:
    """Fixed-capacity reservoir of past examples and their store-time logits."""

    def __init__(self, capacity: int, n_inputs: int, n_classes: int, rng_seed: int = 0):
        if capacity < 1:
            raise ContractError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self.n_inputs = n_inputs
        self.n_classes = n_classes
        self.rng_seed = rng_seed
        self.rng = np.random.default_rng(rng_seed)
        self.seen_count = 0
        self._size = 0
        self._inputs = np.zeros((capacity, n_inputs))
        self._labels = np.zeros(capacity, dtype=np.int64)
        self._logits = np.zeros((capacity, n_classes))
        self._tasks = np.zeros(capacity, dtype=np.int64)

    def __len__(self):
        return self._size

    @property
    def items(self) -> list[ReplayItem]:
        return [
            ReplayItem(self._inputs[i].copy(), int(self._labels[i]), self._logits[i].copy(), int(self._tasks[i]))
            for i in range(self._size)
        ]

    def _store(self, slot, item: ReplayItem):
        self._inputs[slot] = item.input
        self._labels[slot] = item.label
        self._logits[slot] = item.logits
        self._tasks[slot] = item.source_task

    def add_batch(self, inputs, labels, logits, task: int):
        for x, y, z in zip(inputs, labels, logits):
            reservoir_insert(self, ReplayItem(x, int(y), z, task))

    def sample(self, size: int, rng: np.random.Generator) -> "ReplaySample | None":
        if self._size == 0 or size < 1:
            return None
        idx = rng.choice(self._size, size=min(size, self._size), replace=False)
        return ReplaySample(self._inputs[idx], self._labels[idx], self._logits[idx])

    def as_batch(self) -> nncore.Batch:
        return nncore.Batch(self._inputs[: self._size], self._labels[: self._size])


def reservoir_insert(buffer: ReplayBuffer, item: ReplayItem) -> ReplayBuffer:
    """Algorithm R: keep each of the ``n`` items seen with probability ``capacity / n``."""
    z = np.asarray(item.logits, dtype=np.float64)
    if z.shape != (buffer.n_classes,) or not np.all(np.isfinite(z)):
        raise ContractError("stored logits must be finite with one entry per class")
    if buffer.seen_count < buffer.capacity:
        buffer._store(buffer._size, item)
        buffer._size += 1
    else:
        j = int(buffer.rng.integers(0, buffer.seen_count + 1))
        if j < buffer.capacity:
            buffer._store(j, item)
    buffer.seen_count += 1
    return buffer


@dataclass(frozen=True)
class ReplaySample:
    inputs: np.ndarray
    labels: np.ndarray
    logits: np.ndarray

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class Replay:
    """Replay draws for one optimization step.

    ``primary`` feeds the ER cross-entropy term or the DER++ logit term;
    ``secondary`` feeds the DER++ cross-entropy term.
    """

    primary: ReplaySample | None = None
    secondary: ReplaySample | None = None


@dataclass(frozen=True)
class ObjectiveConfig:
    method: str = "finetune"
    alpha: float = 0.0
    beta: float = 0.0
    replay_batch_size: int | None = None
    replay_ce_weight: float | None = None
    kl_argument_order: str | None = None
    theta_old: np.ndarray | None = field(default=None, repr=False, compare=False)
    fisher: DiagFisher | None = field(default=None, repr=False, compare=False)
    ewc_decay: float = 0.9

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}; choose from {METHODS}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ContractError(f"{name} must be finite and >= 0, got {v}")
        if self.replay_ce_weight is not None and not (self.replay_ce_weight >= 0):
            raise ContractError("replay_ce_weight must be >= 0")
        if not 0.0 <= self.ewc_decay <= 1.0:
            raise ContractError("ewc_decay must lie in [0, 1]")
        if self.replay_batch_size is not None and self.replay_batch_size < 1:
            raise ContractError("replay_batch_size must be positive")
        order = self.kl_argument_order or DEFAULT_KL_ORDER.get(self.method)
        if order is not None and order not in KL_ORDERS:
            raise ContractError(f"kl_argument_order must be one of {KL_ORDERS}")
        if self.method == "er" and order == "model_first":
            # KL(softmax || onehot) is infinite whenever the model is not certain
            raise ContractError("ER needs the one-hot label as the first KL argument")
        object.__setattr__(self, "kl_argument_order", order)

    @property
    def second_weight(self) -> float:
        return self.alpha if self.replay_ce_weight is None else self.replay_ce_weight

    @property
    def uses_buffer(self) -> bool:
        return self.method in ("er", "derpp")

    def with_references(self, theta_old, fisher: DiagFisher | None) -> "ObjectiveConfig":
        return dataclasses.replace(self, theta_old=np.array(theta_old, dtype=np.float64), fisher=fisher)


def draw_replay(buffer: ReplayBuffer | None, config: ObjectiveConfig, rng: np.random.Generator) -> Replay:
    """Sample the replay minibatches one step needs (none for weightless terms)."""
    if buffer is None or len(buffer) == 0 or not config.uses_buffer:
        return Replay()
    size = config.replay_batch_size or DEFAULT_REPLAY_BATCH
    if config.method == "er":
        return Replay(buffer.sample(size, rng) if config.alpha > 0 else None)
    first = buffer.sample(size, rng) if config.alpha > 0 else None
    second = buffer.sample(size, rng) if config.second_weight > 0 else None
    return Replay(first, second)


def _weight_term(params, config: ObjectiveConfig):
    if config.beta == 0 or config.theta_old is None:
        return None
    if config.method == "oewc" and config.fisher is None:
        return None
    if config.method not in ("oewc", "cpr"):
        return None
    diff = params - config.theta_old
    f = config.fisher.values if config.fisher is not None else np.ones_like(diff)
    value = config.beta * 0.5 * float(diff @ (f * diff))
    return value, config.beta * f * diff


def cl_loss_and_grad(spec: nncore.NetworkSpec, params, batch: nncore.Batch, replay: Replay | None,
                     config: ObjectiveConfig):
    """Composite loss, its exact gradient, and the per-term losses.

    ``replay`` is drawn beforehand with :func:`draw_replay` so that callers
    can hold it fixed across several evaluations.
    """
    params = nncore._check_params(spec, params)
    nncore._check_batch(spec, batch)
    replay = replay or Replay()
    method = config.method
    alpha = config.alpha

    # stack the current batch with any replay rows so one pass serves every term
    blocks = [batch.inputs]
    logit_sample = ce_sample = None
    if method == "er" and alpha > 0:
        ce_sample = replay.primary
    elif method == "derpp":
        logit_sample = replay.primary if alpha > 0 else None
        ce_sample = replay.secondary if config.second_weight > 0 else None
    for s in (logit_sample, ce_sample):
        if s is not None:
            blocks.append(s.inputs)
    inputs = blocks[0] if len(blocks) == 1 else np.vstack(blocks)
    logits, cache = nncore.forward_cache(spec, params, inputs, check_finite=True)

    n = len(batch)
    cur = logits[:n]
    dlogits = np.zeros_like(logits)
    parts = {}

    losses, d = nncore.cross_entropy_terms(cur, batch.labels)
    parts["ce"] = float(losses.mean())
    dlogits[:n] = d / n

    if method == "cpr" and alpha > 0:
        value, d = _cpr_term(cur, config.kl_argument_order)
        parts["entropy"] = alpha * value
        dlogits[:n] += alpha * d / n

    offset = n
    if logit_sample is not None:
        m = len(logit_sample)
        diff = logits[offset:offset + m] - logit_sample.logits
        parts["logit_match"] = alpha * float(np.mean(np.sum(diff * diff, axis=1)))
        dlogits[offset:offset + m] = alpha * 2.0 * diff / m
        offset += m
    if ce_sample is not None:
        m = len(ce_sample)
        weight = alpha if method == "er" else config.second_weight
        losses, d = nncore.cross_entropy_terms(logits[offset:offset + m], ce_sample.labels)
        parts["replay_ce"] = weight * float(losses.mean())
        dlogits[offset:offset + m] = weight * d / m
        offset += m

    grad = nncore.backward(spec, params, cache, dlogits)
    wt = _weight_term(params, config)
    if wt is not None:
        parts["weight"] = wt[0]
        grad = grad + wt[1]
    loss = sum(parts.values())
    return loss, grad, parts


def _cpr_term(logits, order):
    """Mean output-space CPR term and its per-row logit gradient (times n)."""
    logp = nncore.log_softmax(logits)
    p = np.exp(logp)
    n_classes = logits.shape[1]
    if order == "model_first":
        # KL(p || uniform) - ln C = sum p log p = -H(p)
        neg_h = np.sum(p * logp, axis=1)
        d = p * (logp - neg_h[:, None])
        return float(neg_h.mean()), d
    # KL(uniform || p) = -ln C - mean_k log p_k
    kl = -math.log(n_classes) - logp.mean(axis=1)
    return float(kl.mean()), p - 1.0 / n_classes


def objective(spec, batch, replay, config):
    """Closure ``params -> (loss, grad, parts)`` with data held fixed."""
    return lambda params: cl_loss_and_grad(spec, params, batch, replay, config)


def consolidate_oewc(theta_old_prev, fisher_prev, params, fisher_task, decay: float = 0.9):
    """Online-EWC bookkeeping after a task: anchor at ``params`` and accumulate
    ``F = decay * F_prev + F_task``."""
    if not 0.0 <= decay <= 1.0:
        raise ContractError("decay must lie in [0, 1]")
    params = np.array(params, dtype=np.float64)
    task_values = fisher_task.values if isinstance(fisher_task, DiagFisher) else np.asarray(fisher_task, float)
    damping = fisher_task.damping if isinstance(fisher_task, DiagFisher) else 1e-5
    if task_values.shape != params.shape:
        raise ContractError("Fisher and parameters differ in length")
    if fisher_prev is None:
        values = task_values.copy()
    else:
        prev = fisher_prev.values if isinstance(fisher_prev, DiagFisher) else np.asarray(fisher_prev, float)
        if prev.shape != task_values.shape:
            raise ContractError("previous and new Fisher differ in length")
        values = decay * prev + task_values
    return params, DiagFisher(values, damping)


def natural_gradient_step(params, grad, fisher, alpha: float, beta: float, lr: float) -> np.ndarray:
    """Damped natural-gradient update ``params - lr * (alpha F + beta I)^-1 grad``."""
    values = fisher.values if isinstance(fisher, DiagFisher) else np.asarray(fisher, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (params.shape == grad.shape == values.shape):
        raise ContractError("params, grad and Fisher must have equal lengths")
    denom = alpha * values + beta
    bad = np.flatnonzero(~(denom > 0))
    if len(bad):
        raise ContractError(f"alpha*F + beta is not positive at parameter index {int(bad[0])}")
    return params - lr * grad / denom
