"""Dense feed-forward network with hand-written backprop, in float64.

Parameters live in one flat vector. Layer ``k`` occupies a contiguous slice
holding its weight matrix (``fan_in x fan_out``, row-major) followed by its
bias (``fan_out``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clref.errors import ContractError, NumericError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ContractError("a network needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ContractError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def layer_slices(self):
        """Yield ``(weight_slice, bias_slice, fan_in, fan_out)`` per layer."""
        start = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w_end = start + fan_in * fan_out
            b_end = w_end + fan_out
            yield slice(start, w_end), slice(w_end, b_end), fan_in, fan_out
            start = b_end


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ContractError(f"inputs must be a 2-d matrix, got shape {x.shape}")
        if y.ndim != 1 or len(y) != len(x):
            raise ContractError("labels must be a vector with one entry per input row")
        if len(y) and not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise ContractError("labels must be integer class indices")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self):
        return len(self.labels)

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


def _check_params(spec: NetworkSpec, params) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.n_params,):
        raise ContractError(
            f"parameter vector has shape {params.shape}, network expects ({spec.n_params},)"
        )
    return params


def _check_batch(spec: NetworkSpec, batch: Batch):
    if len(batch) < 1:
        raise ContractError("batch is empty")
    if batch.inputs.shape[1] != spec.n_inputs:
        raise ContractError(
            f"input width {batch.inputs.shape[1]} does not match network input dim {spec.n_inputs}"
        )
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= spec.n_classes:
        raise ContractError(f"labels must lie in [0, {spec.n_classes})")


def unflatten(spec: NetworkSpec, params) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` into ``params``, one per layer."""
    params = _check_params(spec, params)
    return [
        (params[ws].reshape(fan_in, fan_out), params[bs])
        for ws, bs, fan_in, fan_out in spec.layer_slices()
    ]


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.n_params)
    for ws, _, fan_in, fan_out in spec.layer_slices():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[ws] = rng.uniform(-limit, limit, size=fan_in * fan_out)
    return params


def _activate(spec, z):
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(spec, z, a):
    if spec.activation == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward_cache(spec: NetworkSpec, params, inputs, check_finite=False):
    """Run the network and keep what backprop needs.

    Returns ``(logits, cache)`` where ``cache`` is a list of
    ``(layer_input, preactivation, activation)`` per hidden layer plus the
    final layer's input.
    """
    layers = unflatten(spec, params)
    a = np.asarray(inputs, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != spec.n_inputs:
        raise ContractError(
            f"inputs of shape {a.shape} do not match network input dim {spec.n_inputs}"
        )
    cache = []
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ w + b
        if check_finite and not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite pre-activation in layer {k}", where=k)
        if k == last:
            cache.append((a, None, None))
            return z, cache
        h = _activate(spec, z)
        cache.append((a, z, h))
        a = h
    raise AssertionError("unreachable")


def forward(spec: NetworkSpec, params, inputs) -> np.ndarray:
    """Raw logits, shape ``(n, n_classes)``."""
    logits, _ = forward_cache(spec, params, inputs)
    return logits


def backward(spec: NetworkSpec, params, cache, dlogits) -> np.ndarray:
    """Gradient of ``sum(dlogits * logits)`` with respect to ``params``."""
    layers = unflatten(spec, params)
    grad = np.empty(spec.n_params)
    delta = dlogits
    slices = list(spec.layer_slices())
    for k in range(len(layers) - 1, -1, -1):
        a_in = cache[k][0]
        ws, bs, _, _ = slices[k]
        grad[ws] = (a_in.T @ delta).ravel()
        grad[bs] = delta.sum(axis=0)
        if k > 0:
            _, z_prev, h_prev = cache[k - 1]
            delta = (delta @ layers[k][0].T) * _activation_grad(spec, z_prev, h_prev)
    return grad


def squared_grad_sum(spec: NetworkSpec, params, cache, dlogits) -> np.ndarray:
    """``sum_i g_i**2`` where ``g_i`` is row ``i``'s own gradient.

    Row ``i`` of ``dlogits`` is the derivative of example ``i``'s loss with
    respect to its logits. For a dense layer the per-example weight gradient is
    the outer product ``a_i delta_i^T``, so the squared sum factorizes as
    ``(a**2)^T (delta**2)``.
    """
    layers = unflatten(spec, params)
    out = np.empty(spec.n_params)
    delta = dlogits
    slices = list(spec.layer_slices())
    for k in range(len(layers) - 1, -1, -1):
        a_in = cache[k][0]
        ws, bs, _, _ = slices[k]
        out[ws] = ((a_in * a_in).T @ (delta * delta)).ravel()
        out[bs] = (delta * delta).sum(axis=0)
        if k > 0:
            _, z_prev, h_prev = cache[k - 1]
            delta = (delta @ layers[k][0].T) * _activation_grad(spec, z_prev, h_prev)
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_terms(logits, labels):
    """Per-example cross-entropy and its logit gradient (not averaged)."""
    logp = log_softmax(logits)
    rows = np.arange(len(labels))
    losses = -logp[rows, labels]
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return losses, dlogits


def loss_and_grad(spec: NetworkSpec, params, batch: Batch):
    """Mean softmax cross-entropy over ``batch`` and its exact gradient."""
    params = _check_params(spec, params)
    _check_batch(spec, batch)
    logits, cache = forward_cache(spec, params, batch.inputs, check_finite=True)
    losses, dlogits = cross_entropy_terms(logits, batch.labels)
    n = len(batch)
    loss = float(losses.mean())
    if not np.isfinite(loss):
        raise NumericError("non-finite cross-entropy at the output layer", where=len(spec.layer_sizes) - 2)
    grad = backward(spec, params, cache, dlogits / n)
    return loss, grad


def sgd_step(params, grad, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ContractError(f"params {params.shape} and grad {grad.shape} differ in shape")
    return params - lr * grad


def predict(spec: NetworkSpec, params, inputs, class_mask=None) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index.

    ``class_mask`` (boolean, length ``n_classes``) restricts the argmax to the
    allowed classes, as in task-incremental evaluation.
    """
    logits = forward(spec, params, inputs)
    if class_mask is not None:
        logits = np.where(np.asarray(class_mask, dtype=bool), logits, -np.inf)
    return np.argmax(logits, axis=1)


def accuracy(spec: NetworkSpec, params, batch: Batch, class_mask=None) -> float:
    if len(batch) == 0:
        raise ContractError("accuracy of an empty batch is undefined")
    _check_batch(spec, batch)
    return float(np.mean(predict(spec, params, batch.inputs, class_mask) == batch.labels))
