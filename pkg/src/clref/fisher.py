"""Diagonal empirical Fisher information and the operations built on it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from clref import nncore
from clref.errors import ContractError

DEFAULT_DAMPING = 1e-5
DEFAULT_MAX_EXAMPLES = 1000


@dataclass(frozen=True)
class DiagFisher:
    values: np.ndarray
    damping: float = DEFAULT_DAMPING

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ContractError("Fisher values must be a flat vector")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ContractError("Fisher values must be finite and nonnegative")
        if not (self.damping > 0 and np.isfinite(self.damping)):
            raise ContractError(f"damping must be positive, got {self.damping}")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    @property
    def denominator(self) -> np.ndarray:
        return self.values + self.damping

    @classmethod
    def identity(cls, n: int, damping: float = DEFAULT_DAMPING) -> "DiagFisher":
        """Unit Fisher values; used before any task has been consolidated."""
        return cls(np.ones(n), damping)

    def normalized(self, mode: str) -> "DiagFisher":
        """Rescale values so their mean (or max) is one; ``"none"`` is a no-op."""
        if mode == "none":
            return self
        if mode == "mean":
            scale = self.values.mean()
        elif mode == "max":
            scale = self.values.max()
        else:
            raise ContractError(f"unknown Fisher normalization {mode!r}")
        if scale <= 0:
            return DiagFisher.identity(len(self), self.damping)
        return DiagFisher(self.values / scale, self.damping)


def _iter_batches(data) -> Iterable[nncore.Batch]:
    if isinstance(data, nncore.Batch):
        yield data
    else:
        yield from data


def estimate_diag_fisher(
    spec: nncore.NetworkSpec,
    params,
    data,
    max_examples: int = DEFAULT_MAX_EXAMPLES,
    damping: float = DEFAULT_DAMPING,
    chunk: int = 256,
) -> DiagFisher:
    """Mean squared per-example cross-entropy gradient, using the true labels.

    ``data`` is a :class:`Batch` or an iterable of them; examples are consumed
    in order until ``max_examples`` have been seen.
    """
    if max_examples < 1:
        raise ContractError("max_examples must be at least 1")
    params = np.asarray(params, dtype=np.float64)
    acc = np.zeros(spec.n_params)
    seen = 0
    for batch in _iter_batches(data):
        if seen >= max_examples:
            break
        batch = batch.take(slice(0, max_examples - seen))
        for start in range(0, len(batch), chunk):
            part = batch.take(slice(start, start + chunk))
            logits, cache = nncore.forward_cache(spec, params, part.inputs)
            _, dlogits = nncore.cross_entropy_terms(logits, part.labels)
            acc += nncore.squared_grad_sum(spec, params, cache, dlogits)
        seen += len(batch)
    if seen == 0:
        raise ContractError("cannot estimate a Fisher from an empty data stream")
    return DiagFisher(acc / seen, damping)


def precondition(fisher: DiagFisher, v) -> np.ndarray:
    """``v / (F + eps)`` elementwise."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != fisher.values.shape:
        raise ContractError(f"vector of shape {v.shape} vs Fisher of length {len(fisher)}")
    return v / fisher.denominator


def noise_scale(fisher: DiagFisher, gamma: float) -> np.ndarray:
    """Per-parameter standard deviation of ``N(0, 2 gamma F^-1)``."""
    if gamma < 0:
        raise ContractError(f"gamma must be nonnegative, got {gamma}")
    return np.sqrt(2.0 * gamma / fisher.denominator)
