"""Bregman divergences for the three potentials used by the CL objective.

``D(p, q) = phi(p) - phi(q) - <grad phi(q), p - q>``

* ``neg_entropy``: ``phi(p) = sum p_i log p_i`` on the probability simplex,
  giving KL(p || q).
* ``squared_norm``: ``phi(p) = ||p||^2``, giving ``||p - q||^2``.
* ``fisher_quadratic``: ``phi(t) = 0.5 t^T F t`` with diagonal ``F``, giving
  ``0.5 (p - q)^T F (p - q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from clref.errors import ContractError

SIMPLEX_TOL = 1e-9
KINDS = ("neg_entropy", "squared_norm", "fisher_quadratic")


@dataclass(frozen=True)
class Potential:
    kind: str
    fisher: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown potential {self.kind!r}")
        if self.kind == "fisher_quadratic":
            if self.fisher is None:
                raise ContractError("fisher_quadratic needs Fisher values")
            f = np.asarray(self.fisher, dtype=np.float64)
            if np.any(f < 0) or not np.all(np.isfinite(f)):
                raise ContractError("Fisher values must be finite and nonnegative")
            object.__setattr__(self, "fisher", f)

    def value(self, p) -> float:
        p = np.asarray(p, dtype=np.float64)
        if self.kind == "neg_entropy":
            return float(np.sum(xlogy(p, p)))
        if self.kind == "squared_norm":
            return float(p @ p)
        return float(0.5 * p @ (self.fisher * p))

    def gradient(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if self.kind == "neg_entropy":
            with np.errstate(divide="ignore"):
                return np.log(q) + 1.0
        if self.kind == "squared_norm":
            return 2.0 * q
        return self.fisher * q


NEG_ENTROPY = Potential("neg_entropy")
SQUARED_NORM = Potential("squared_norm")


def fisher_quadratic(values) -> Potential:
    return Potential("fisher_quadratic", np.asarray(values, dtype=np.float64))


def to_simplex(p) -> np.ndarray:
    """Validate a probability vector; renormalize if within tolerance."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise ContractError("a distribution must be a nonempty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ContractError("probabilities must be finite and nonnegative")
    total = p.sum()
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise ContractError(f"probabilities sum to {total!r}, not 1")
    return p / total


def divergence(phi: Potential, p, q) -> float:
    """Bregman divergence ``D_phi(p, q)`` from the generic definition.

    Under ``neg_entropy`` a zero in ``q`` where ``p`` is positive gives
    ``inf``; coordinates where both are zero contribute nothing.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ContractError(f"shape mismatch: {p.shape} vs {q.shape}")
    if phi.kind == "neg_entropy":
        p, q = to_simplex(p), to_simplex(q)
        if np.any((q == 0) & (p > 0)):
            return math.inf
        live = q > 0
        inner = float(np.dot(phi.gradient(q[live]), p[live] - q[live]))
        return max(phi.value(p) - phi.value(q) - inner, 0.0)
    if phi.kind == "fisher_quadratic" and phi.fisher.shape != p.shape:
        raise ContractError("Fisher values and arguments differ in length")
    d = phi.value(p) - phi.value(q) - float(np.dot(phi.gradient(q), p - q))
    return max(d, 0.0)


def kl_discrete(p, q) -> float:
    """``sum p_i log(p_i / q_i)`` with ``0 log 0 = 0``."""
    p = to_simplex(p)
    q = to_simplex(q)
    if p.shape != q.shape:
        raise ContractError(f"shape mismatch: {p.shape} vs {q.shape}")
    if np.any((q == 0) & (p > 0)):
        return math.inf
    live = p > 0
    return float(np.sum(p[live] * np.log(p[live] / q[live])))


def entropy(p) -> float:
    p = to_simplex(p)
    return float(-np.sum(xlogy(p, p)))
