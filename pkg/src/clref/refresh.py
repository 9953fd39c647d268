"""Refresh learning: preconditioned noisy ascent (unlearn), then one descent (relearn).

One refresh iteration on minibatch ``B``::

    theta_0 = theta
    theta_j = theta_{j-1} + gamma F^-1 grad L(theta_{j-1}) + N(0, 2 gamma F^-1)   j = 1..J
    theta'  = theta - lr * grad L(theta_J)

The relearn gradient is taken at the unlearned point but applied to the
original parameters. ``L`` is the active CL objective evaluated on ``B`` and
one replay draw that stays fixed for all ``J + 1`` gradient evaluations.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from clref import clmethods, nncore
from clref.errors import ContractError, NumericError
from clref.fisher import DiagFisher, noise_scale, precondition

UNLEARN_TARGETS = ("full", "ce_only", "doubled_output")
FISHER_SOURCES = ("accumulated", "last_task", "identity")


@dataclass(frozen=True)
class RefreshConfig:
    gamma: float = 0.03
    steps: int = 1
    interval: int = 2
    noise_enabled: bool = False
    rng_seed: int = 0
    unlearn_target: str = "full"
    max_displacement: float | None = 1.0
    fisher_source: str = "accumulated"
    fisher_normalize: str = "mean"
    noise_temperature: float = 1.0
    damping: float | None = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ContractError(f"gamma must be finite and >= 0, got {self.gamma}")
        if self.steps < 0:
            raise ContractError("number of unlearn steps must be >= 0")
        if self.interval < 1:
            raise ContractError("refresh interval must be >= 1")
        if self.unlearn_target not in UNLEARN_TARGETS:
            raise ContractError(f"unlearn_target must be one of {UNLEARN_TARGETS}")
        if self.fisher_source not in FISHER_SOURCES:
            raise ContractError(f"fisher_source must be one of {FISHER_SOURCES}")
        if self.fisher_normalize not in ("none", "mean", "max"):
            raise ContractError("fisher_normalize must be none, mean or max")
        if self.max_displacement is not None and not self.max_displacement > 0:
            raise ContractError("max_displacement must be positive or None")
        if self.damping is not None and not self.damping > 0:
            raise ContractError("damping must be positive or None")
        if not self.noise_temperature >= 0:
            raise ContractError("noise_temperature must be >= 0")


def unlearn_step(params, grad_fn, fisher: DiagFisher, config: RefreshConfig, rng: np.random.Generator,
                 info: dict | None = None) -> np.ndarray:
    """One ascent step ``params + gamma F^-1 g + xi``.

    ``grad_fn(params)`` returns the objective gradient. When the deterministic
    displacement's largest entry exceeds ``config.max_displacement`` it is
    rescaled to that size and ``info["capped"]`` is set.
    """
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad_fn(params), dtype=np.float64)
    step = config.gamma * precondition(fisher, g)
    capped = False
    if config.max_displacement is not None:
        biggest = float(np.max(np.abs(step))) if step.size else 0.0
        if biggest > config.max_displacement:
            step = step * (config.max_displacement / biggest)
            capped = True
    out = params + step
    if config.noise_enabled and config.gamma > 0:
        sigma = noise_scale(fisher, config.gamma)
        if config.noise_temperature != 1.0:
            sigma = sigma * math.sqrt(config.noise_temperature)
        out = out + sigma * rng.standard_normal(len(params))
    if info is not None:
        info["capped"] = capped
    bad = np.flatnonzero(~np.isfinite(out))
    if len(bad):
        raise NumericError(f"unlearn step produced a non-finite value at index {int(bad[0])}", where=int(bad[0]))
    return out


def deterministic_unlearn(params, grad, fisher: DiagFisher, alpha: float) -> np.ndarray:
    """Noise-free unlearning ``params + (1 / alpha) F^-1 grad``."""
    if not alpha > 0:
        raise ContractError(f"alpha must be positive, got {alpha}")
    gamma = 1.0 / alpha
    return np.asarray(params, dtype=np.float64) + gamma * precondition(fisher, grad)


def unlearn_objective_config(config: clmethods.ObjectiveConfig, target: str) -> clmethods.ObjectiveConfig:
    """Objective whose gradient drives the ascent phase.

    ``full`` ascends the active objective as is; ``ce_only`` drops every
    regularizer; ``doubled_output`` doubles the output-space weights.
    """
    if target == "full":
        return config
    if target == "ce_only":
        return dataclasses.replace(config, alpha=0.0, beta=0.0, replay_ce_weight=0.0)
    return dataclasses.replace(config, alpha=2 * config.alpha, replay_ce_weight=2 * config.second_weight)


def refresh_train_step(spec: nncore.NetworkSpec, params, batch: nncore.Batch, buffer, objective_config,
                       fisher: DiagFisher, refresh_config: RefreshConfig, lr: float, iteration_index: int,
                       rng: np.random.Generator, noise_rng: np.random.Generator | None = None):
    """One training iteration, with a refresh when ``iteration_index % interval == 0``.

    The preconditioner is ``fisher`` (identity if ``None``) rescaled per
    ``refresh_config.fisher_normalize`` and, when ``refresh_config.damping``
    is set, damped by that amount instead of the Fisher's own epsilon.

    ``rng`` draws the replay sample; ``noise_rng`` (default ``rng``) draws the
    unlearning noise. Returns ``(new_params, diagnostics)``.
    """
    noise_rng = rng if noise_rng is None else noise_rng
    replay = clmethods.draw_replay(buffer, objective_config, rng)
    base = clmethods.objective(spec, batch, replay, objective_config)
    do_refresh = refresh_config.steps > 0 and iteration_index % refresh_config.interval == 0
    if not do_refresh:
        loss, grad, parts = base(params)
        return nncore.sgd_step(params, grad, lr), {"step_type": "plain", "loss": loss, "capped": 0}

    if fisher is None or refresh_config.fisher_source == "identity":
        fisher = DiagFisher.identity(spec.n_params)
    fisher = fisher.normalized(refresh_config.fisher_normalize)
    if refresh_config.damping is not None:
        fisher = DiagFisher(fisher.values, refresh_config.damping)
    unlearn_cfg = unlearn_objective_config(objective_config, refresh_config.unlearn_target)
    unlearn_fn = clmethods.objective(spec, batch, replay, unlearn_cfg)

    theta = np.asarray(params, dtype=np.float64)
    capped = 0
    for _ in range(refresh_config.steps):
        info = {}
        theta = unlearn_step(theta, lambda p: unlearn_fn(p)[1], fisher, refresh_config, noise_rng, info)
        capped += int(info["capped"])
    loss, grad, parts = base(theta)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss after unlearning at iteration {iteration_index}", where=iteration_index)
    new_params = nncore.sgd_step(params, grad, lr)
    return new_params, {"step_type": "refresh", "loss": loss, "capped": capped}
