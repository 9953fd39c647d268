"""Numerical check that one refresh step follows a Fisher-weighted gradient-norm penalty.

Two gradients are compared at the same point ``theta``:

* penalty gradient: ``grad [L(theta) + sigma * ||F^-1 grad L(theta)||]``, where
  the outer gradient of the norm term is taken by central differences;
* refresh direction: ``grad L(theta + s * delta)`` with
  ``delta = F^-1 grad L / ||grad L||``, i.e. the gradient the relearn step
  applies after one noise-free, normalized unlearn move. In terms of the
  unlearning rate this is ``gamma = s / ||grad L||``.

With ``sigma = s`` both agree to first order in ``s``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from clref import clmethods, nncore
from clref.errors import ContractError, DegenerateError, NumericError
from clref.fisher import DiagFisher, estimate_diag_fisher

DEGENERATE_NORM = 1e-12
FISHER_SOURCES = ("identity", "empirical", "empirical_raw", "random")
# matches the preconditioner refresh training uses by default
EMPIRICAL_DAMPING = 1.0


def fd_gradient(f: Callable[[np.ndarray], float], params, step: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per coordinate."""
    if not step > 0:
        raise ContractError("finite-difference step must be positive")
    x = np.array(params, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(len(x)):
        orig = x[i]
        x[i] = orig + step
        up = f(x)
        x[i] = orig - step
        down = f(x)
        x[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"objective is not finite around coordinate {i}", where=i)
        out[i] = (up - down) / (2.0 * step)
    return out


def fd_jacobian_vector(grad_fn, params, v, step: float = 1e-5) -> np.ndarray:
    """Hessian-vector product by central differences of the gradient."""
    x = np.asarray(params, dtype=np.float64)
    return (grad_fn(x + step * v) - grad_fn(x - step * v)) / (2.0 * step)


def weighted_grad_norm(grad_fn, fisher: DiagFisher) -> Callable[[np.ndarray], float]:
    return lambda p: float(np.linalg.norm(grad_fn(p) / fisher.denominator))


def penalty_gradient_fn(grad_fn, params, fisher: DiagFisher, sigma: float, step: float = 1e-5) -> np.ndarray:
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    params = np.asarray(params, dtype=np.float64)
    g = grad_fn(params)
    if np.linalg.norm(g / fisher.denominator) < DEGENERATE_NORM:
        raise DegenerateError("weighted gradient norm vanishes; its gradient is undefined")
    return g + sigma * fd_gradient(weighted_grad_norm(grad_fn, fisher), params, step)


def refresh_direction_fn(grad_fn, params, fisher: DiagFisher, s: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    g = grad_fn(params)
    norm = np.linalg.norm(g)
    if norm < DEGENERATE_NORM:
        raise DegenerateError("gradient vanishes; the normalized unlearn direction is undefined")
    delta = (g / fisher.denominator) / norm
    return grad_fn(params + s * delta)


def _grad_fn(spec, batch, objective_config, replay=None):
    return lambda p: clmethods.cl_loss_and_grad(spec, p, batch, replay, objective_config)[1]


def penalty_gradient(spec, params, batch, objective_config, fisher, sigma, step=1e-5):
    """Gradient of ``L + sigma * ||F^-1 grad L||`` for the CL objective on ``batch``."""
    return penalty_gradient_fn(_grad_fn(spec, batch, objective_config), params, fisher, sigma, step)


def refresh_direction(spec, params, batch, objective_config, fisher, s):
    """``grad L(theta + s F^-1 grad L / ||grad L||)`` for the CL objective on ``batch``."""
    return refresh_direction_fn(_grad_fn(spec, batch, objective_config), params, fisher, s)


@dataclass
class InstanceResult:
    instance: int
    s: float
    cosine: float
    gap: float
    correction_cosine: float


@dataclass
class TheoryReport:
    cosine_similarity: float
    relative_norm_gap: float
    s: float
    sigma: float
    kind: str
    fisher_source: str
    spec: tuple | None
    seed: int
    n_degenerate: int = 0
    mean_correction_cosine: float = float("nan")
    instances: list[InstanceResult] = field(default_factory=list)
    note: str = ("delta is normalized by ||grad L||; the equivalent unlearning rate "
                 "for a single unnormalized step is gamma = s / ||grad L||")

    def to_dict(self):
        return asdict(self)


def _cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def compare(grad_fn, params, fisher, s, sigma, fd_step=1e-5, instance=0) -> InstanceResult:
    g = grad_fn(np.asarray(params, dtype=np.float64))
    refresh = refresh_direction_fn(grad_fn, params, fisher, s)
    penalty = penalty_gradient_fn(grad_fn, params, fisher, sigma, fd_step)
    gap = float(np.linalg.norm(refresh - penalty) / np.linalg.norm(penalty))
    corr = _cosine(refresh - g, penalty - g)
    return InstanceResult(instance, s, _cosine(refresh, penalty), gap, corr)


def quadratic_instance(seed: int, dim: int = 6):
    """``L(x) = 0.5 x^T H x - b^T x`` with a seeded SPD ``H``; returns ``(grad_fn, H, x0)``."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    h = q @ np.diag(rng.uniform(0.5, 2.0, dim)) @ q.T
    b = rng.standard_normal(dim)
    x0 = rng.standard_normal(dim)
    return (lambda x: h @ x - b), h, x0


def mlp_instance(spec: nncore.NetworkSpec, seed: int, n_examples: int = 16):
    rng = np.random.default_rng(seed)
    params = nncore.init_params(spec, seed)
    batch = nncore.Batch(rng.standard_normal((n_examples, spec.n_inputs)),
                         rng.integers(0, spec.n_classes, n_examples))
    return params, batch


def _fisher_for(source, n, seed, spec=None, params=None, batch=None):
    if source == "identity":
        return DiagFisher.identity(n)
    if source == "random":
        rng = np.random.default_rng(seed + 7919)
        return DiagFisher(rng.uniform(0.5, 2.0, n))
    if source in ("empirical", "empirical_raw"):
        if spec is None:
            raise ContractError("an empirical Fisher needs a network instance")
        f = estimate_diag_fisher(spec, params, batch)
        if source == "empirical_raw":
            return f
        return DiagFisher(f.normalized("mean").values, EMPIRICAL_DAMPING)
    raise ContractError(f"unknown Fisher source {source!r}; choose from {FISHER_SOURCES}")


def verify_theorem(spec: nncore.NetworkSpec | None = None, seed: int = 0, fisher_source: str = "empirical",
                   s: float = 1e-3, sigma: float | None = None, n_instances: int = 20, kind: str = "mlp",
                   objective_config: clmethods.ObjectiveConfig | None = None, fd_step: float = 1e-5,
                   quadratic_dim: int = 6) -> TheoryReport:
    """Compare refresh and penalty gradients over seeded instances.

    ``kind`` is ``"mlp"`` (small tanh networks on random data) or
    ``"quadratic"``. ``sigma`` defaults to ``s``. Degenerate instances are
    skipped and counted.
    """
    sigma = s if sigma is None else sigma
    if kind == "mlp":
        spec = spec or nncore.NetworkSpec((4, 6, 3), "tanh")
        objective_config = objective_config or clmethods.ObjectiveConfig()
    elif kind != "quadratic":
        raise ContractError("kind must be 'mlp' or 'quadratic'")
    results, degenerate = [], 0
    for k in range(n_instances):
        inst_seed = seed * 100003 + k
        if kind == "mlp":
            params, batch = mlp_instance(spec, inst_seed)
            grad_fn = _grad_fn(spec, batch, objective_config)
            fisher = _fisher_for(fisher_source, spec.n_params, inst_seed, spec, params, batch)
        else:
            grad_fn, _, params = quadratic_instance(inst_seed, quadratic_dim)
            fisher = _fisher_for(fisher_source, quadratic_dim, inst_seed)
        try:
            results.append(compare(grad_fn, params, fisher, s, sigma, fd_step, k))
        except DegenerateError:
            degenerate += 1
    if not results:
        raise DegenerateError("every instance was degenerate")
    return TheoryReport(
        cosine_similarity=float(np.mean([r.cosine for r in results])),
        relative_norm_gap=float(np.mean([r.gap for r in results])),
        s=s, sigma=sigma, kind=kind, fisher_source=fisher_source,
        spec=spec.layer_sizes if (kind == "mlp" and spec) else None, seed=seed,
        n_degenerate=degenerate,
        mean_correction_cosine=float(np.mean([r.correction_cosine for r in results])),
        instances=results,
    )


@dataclass
class GradcheckResult:
    instance: int
    method: str
    layer_sizes: tuple
    activation: str
    rel_error: float


def gradcheck_instance(k: int, seed: int = 0, fd_step: float = 1e-5) -> GradcheckResult:
    """Analytic versus central-difference gradient of one seeded preset objective.

    Presets cycle with ``k``; every instance carries replay draws and
    consolidation references so that all terms of its preset are active.
    """
    rng = np.random.default_rng([seed, k])
    method = clmethods.METHODS[k % len(clmethods.METHODS)]
    sizes = (int(rng.integers(2, 6)),) + tuple(int(h) for h in rng.integers(2, 7, rng.integers(0, 3))) \
        + (int(rng.integers(2, 5)),)
    spec = nncore.NetworkSpec(sizes, ("tanh", "relu")[k // len(clmethods.METHODS) % 2])
    n, c = int(rng.integers(1, 9)), spec.n_classes
    params = nncore.init_params(spec, int(rng.integers(2**31))) + 0.1 * rng.standard_normal(spec.n_params)
    batch = nncore.Batch(rng.standard_normal((n, spec.n_inputs)), rng.integers(0, c, n))

    def draw(m):
        return clmethods.ReplaySample(rng.standard_normal((m, spec.n_inputs)), rng.integers(0, c, m),
                                      rng.standard_normal((m, c)))

    alpha, beta = float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.1, 2.0))
    replay = clmethods.Replay(draw(int(rng.integers(1, 6))), draw(int(rng.integers(1, 6))))
    config = clmethods.ObjectiveConfig(method, alpha=alpha, beta=beta, replay_ce_weight=float(rng.uniform(0.1, 1)))
    config = config.with_references(params + 0.3 * rng.standard_normal(spec.n_params),
                                    DiagFisher(rng.uniform(0, 2, spec.n_params)))

    def f(p):
        return clmethods.cl_loss_and_grad(spec, p, batch, replay, config)[0]

    analytic = clmethods.cl_loss_and_grad(spec, params, batch, replay, config)[1]
    numeric = fd_gradient(f, params, fd_step)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    err = float(np.linalg.norm(analytic - numeric) / scale)
    return GradcheckResult(k, method, sizes, spec.activation, err)


def gradcheck(n_instances: int = 50, seed: int = 0, fd_step: float = 1e-5) -> list[GradcheckResult]:
    return [gradcheck_instance(k, seed, fd_step) for k in range(n_instances)]
