"""``clref`` command line: run, sweep, gradcheck, theory, bench."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from clref import plotting, theorycheck
from clref.errors import ContractError, DegenerateError, FormatError, NumericError
from clref.harness.config import RunConfig, load_config
from clref.harness.metrics import compute_metrics
from clref.harness.persist import persist_results
from clref.harness.training import make_stream, run_sequence
from clref.nncore import NetworkSpec
from clref.refresh import RefreshConfig

log = logging.getLogger("clref")

THEORY_KEYS = {"kind", "fisher_source", "s", "sigma", "n_instances", "seed", "layer_sizes", "activation",
               "fd_step", "quadratic_dim", "output"}


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _one_run(config: RunConfig, seed: int, out: Path | None):
    res = run_sequence(config, seed=seed)
    metrics = compute_metrics(res.matrix)
    if out is not None:
        persist_results(out, config, res.matrix, metrics, res.timings, seed=seed, diagnostics=res.diagnostics)
    return res, metrics


def _run_many(config: RunConfig, seeds, out, jobs: int):
    if jobs <= 1:
        return [_one_run(config, s, out) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_one_run, [config] * len(seeds), seeds, [out] * len(seeds)))


def _mean_sem(xs):
    xs = np.asarray(xs, dtype=float)
    sem = float(xs.std(ddof=1) / np.sqrt(len(xs))) if len(xs) > 1 else 0.0
    return float(xs.mean()), sem


def _fmt(v):
    return "-" if v is None else f"{100 * v:.2f}"


def cmd_run(args) -> int:
    config = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else list(config.seeds)
    out = Path(args.out or config.output)
    results = _run_many(config, seeds, out, args.jobs)
    print(f"{'method':<16}{'seed':>6}{'ACC':>8}{'BWT':>8}{'seconds':>9}")
    for seed, (res, (acc, bwt)) in zip(seeds, results):
        print(f"{config.label:<16}{seed:>6}{_fmt(acc):>8}{_fmt(bwt):>8}{res.timings['total']:>9.2f}")
        plotting.accuracy_matrix(res.matrix.values, out / f"matrix-{config.label.replace('+', '_')}-seed{seed}.png",
                                 title=f"{config.label}, seed {seed}")
    if len(results) > 1:
        m, s = _mean_sem([acc for _, (acc, _) in results])
        print(f"mean ACC {100 * m:.2f} +/- {100 * s:.2f} (sem, n={len(results)})")
    print(f"records and results.csv written to {out}")
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    out = Path(args.out or config.output)
    base_refresh = config.refresh or RefreshConfig()
    seeds = list(config.seeds)
    base_cfg = dataclasses.replace(config, refresh=None)
    baseline = [acc for _, (acc, _) in _run_many(base_cfg, seeds, out, args.jobs)]
    rows = []
    for j in _ints(args.steps):
        for g in _floats(args.gamma):
            cfg = dataclasses.replace(config, refresh=dataclasses.replace(base_refresh, gamma=g, steps=j))
            accs = [acc for _, (acc, _) in _run_many(cfg, seeds, out, args.jobs)]
            m, s = _mean_sem(accs)
            rows.append({"gamma": g, "steps": j, "mean": m, "sem": s, "accs": accs})
    b_mean, b_sem = _mean_sem(baseline)
    print(f"{'J':>3}{'gamma':>8}{'ACC':>8}{'sem':>7}")
    print(f"{'-':>3}{'off':>8}{100 * b_mean:>8.2f}{100 * b_sem:>7.2f}")
    for r in rows:
        print(f"{r['steps']:>3}{r['gamma']:>8g}{100 * r['mean']:>8.2f}{100 * r['sem']:>7.2f}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.json", "w") as fh:
        json.dump({"method": config.objective.method, "seeds": seeds,
                   "baseline": {"mean": b_mean, "sem": b_sem, "accs": baseline}, "grid": rows}, fh, indent=2)
    plotting.sweep(rows, out / "sweep.png", baseline=b_mean)
    print(f"sweep.json and sweep.png written to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = theorycheck.gradcheck(args.instances, args.seed)
    worst = {}
    for r in results:
        worst[r.method] = max(worst.get(r.method, 0.0), r.rel_error)
    for method, err in worst.items():
        print(f"{method:<10} max rel. error {err:.2e}")
    bad = [r for r in results if not r.rel_error < args.tol]
    print(f"{len(results) - len(bad)}/{len(results)} instances below {args.tol:g}")
    return 1 if bad else 0


def load_theory_config(path) -> dict:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ContractError("theory config must be a JSON object")
    unknown = set(raw) - THEORY_KEYS
    if unknown:
        raise ContractError(f"unknown theory config keys: {sorted(unknown)}")
    return raw


def cmd_theory(args) -> int:
    raw = load_theory_config(args.config)
    spec = None
    if "layer_sizes" in raw:
        spec = NetworkSpec(tuple(raw["layer_sizes"]), raw.get("activation", "tanh"))
    kwargs = {k: raw[k] for k in ("kind", "fisher_source", "s", "sigma", "n_instances", "seed", "fd_step",
                                  "quadratic_dim") if k in raw}
    report = theorycheck.verify_theorem(spec=spec, **kwargs)
    print(f"{'instance':>8}{'s':>10}{'cosine':>20}{'gap':>12}")
    for r in report.instances:
        print(f"{r.instance:>8}{r.s:>10.1e}{r.cosine:>20.15f}{r.gap:>12.3e}")
    print(f"mean cosine {report.cosine_similarity:.12f}  mean gap {report.relative_norm_gap:.3e}  "
          f"degenerate {report.n_degenerate}")
    doc = json.dumps(report.to_dict(), indent=2)
    print(doc)
    out = Path(args.out or raw.get("output", "results"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "theory.json").write_text(doc)
    plotting.theory(report, out / "theory.png")
    return 0


def cmd_bench(args) -> int:
    config = load_config(args.config)
    out = Path(args.out or config.output)
    refresh = config.refresh or RefreshConfig()
    seeds = list(config.seeds)
    stream = make_stream(config)
    times = {"off": [], "on": []}
    for seed in seeds:
        for label, cfg in (("off", dataclasses.replace(config, refresh=None)),
                           ("on", dataclasses.replace(config, refresh=refresh))):
            res = run_sequence(cfg, seed=seed, stream=stream)
            times[label].append(res.timings["train"])
    ratio = float(np.mean(times["on"]) / np.mean(times["off"]))
    print(f"{'refresh':<8}{'train s (mean)':>16}{'std':>8}")
    for k in ("off", "on"):
        print(f"{k:<8}{np.mean(times[k]):>16.3f}{np.std(times[k]):>8.3f}")
    print(f"ratio {ratio:.3f} (interval={refresh.interval}, J={refresh.steps})")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.json", "w") as fh:
        json.dump({"method": config.objective.method, "seeds": seeds, "seconds": times, "ratio": ratio,
                   "interval": refresh.interval, "steps": refresh.steps}, fh, indent=2)
    plotting.bench([config.objective.method, config.objective.method + "+refresh"],
                   [times["off"], times["on"]], out / "bench.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clref", description="Continual learning with refresh (unlearn-relearn).")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-task accuracies")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train through a task stream and record ACC/BWT")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--jobs", type=int, default=1, help="parallel seeds")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="grid over unlearning rate and unlearn steps")
    s.add_argument("--config", required=True)
    s.add_argument("--gamma", default="0.02,0.03,0.04")
    s.add_argument("--steps", default="1,2,3")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients of every preset")
    g.add_argument("--instances", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("theory", help="refresh gradient vs Fisher-weighted gradient-norm penalty")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.set_defaults(func=cmd_theory)

    b = sub.add_parser("bench", help="wall-clock with and without refresh")
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ContractError, FormatError, NumericError, DegenerateError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"clref: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
