"""Run records (JSON) and the append-only results CSV."""

from __future__ import annotations

import csv
import fcntl
import json
import math
import os
import subprocess
import time
from pathlib import Path

from clref.errors import ContractError
from clref.harness.metrics import AccuracyMatrix

CSV_COLUMNS = ("method", "refresh", "gamma", "steps", "interval", "buffer", "seed", "ACC", "BWT", "seconds")
CSV_NAME = "results.csv"


def git_describe() -> str | None:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    if out.returncode != 0:
        return None
    return out.stdout.strip() or None


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def csv_row(config, seed: int, metrics, timings) -> dict:
    acc, bwt = metrics
    r = config.refresh if config.refresh_enabled else None
    return {
        "method": config.objective.method,
        "refresh": "on" if r else "off",
        "gamma": r.gamma if r else "",
        "steps": r.steps if r else "",
        "interval": r.interval if r else "",
        "buffer": config.buffer_capacity if config.objective.uses_buffer else "",
        "seed": seed,
        "ACC": acc,
        "BWT": "" if bwt is None else bwt,
        "seconds": timings.get("total", ""),
    }


def append_csv(path, rows) -> Path:
    """Append rows under an exclusive lock; the header is written once, on an empty file."""
    path = Path(path)
    with open(path, "a", newline="") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            fh.seek(0, os.SEEK_END)
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            if fh.tell() == 0:
                writer.writeheader()
            for row in rows:
                writer.writerow(row)
            fh.flush()
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def persist_results(path, config, matrix: AccuracyMatrix, metrics, timings, seed: int | None = None,
                    diagnostics: dict | None = None) -> tuple[Path, Path]:
    """Write ``run-<label>-seed<k>.json`` into directory ``path`` and append one CSV row.

    Returns ``(record_path, csv_path)``.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ContractError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ContractError(f"output directory is not writable: {out}")
    seed = config.seeds[0] if seed is None else seed
    acc, bwt = metrics
    record = {
        "config": config.to_dict(),
        "seed": seed,
        "matrix": matrix.to_rows(),
        "ACC": acc,
        "BWT": bwt,
        "timings": dict(timings),
        "git": git_describe(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if diagnostics:
        record["diagnostics"] = {k: v for k, v in diagnostics.items() if k not in ("step_types", "losses")}
    record_path = out / f"run-{config.label.replace('+', '_')}-seed{seed}.json"
    try:
        with open(record_path, "w") as fh:
            json.dump(_jsonable(record), fh, indent=2)
        csv_path = append_csv(out / CSV_NAME, [csv_row(config, seed, metrics, timings)])
    except OSError as exc:
        raise ContractError(f"cannot write results under {out}: {exc}") from exc
    return record_path, csv_path


def load_record(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
