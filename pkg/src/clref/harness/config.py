"""Run configuration, loaded from JSON with unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from clref.clmethods import ObjectiveConfig
from clref.errors import ContractError
from clref.harness.data import referenced_paths
from clref.harness.streams import StreamSpec
from clref.nncore import NetworkSpec
from clref.refresh import RefreshConfig


@dataclass(frozen=True)
class RunConfig:
    network: NetworkSpec = field(default_factory=lambda: NetworkSpec((784, 100, 10), "relu"))
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    refresh: RefreshConfig | None = None
    stream: StreamSpec = field(default_factory=StreamSpec)
    data: dict = field(default_factory=lambda: {"kind": "mnist5k"})
    epochs: int = 1
    batch_size: int = 32
    lr: float = 0.05
    buffer_capacity: int = 500
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output: str = "results"
    fisher_max_examples: int = 1000
    fisher_damping: float = 1e-5

    def __post_init__(self):
        if not self.seeds:
            raise ContractError("at least one seed is required")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be positive")
        if not self.lr > 0:
            raise ContractError("learning rate must be positive")
        if self.buffer_capacity < 1:
            raise ContractError("buffer_capacity must be positive")
        for p in referenced_paths(self.data):
            if not os.path.exists(p):
                raise ContractError(f"referenced data file does not exist: {p}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def refresh_enabled(self) -> bool:
        return self.refresh is not None and self.refresh.steps > 0

    @property
    def label(self) -> str:
        return self.objective.method + ("+refresh" if self.refresh_enabled else "")

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seeds=(int(seed),))

    def to_dict(self) -> dict:
        return {
            "network": {"layer_sizes": list(self.network.layer_sizes), "activation": self.network.activation},
            "objective": _public_fields(self.objective, skip=("theta_old", "fisher")),
            "refresh": None if self.refresh is None else _public_fields(self.refresh),
            "stream": _public_fields(self.stream),
            "data": dict(self.data),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "buffer_capacity": self.buffer_capacity,
            "seeds": list(self.seeds),
            "output": self.output,
            "fisher_max_examples": self.fisher_max_examples,
            "fisher_damping": self.fisher_damping,
        }


def _public_fields(obj, skip=()):
    out = {}
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _build(cls, raw, section, skip=()):
    if not isinstance(raw, dict):
        raise ContractError(f"section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = set(raw) - allowed
    if unknown:
        raise ContractError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    return cls(**kwargs)


def config_from_dict(raw: dict) -> RunConfig:
    allowed = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise ContractError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if "network" in raw:
        kwargs["network"] = _build(NetworkSpec, raw["network"], "network")
    if "objective" in raw:
        kwargs["objective"] = _build(ObjectiveConfig, raw["objective"], "objective", skip=("theta_old", "fisher"))
    if raw.get("refresh") is not None:
        kwargs["refresh"] = _build(RefreshConfig, raw["refresh"], "refresh")
    if "stream" in raw:
        kwargs["stream"] = _build(StreamSpec, raw["stream"], "stream")
    if "data" in raw:
        data = raw["data"]
        allowed_data = {"kind", "train_images", "train_labels", "test_images", "test_labels", "test_fraction"}
        if not isinstance(data, dict) or set(data) - allowed_data:
            raise ContractError(f"unknown keys in 'data': {sorted(set(data) - allowed_data)}")
    if "seeds" in raw:
        kwargs["seeds"] = tuple(raw["seeds"])
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    data = raw.get("data")
    if isinstance(data, dict):
        # relative data paths resolve against the config file's directory
        raw["data"] = {
            k: (str((path.parent / v).resolve()) if k.endswith(("_images", "_labels")) and v else v)
            for k, v in data.items()
        }
    return config_from_dict(raw)
