"""Run manifests and config-file handling for the CLI.

A config file is a JSON document with sections (trainer, solver,
retrieval, imbalance); CLI flags override file values. Unknown keys are
rejected by name. Every CLI run ends by atomically writing exactly one
RunManifest recording the resolved config, seed, outputs and their
checksums; re-running the same resolved config and seed reproduces the
checksums byte for byte (single-threaded mode).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .costs import CostKind
from .discrete import SolverConfig
from .errors import ConfigurationError
from .experiments import ImbalanceSpec, RetrievalConfig
from .trainer import TrainerConfig

SECTIONS = {
    "trainer": TrainerConfig,
    "solver": SolverConfig,
    "retrieval": RetrievalConfig,
    "imbalance": ImbalanceSpec,
}


def cfg_to_dict(dc):
    """Recursively serialize a dataclass config to JSON-safe values."""
    if dataclasses.is_dataclass(dc):
        return {f.name: cfg_to_dict(getattr(dc, f.name))
                for f in dataclasses.fields(dc)}
    if isinstance(dc, (tuple, list)):
        return [cfg_to_dict(v) for v in dc]
    if isinstance(dc, (np.floating, np.integer)):
        return dc.item()
    if isinstance(dc, float) and np.isinf(dc):
        return "inf"
    return dc


def _coerce(value, field: dataclasses.Field):
    if value == "inf":
        return float("inf")
    if isinstance(value, list):
        return tuple(_coerce(v, field) for v in value)
    return value


def dataclass_from_dict(cls, data: dict, section: str):
    """Build a config dataclass, rejecting unknown keys by name."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {section!r} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigurationError(f"unknown config key {section}.{key}")
        field = names[key]
        if key == "cost" and isinstance(value, dict):
            value = dataclass_from_dict(CostKind, value, f"{section}.cost")
        elif key == "kinds" and isinstance(value, list):
            value = tuple(
                dataclass_from_dict(CostKind, v, f"{section}.kinds")
                if isinstance(v, dict) else CostKind(v)
                for v in value
            )
        else:
            value = _coerce(value, field)
        kwargs[key] = value
    return cls(**kwargs)


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    for key in data:
        if key not in SECTIONS:
            raise ConfigurationError(f"unknown config section {key!r}")
    return data


def resolve_section(cls, file_data: dict, section: str, overrides: dict):
    """File section values overlaid with CLI overrides, then validated."""
    merged = dict(file_data.get(section, {}))
    for k, v in overrides.items():
        if v is not None:
            merged[k] = v
    return dataclass_from_dict(cls, merged, section)


def roundtrip_config(dc, section: str):
    """parse(serialize(cfg)) == cfg sanity check used by tests and the CLI."""
    return dataclass_from_dict(type(dc), json.loads(json.dumps(cfg_to_dict(dc))),
                               section)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


class RunManifest:
    """Reproducibility record for one CLI run; written atomically at the end."""

    def __init__(self, command: str, config: dict, seed: int):
        self.command = command
        self.config = config
        self.seed = seed
        self.start = time.time()
        self.outputs: list[Path] = []
        self.status = "ok"

    def record(self, *paths) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def write(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "artifact_version": __version__,
            "started_at": self.start,
            "ended_at": time.time(),
            "status": self.status,
            "outputs": [
                {"path": str(p), "sha256": sha256_file(p)}
                for p in self.outputs if Path(p).exists()
            ],
        }
        path = out_dir / "manifest.json"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        tmp.replace(path)
        return path
