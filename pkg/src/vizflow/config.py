"""Declarative run configuration: one YAML file, dot-path overrides, a digest.

Every run directory receives the fully resolved config and its digest so
reports can reference exactly what produced them. Validation happens
before any work: unknown keys, bad ranges, and missing referenced paths
are all config errors.
"""

from __future__ import annotations

import copy
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .datamodel import canonical_json, sha256_hex


class ConfigError(Exception):
    pass


# learning_rate / warmup_ratio / group_size document the downstream
# trainer's settings; nothing in this artifact consumes them.
DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "runs/default",
    "seeds": {
        "knowledge": "builtin",
        "tools": "builtin",
    },
    "generator": "mock:0",
    "checker": "mock:pass",
    "flywheel": {
        "rounds": 2,
        "combos_per_side": 1,
        "arity_choices": [1, 2, 3],
        "dedup_threshold": 0.85,
    },
    "calibration": {
        "max_iters": 3,
    },
    "expansion": {
        "fraction": 0.5,
    },
    "perception": {
        "count": 10,
    },
    "rollout": {
        "policy": "mock:0",
        "group_size": 4,
        "max_steps": 6,
        "questions": 4,
        "input_shard": "",
    },
    "eval": {
        "judge": "mock",
        "benchmark": "",
        "candidates": "",
    },
    "executor": {
        "workers": 2,
        "timeout_ms": 10000,
        "memory_mb": 512,
        "worker": "auto",  # auto | stub | list of argv strings
    },
    "rl": {
        "eps_low": 0.2,
        "eps_high": 0.2,
        "lambda_format": 0.5,
        "lambda_tool": 0.3,
        "std_floor": 1e-6,
        "group_size": 8,
        "learning_rate": 5.0e-7,
        "warmup_ratio": 0.05,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    value = yaml.safe_load(raw)
    node = config
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def builtin_seed_path(which: str) -> Path:
    name = {"knowledge": "knowledge_seeds.yaml", "tools": "tool_seeds.yaml"}[which]
    return Path(str(resources.files("vizflow").joinpath("data", name)))


def _validate(config: dict) -> None:
    errors: list[str] = []
    fw = config["flywheel"]
    if not (0 <= fw["rounds"] <= 16):
        errors.append("flywheel.rounds must be in [0, 16]")
    if fw["combos_per_side"] < 1:
        errors.append("flywheel.combos_per_side must be >= 1")
    if not (0.0 < fw["dedup_threshold"] <= 1.0):
        errors.append("flywheel.dedup_threshold must be in (0, 1]")
    if not (0.0 <= config["expansion"]["fraction"] <= 1.0):
        errors.append("expansion.fraction must be in [0, 1]")
    if config["calibration"]["max_iters"] < 1:
        errors.append("calibration.max_iters must be >= 1")
    if config["perception"]["count"] < 0:
        errors.append("perception.count must be >= 0")
    if config["executor"]["workers"] < 1:
        errors.append("executor.workers must be >= 1")
    rl = config["rl"]
    if rl["eps_low"] <= 0 or rl["eps_high"] <= 0:
        errors.append("rl clip bounds must be positive")
    if rl["std_floor"] <= 0:
        errors.append("rl.std_floor must be positive")
    for side in ("knowledge", "tools"):
        ref = config["seeds"][side]
        path = builtin_seed_path(side) if ref == "builtin" else Path(ref)
        if not path.exists():
            errors.append(f"seeds.{side} path {path} does not exist")
    for key in ("benchmark", "candidates"):
        ref = config["eval"][key]
        if ref and not Path(ref).exists():
            errors.append(f"eval.{key} path {ref} does not exist")
    shard = config["rollout"]["input_shard"]
    if shard and not Path(shard).exists():
        errors.append(f"rollout.input_shard path {shard} does not exist")
    worker = config["executor"]["worker"]
    if not (worker in ("auto", "stub") or isinstance(worker, list)):
        errors.append("executor.worker must be 'auto', 'stub', or an argv list")
    if errors:
        raise ConfigError("; ".join(errors))


def load_config(path: str | Path | None = None, sets: list[str] | None = None,
                seed: int | None = None) -> dict:
    """Load, override, and validate; returns the resolved config dict."""
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        config = _merge(config, raw)
    for assignment in sets or []:
        _apply_set(config, assignment)
    if seed is not None:
        config["seed"] = seed
    _validate(config)
    return config


def config_digest(config: dict) -> str:
    return sha256_hex(canonical_json(config).encode("utf-8"))


def echo_config(config: dict, run_dir: str | Path) -> str:
    """Write the resolved config and its digest into the run directory."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = config_digest(config)
    (run_dir / "config.resolved.yaml").write_text(
        yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
    (run_dir / "config.digest").write_text(digest + "\n", encoding="utf-8")
    return digest
