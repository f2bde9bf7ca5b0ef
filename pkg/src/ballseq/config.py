"""Flat ``key = value`` configuration with dotted keys and typed defaults."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Optional

DEFAULTS: dict[str, object] = {
    "model.variant": "SweatyNet1",
    "model.dropout_p": 0.0,
    "model.base_channels": 8,
    "data.split_ratio": 0.7,
    "train.lr": 1e-3,
    "train.batch_size": 4,
    "train.max_epochs": 100,
    "train.max_steps": 0,
    "temporal.head": "TCN",
    "temporal.history": 20,
    "temporal.horizon": 1,
    "temporal.init": "default",
    "temporal.pretrain_lr": 1e-5,
    "temporal.pretrain_epochs": 20,
    "temporal.lr_detector": 1e-5,
    "temporal.lr_temporal": 1e-4,
    "temporal.finetune_epochs": 30,
    "temporal.batch_size": 1,
    "temporal.windows_per_sequence": 0,
    "temporal.history_source": "detector",
    "synth.n": 200,
    "synth.frame_w": 160,
    "synth.frame_h": 120,
    "eval.gamma": 5.0,
    "eval.a_min": "auto",
    "bench.trials": 30,
    "bench.warmup": 10,
    "bench.frame_w": 40,
    "bench.frame_h": 30,
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key: {key}")
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return type(default)(raw)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = _coerce(k, v)
    return out


def load_config(path: Optional[Path] = None, overrides: Iterable[str] = (), **explicit) -> dict:
    """Defaults, then the file, then ``key=value`` overrides, then explicit keyword values."""
    cfg = dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg.update(parse_lines(path.read_text().splitlines(), str(path)))
    cfg.update(parse_lines(overrides, "--set"))
    for k, v in explicit.items():
        if v is not None:
            cfg[k] = _coerce(k, v)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def dump(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))
