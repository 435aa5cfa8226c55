"""Run configuration: nested YAML with strict keys and ``key=value`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "audio": {
        "sample_rate": 22050,
        "hop_length": 256,
        "win_length": 1024,
        "n_fft": 1024,
        "n_mels": 80,
        "f_min": 0.0,
        "f_max": 8000.0,
        "f0_min": 65.0,
        "f0_max": 550.0,
    },
    "model": {
        "d": 192,
        "encoder_layers": 4,
        "encoder_heads": 2,
        "encoder_ff": 768,
        "predictor_width": 256,
        "predictor_kernel": 3,
        "dropout": 0.1,
        "denoiser_blocks": 12,
        "denoiser_width": 256,
        "dilation_cycle": 4,
        "use_word_embeddings": True,
    },
    "pitch": {"bins": 256},
    "fusion": {"strategy": "post_predictor"},
    "word_encoder": {"kind": "hash", "path": None, "d_word": 768},
    "loss": {"lambda_fd": 4.0},
    "schedule": {"steps": 100, "beta_start": 1e-4, "beta_end": 0.06},
    "training": {
        "batch_size": 8,
        "steps": 5000,
        "lr": 1e-3,
        "lr_final": None,
        "grad_clip": 1.0,
        "pitch_jitter": 0,
        "mask_ratio": [0.2, 0.6],
        "ckpt_every": 1000,
        "log_every": 10,
    },
    "bench": {"mask_ratio": [0.2, 0.6], "dtw": False, "griffin_lim_iters": 32},
    "seeds": {"train": 0, "sample": 0},
    "paths": {"lexicon": None, "cache": None},
}

# Keys that do not change what a checkpoint computes.
_UNHASHED = {("training", "steps"), ("training", "ckpt_every"), ("training", "log_every"), ("paths",), ("bench",)}

# Named configs shipped with the package, loadable as e.g. ``--config toy``.
PACKAGED = Path(__file__).parent / "configs"

_STRATEGIES = {"pre_predictor", "condition_concat", "post_predictor"}


def _merge(base: dict, override: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = ".".join(path + (key,))
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be a mapping")
            out[key] = _merge(base[key], value, path + (key,))
        else:
            out[key] = value
    return out


class RunConfig:
    def __init__(self, data: dict | None = None):
        self.data = _merge(DEFAULTS, data or {})
        self._validate()

    @classmethod
    def load(cls, path=None, overrides: list[str] | None = None) -> "RunConfig":
        data: dict = {}
        if path is not None:
            p = Path(path)
            if not p.is_file() and (PACKAGED / f"{path}.yaml").is_file():
                p = PACKAGED / f"{path}.yaml"
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            try:
                data = yaml.safe_load(p.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {p}: {exc}") from exc
        cfg = cls(data)
        for item in overrides or []:
            cfg = cfg.with_override(item)
        return cfg

    def with_override(self, item: str) -> "RunConfig":
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        nested: dict = {}
        cur = nested
        parts = key.strip().split(".")
        for part in parts[:-1]:
            cur = cur.setdefault(part, {})
        cur[parts[-1]] = value
        return RunConfig(_merge(self.data, nested))

    def _validate(self) -> None:
        if self.data["fusion"]["strategy"] not in _STRATEGIES:
            raise ConfigError(f"fusion.strategy must be one of {sorted(_STRATEGIES)}")
        if self.data["word_encoder"]["kind"] not in ("hash", "bert"):
            raise ConfigError("word_encoder.kind must be 'hash' or 'bert'")
        for section in ("training", "bench"):
            lo, hi = self.data[section]["mask_ratio"]
            if not (0.0 < lo <= hi <= 1.0):
                raise ConfigError(f"{section}.mask_ratio must satisfy 0 < lo <= hi <= 1")
        if self.data["training"]["batch_size"] < 1:
            raise ConfigError("training.batch_size must be >= 1")

    def __getitem__(self, key: str):
        cur: Any = self.data
        for part in key.split("."):
            if not isinstance(cur, dict) or part not in cur:
                raise ConfigError(f"unknown config key: {key}")
            cur = cur[part]
        return cur

    def hashed_view(self) -> dict:
        view = copy.deepcopy(self.data)
        for path in _UNHASHED:
            node = view
            for part in path[:-1]:
                node = node[part]
            node.pop(path[-1], None)
        return view

    def hash(self) -> str:
        blob = json.dumps(self.hashed_view(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.data == other.data


def code_version() -> str:
    """Content hash over the package sources."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]
