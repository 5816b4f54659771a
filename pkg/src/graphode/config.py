"""Experiment configuration: key=value files plus command-line overrides.

Every mode declares its allowed keys; unknown keys are rejected by name so
typos fail loudly.  ``--set key=value`` overrides file entries, and the
``--seed`` / ``--out`` shorthands override ``seed`` / ``out_dir``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .kv import parse_kv_text

__all__ = ["MODES", "ExperimentConfig", "load_config_file"]

MODES = ("generate", "train", "rollout", "eval", "compare-attention")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _to_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")


def _coerce(raw: str, kind: type, key: str):
    try:
        if kind is bool:
            return _to_bool(raw, key)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected {kind.__name__}, got {raw!r}") from exc


# key -> (type, required, default); None default means "absent unless given"
_COMMON: dict[str, tuple[type, bool, object]] = {
    "out_dir": (str, True, None),
    "seed": (int, False, 0),
}

_SCHEMAS: dict[str, dict[str, tuple[type, bool, object]]] = {
    "generate": {
        "ndim": (int, True, None),
        "nx": (int, True, None),
        "ny": (int, False, None),
        "length": (float, False, 1.0),
        "nu": (float, True, None),
        "dt_ref": (float, True, None),
        "t_end": (float, True, None),
        "store_every": (int, False, 1),
        "train_dt": (float, False, None),
        "n_samples": (int, True, None),
        "advection": (bool, False, True),
        "advection_form": (str, False, "conservative"),
    },
    "train": {
        "dataset": (str, True, None),
        "train_samples": (int, False, None),
        "attention": (str, False, "fnn"),
        "attn_hidden": (int, False, 32),
        "core_hidden": (int, False, None),
        "taylor_degree": (int, False, 3),
        "layer1_agg": (str, False, "mean"),
        "layer2_agg": (str, False, "mean"),
        "offset_units": (str, False, "cells"),
        "model_seed": (int, False, 0),
        "tau_list": (str, False, None),
        "lr_list": (str, True, None),
        "depth_list": (str, False, None),
        "last_only": (bool, False, False),
        "optimizer": (str, False, "adam"),
        "calibrate": (bool, False, True),
        "checkpoint": (str, False, "model.ckpt"),
    },
    "rollout": {
        "dataset": (str, True, None),
        "model": (str, True, None),
        "steps": (int, False, None),
        "output": (str, False, "rollout"),
    },
    "eval": {
        "predictions": (str, True, None),
        "targets": (str, True, None),
        "model": (str, False, None),
        "metrics": (str, False, "metrics.csv"),
    },
    "compare-attention": {
        "dataset": (str, True, None),
        "test_dataset": (str, False, None),
        "train_samples": (int, False, None),
        "attn_hidden": (int, False, 32),
        "core_hidden": (int, False, None),
        "taylor_degree": (int, False, 3),
        "layer1_agg": (str, False, "mean"),
        "layer2_agg": (str, False, "mean"),
        "offset_units": (str, False, "cells"),
        "model_seed": (int, False, 0),
        "tau_list": (str, False, None),
        "lr_list": (str, True, None),
        "depth_list": (str, False, None),
        "last_only": (bool, False, False),
        "optimizer": (str, False, "adam"),
        "calibrate": (bool, False, True),
    },
}


@dataclass
class ExperimentConfig:
    """Mode plus the typed, schema-checked settings for one run."""

    mode: str
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        value = self.values.get(key, default)
        return default if value is None else value

    def as_manifest(self) -> dict[str, str]:
        pairs = {"mode": self.mode}
        for key in sorted(self.values):
            value = self.values[key]
            if value is not None:
                pairs[key] = str(value)
        return pairs

    @classmethod
    def from_sources(cls, mode: str, file_pairs: dict[str, str],
                     overrides: dict[str, str]) -> "ExperimentConfig":
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        schema = dict(_COMMON)
        schema.update(_SCHEMAS[mode])
        merged = dict(file_pairs)
        merged.update(overrides)
        if "mode" in merged:
            declared = merged.pop("mode")
            if declared != mode:
                raise ConfigError(f"config declares mode {declared!r} but {mode!r} was requested")
        unknown = sorted(set(merged) - set(schema))
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        values: dict[str, object] = {}
        for key, (kind, required, default) in schema.items():
            if key in merged:
                values[key] = _coerce(merged[key], kind, key)
            elif required:
                raise ConfigError(f"missing required key {key!r} for mode {mode!r}")
            else:
                values[key] = default
        return cls(mode=mode, values=values)


def load_config_file(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        return parse_kv_text(p.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
