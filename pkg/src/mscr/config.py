"""Flat `key = value` config files, presets, and the dataclasses backing
training and scoring runs.

Keys are dotted with a section prefix (model., train., pipe., synth.,
score.). Unknown keys are an error: silent typos in experiment configs
are worse than loud ones.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

from .autodiff import ContractError
from .model import ModelConfig
from .sigproc import PipelineConfig
from .synth import DatasetConfig


@dataclass
class TrainConfig:
    alpha: float = 1.0  # local-loss weight
    beta: float = 1.0  # trend-loss weight
    epochs: int = 50
    batch_size: int = 32
    lr0: float = 1e-4
    weight_decay: float = 1e-5
    mask_ratio_g: float = 0.3
    mask_ratio_l: float = 0.3
    k_regions: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError(f"loss weights must be >= 0, got alpha={self.alpha} beta={self.beta}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class ScoreConfig:
    draws: int = 4  # independent mask draws averaged per (record, beat)
    mask_ratio_g: float = 0.3
    mask_ratio_l: float = 0.3
    k_regions: int = 4
    normalize_by_beats: bool = False
    window: int = 0  # 0 = score the whole record as one window
    stride: int = 0  # 0 = window // 2
    seed: int = 0

    def __post_init__(self):
        if self.draws < 1:
            raise ContractError(f"draws must be >= 1, got {self.draws}")


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "pipe": PipelineConfig,
    "synth": DatasetConfig,
    "score": ScoreConfig,
}


def _value_to_str(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _str_to_value(s: str, ftype, key: str):
    s = s.strip()
    try:
        if ftype is int:
            return int(s)
        if ftype is float:
            return float(s)
        if ftype is bool:
            if s.lower() in ("true", "1", "yes"):
                return True
            if s.lower() in ("false", "0", "no"):
                return False
            raise ValueError(s)
        if ftype is tuple:
            items = []
            for part in s.split(","):
                part = part.strip()
                if not part:
                    continue
                try:
                    items.append(int(part))
                except ValueError:
                    items.append(part)
            return tuple(items)
        return s
    except ValueError as exc:
        raise ContractError(f"config key {key!r}: cannot parse {s!r} as {ftype.__name__}") from exc


def config_to_flat(configs: dict) -> dict:
    """{'model': ModelConfig, ...} -> flat {'model.D': '512', ...}."""
    flat = {}
    for section, obj in configs.items():
        for f in dataclasses.fields(obj):
            flat[f"{section}.{f.name}"] = _value_to_str(getattr(obj, f.name))
    return flat


def flat_to_configs(flat: dict) -> dict:
    """Flat key/value strings -> fully built config dataclasses.

    Unknown sections or field names raise; missing keys take defaults.
    """
    kwargs: dict[str, dict] = {name: {} for name in SECTIONS}
    field_types = {
        name: {f.name: f.type for f in dataclasses.fields(cls)} for name, cls in SECTIONS.items()
    }
    # dataclass field types arrive as strings under `from __future__ import annotations`
    type_names = {"int": int, "float": float, "bool": bool, "str": str, "tuple": tuple}
    for key, raw in flat.items():
        if "." not in key:
            raise ContractError(f"unknown config key {key!r} (expected section.field)")
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ContractError(f"unknown config section {section!r} in key {key!r}")
        ftypes = field_types[section]
        if name not in ftypes:
            raise ContractError(f"unknown config key {key!r}")
        ftype = ftypes[name]
        if isinstance(ftype, str):
            ftype = type_names.get(ftype, str)
        kwargs[section][name] = _str_to_value(raw, ftype, key)
    return {name: cls(**kwargs[name]) for name, cls in SECTIONS.items()}


def parse_config_text(text: str) -> dict:
    """`key = value` lines; `#` starts a comment; blank lines ignored."""
    flat = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ContractError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = body.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def render_config_text(flat: dict) -> str:
    return "".join(f"{k} = {flat[k]}\n" for k in sorted(flat))


def load_config_file(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# -- presets -------------------------------------------------------------------

# Full protocol: the dataclass defaults (50 epochs, batch 32, lr 1e-4, wd 1e-5).
PRESET_PAPER: dict = {}

# Desk-scale benchmark: small budget, tuned for the synthetic dataset.
PRESET_DESK = {
    "train.epochs": "30",
    "train.batch_size": "32",
    "train.lr0": "0.002",
    "train.seed": "0",
    "model.seed": "0",
    "synth.seed": "0",
    "synth.n_train": "256",
    "synth.n_test_normal": "64",
    "synth.n_test_abnormal": "64",
    "score.draws": "4",
}

PRESETS = {"paper": PRESET_PAPER, "desk": PRESET_DESK}


def resolve_config(
    preset: Optional[str] = None,
    config_path: Optional[str] = None,
    overrides: Optional[dict] = None,
) -> dict:
    """Merge preset < config file < explicit overrides, then build configs."""
    flat: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ContractError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
        flat.update(PRESETS[preset])
    if config_path is not None:
        flat.update(load_config_file(config_path))
    if overrides:
        flat.update(overrides)
    configs = flat_to_configs(flat)
    configs["flat"] = config_to_flat({k: v for k, v in configs.items()})
    return configs
