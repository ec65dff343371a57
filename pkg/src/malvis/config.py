"""Flat ``section.key = value`` run configuration.

Unknown keys and unparsable values raise ConfigError naming the key.
Every seed has a constant default, so a resolved config fully determines a run.
"""
from __future__ import annotations

from .errors import ConfigError
from .models import ARCHITECTURES


def _optional_int(text):
    return None if text in ("", "none", "None") else int(text)


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _arch_list(text):
    archs = tuple(a.strip() for a in text.split(",") if a.strip())
    for a in archs:
        if a not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {a!r}")
    return archs


# key -> (parser, default)
SCHEMA = {
    "data.root": (str, ""),
    "data.height": (int, 64),
    "data.width": (int, 64),
    "data.channels": (int, 1),
    "data.train_fraction": (float, 0.7),
    "data.val_fraction": (float, 0.15),
    "data.test_fraction": (float, 0.15),
    "data.split_seed": (int, 0),
    "data.max_per_family": (int, 0),
    "data.subsample_seed": (int, 0),
    "data.verify_images": (_bool, True),
    "data.train_manifest": (str, ""),
    "data.val_manifest": (str, ""),
    "data.test_manifest": (str, ""),
    "model.architecture": (str, "tiny_vgg"),
    "model.width_multiplier": (float, 1.0),
    "model.head": (str, ""),
    "model.seed": (int, 0),
    "train.epochs": (int, 30),
    "train.batch_size": (int, 64),
    "train.learning_rate": (float, 0.01),
    "train.momentum": (float, 0.9),
    "train.seed": (int, 0),
    "train.patience": (_optional_int, None),
    "train.aux_weight": (float, 0.3),
    "run.output_dir": (str, "runs/default"),
    "repro.architectures": (_arch_list, ARCHITECTURES),
}


def _format(value):
    if isinstance(value, tuple):
        return ",".join(value)
    if value is None:
        return "none"
    return str(value)


def parse_value(key: str, text: str):
    if key not in SCHEMA:
        raise ConfigError(key, "unknown configuration key")
    parser, _ = SCHEMA[key]
    try:
        return parser(text.strip())
    except ValueError as exc:
        raise ConfigError(key, f"bad value {text!r} ({exc})") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def resolve(file_text: str | None = None, overrides=(), source: str = "<config>") -> dict:
    """Defaults, then file values, then ``key=value`` overrides."""
    cfg = {key: default for key, (_, default) in SCHEMA.items()}
    if file_text:
        cfg.update(parse_config_text(file_text, source))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like section.key=value")
        key, value = item.split("=", 1)
        cfg[key.strip()] = parse_value(key.strip(), value)
    return cfg


def dump(cfg: dict) -> str:
    return "".join(f"{key} = {_format(cfg[key])}\n" for key in SCHEMA if key in cfg)
