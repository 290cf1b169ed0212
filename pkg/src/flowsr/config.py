"""Run configuration: a flat, fully validated key-value namespace.

Values come from defaults, then an optional ``key = value`` text file, then
explicit overrides (command-line flags); later sources win. Every key is
checked against the schema before any work starts, so a typo fails fast
instead of training with a silently ignored setting.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

__all__ = ["RunConfig", "ConfigError", "load_config_file", "make_config"]


class ConfigError(ValueError):
    """Invalid, unknown, or missing configuration."""


@dataclass
class RunConfig:
    # reproducibility
    seed: int = 0
    threads: int = 1  # reference mode is 1; other values are accepted but
    # execution is single-threaded either way (kept for forward compatibility)

    # data pipeline
    scale: int = 4
    channels: int = 3
    patch: int = 32
    top_k: int = 10
    stride: int = 16
    min_variance: float = 0.0
    flow_smoothness: float = 15.0
    flow_iterations: int = 200

    # model
    depth: int = 8
    width: int = 32

    # training
    batch: int = 16
    iterations: int = 200
    lr: float = 1e-4
    lr_decay_epochs: int = 10
    lr_decay_factor: float = 0.1
    checkpoint_every: int = 0  # 0 writes only the final checkpoint
    dataset: str = ""
    pixel_loss: str = "wmse"  # "wmse" or "mse"; "mse" is the ablation baseline

    # spatial-objective loss weights
    sosr_pixel: float = 1.0
    sosr_feature: float = 1.0
    sosr_adversarial: float = 0.005

    # temporal-objective loss weights
    tosr_sr: float = 1.0
    tosr_warp_sr: float = 0.8
    tosr_warp_hr: float = 0.1

    def require(self, key: str):
        """Return a key's value, failing if the current command needs it
        and it was left empty."""
        value = getattr(self, key)
        if not value:
            raise ConfigError(f"missing required config key: {key}")
        return value


_SCHEMA = {f.name: f.type for f in fields(RunConfig)}
_POSITIVE = {
    "scale", "channels", "patch", "top_k", "stride", "depth", "width",
    "batch", "iterations", "lr", "lr_decay_epochs", "threads",
    "flow_smoothness", "flow_iterations",
}
_NONNEGATIVE = {
    "min_variance", "lr_decay_factor", "checkpoint_every",
    "sosr_pixel", "sosr_feature", "sosr_adversarial",
    "tosr_sr", "tosr_warp_sr", "tosr_warp_hr",
}


def _coerce(key: str, value) -> object:
    kind = _SCHEMA.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key: {key}")
    try:
        if kind in (int, "int"):
            out = int(str(value))
        elif kind in (float, "float"):
            out = float(str(value))
        else:
            out = str(value)
    except ValueError:
        raise ConfigError(f"config key {key} expects {kind}, got {value!r}") from None
    if key in _POSITIVE and not out > 0:
        raise ConfigError(f"config key {key} must be positive, got {out}")
    if key in _NONNEGATIVE and not out >= 0:
        raise ConfigError(f"config key {key} must be nonnegative, got {out}")
    if key == "pixel_loss" and out not in ("wmse", "mse"):
        raise ConfigError(f"config key pixel_loss must be 'wmse' or 'mse', got {out!r}")
    return out


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            out[key] = value
    return out


def make_config(file=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then overrides; every key validated."""
    cfg = RunConfig()
    for source in (load_config_file(file) if file else {}), (overrides or {}):
        for key, value in source.items():
            setattr(cfg, key, _coerce(key, value))
    return cfg
