"""Experiment configuration: desk-scale defaults, key=value files, overrides."""

from dataclasses import dataclass, fields

from .errors import ConfigError

LOSS_KINDS = ("pixelwise", "blob_marginalized", "consensus")


@dataclass
class ExperimentConfig:
    """Reference desk-scale setup.

    64x64 scenes, 500/100/100 splits, batch 16, 40 epochs, Adam from 1e-3
    with a x0.1 plateau step (patience 5, floor 1e-5) on validation mean
    recall, and a 10:5 weighting of the consensus terms. Regularization
    (horizontal flip, dropout) is off unless requested.
    """

    seed: int = 0
    image_size: int = 64
    train_size: int = 500
    val_size: int = 100
    test_size: int = 100
    loss: str = "consensus"
    alpha: float = 10.0
    beta: float = 5.0
    learning_rate: float = 1e-3
    lr_floor: float = 1e-5
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    epochs: int = 40
    batch_size: int = 16
    base_channels: int = 16
    flip_augment: bool = False
    dropout_rate: float = 0.0
    noise: float = 0.18
    max_occluders: int = 3
    split_blob_components: bool = True

    def __post_init__(self):
        for name in ("image_size", "train_size", "val_size", "test_size",
                     "epochs", "batch_size", "base_channels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.image_size % 2:
            raise ConfigError("image_size must be even (one x2 shuffle stage)")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.noise < 0 or self.max_occluders < 0:
            raise ConfigError("noise and max_occluders must be nonnegative")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if self.learning_rate < 0 or self.lr_floor < 0:
            raise ConfigError("learning rates must be nonnegative")

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def replace(self, **overrides):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(overrides)
        return ExperimentConfig(**values)


def _coerce(name, raw, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text, base=None):
    """Parse ``key=value`` lines (# comments allowed) over ``base`` defaults."""
    type_map = {"int": int, "float": float, "str": str, "bool": bool}
    field_types = {
        f.name: type_map[f.type] if isinstance(f.type, str) else f.type
        for f in fields(ExperimentConfig)
    }
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in field_types:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        overrides[key] = _coerce(key, value, field_types[key])
    base = base or ExperimentConfig()
    return base.replace(**overrides)


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base=base)
