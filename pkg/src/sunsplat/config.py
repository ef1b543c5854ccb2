"""Declarative run configuration for the four ablation pathways."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .render import Pathway

CONFIG_IDS = ("a", "b", "c", "d")

DEFAULT_LR = {
    "means": 1.6e-4,        # multiplied by the scene radius
    "log_scales": 5e-3,
    "quats": 1e-3,
    "opacity_logits": 5e-2,
    "features": 2.5e-3,
    "latents": 2.5e-3,
    "colors": 2.5e-3,
    "phi": 1e-3,
    "psi": 1e-3,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    config_id: str = "d"
    window: int = 10
    theta_view_deg: float = 10.0
    lambda_ssim: float = 0.2
    lambda_iso: float = 10.0
    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    lr_decay: float = 0.1               # end-of-round LR factor of the sawtooth
    n_init: int = 10000
    densify_every: int = 10             # rounds
    tau_grad: float = 2e-4
    tau_small: float = 0.01             # fraction of the scene radius
    tau_prune: float = 5e-3
    max_screen_frac: float = 0.5        # prune footprints wider than this fraction of the image
    max_gaussians: int = 20000
    sun_kappa: float = 1.0
    max_frames: int | None = None
    checkpoint_every: int = 0           # rounds; 0 disables periodic checkpoints
    seed: int = 0

    @property
    def pathway(self) -> Pathway:
        return Pathway(use_mlp=self.config_id != "a",
                       use_shadow=self.config_id in ("c", "d"))

    @property
    def use_iso(self) -> bool:
        return self.config_id == "d"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        validate(d)
        merged = dict(d)
        merged["lr"] = {**DEFAULT_LR, **d.get("lr", {})}
        return cls(**merged)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        return cls.from_dict(d)


_num = {"type": "number"}
SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "config_id": {"enum": list(CONFIG_IDS)},
        "window": {"type": "integer", "minimum": 3},
        "theta_view_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 180},
        "lambda_ssim": {"type": "number", "minimum": 0, "maximum": 1},
        "lambda_iso": {"type": "number", "minimum": 0},
        "lr": {"type": "object", "additionalProperties": False,
               "properties": {k: {"type": "number", "minimum": 0} for k in DEFAULT_LR}},
        "lr_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "n_init": {"type": "integer", "minimum": 1},
        "densify_every": {"type": "integer", "minimum": 1},
        "tau_grad": _num, "tau_small": _num, "tau_prune": _num,
        "max_screen_frac": {"type": "number", "exclusiveMinimum": 0},
        "max_gaussians": {"type": "integer", "minimum": 1},
        "sun_kappa": {"type": "number", "exclusiveMinimum": 0},
        "max_frames": {"type": ["integer", "null"], "minimum": 1},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
    },
}


def validate(d: dict) -> None:
    """Raise :class:`ConfigError` listing every violation with its field path."""
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(d), key=lambda e: list(e.path))
    if errors:
        lines = [f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid run config:\n  " + "\n  ".join(lines))
