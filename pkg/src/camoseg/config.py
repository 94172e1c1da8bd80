"""Run configuration: dataclass, flat key=value config files, stable hashing."""

import hashlib
import json
from dataclasses import dataclass, asdict

from .model import ModelConfig


class ConfigError(ValueError):
    """Bad config values or unknown keys: a user error, not a bug."""


@dataclass
class TrainConfig:
    image_size: int = 64
    batch_size: int = 8
    pretrain_epochs: int = 100
    adv_epochs: int = 30
    lr_pretrain: float = 1e-4
    lr_pretrain_step: int = 50     # epochs between x0.1 decays during pretraining
    lr_adv: float = 1e-4
    lr_adv_step: int = 15          # epochs between x0.1 decays during adversarial training
    lr_gamma: float = 0.1
    betas_pretrain: tuple = (0.9, 0.999)
    betas_adv: tuple = (0.5, 0.99)
    beta: float = 0.1              # weight of the feature consistency term
    lam: float = 0.1               # weight of the concealment term
    detector_loss: str = "full"    # "full" | "plain"
    pool_window: int | None = None
    adv_multi_map: bool = False
    alternation: str = "per_batch"  # "per_batch" | "per_epoch"
    real_mix: float = 0.0          # probability of a real (unperturbed) batch in phase II
    grad_clip: float = 5.0
    seed: int = 0
    hflip: bool = False
    max_steps: int | None = None   # optional hard cap on optimizer steps per stage

    def validate(self):
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("pretrain_epochs", "adv_epochs", "lr_pretrain_step", "lr_adv_step"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("lr_pretrain", "lr_adv", "lr_gamma", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("beta", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.detector_loss not in ("full", "plain"):
            raise ConfigError(f"detector_loss must be 'full' or 'plain', got '{self.detector_loss}'")
        if self.alternation not in ("per_batch", "per_epoch"):
            raise ConfigError(f"alternation must be 'per_batch' or 'per_epoch'")
        if not (0.0 <= self.real_mix <= 1.0):
            raise ConfigError(f"real_mix must be in [0, 1], got {self.real_mix}")
        if self.pool_window is not None and (self.pool_window < 1 or self.pool_window % 2 == 0):
            raise ConfigError("pool_window must be a positive odd integer")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        return self

    def to_dict(self):
        d = asdict(self)
        d["betas_pretrain"] = list(d["betas_pretrain"])
        d["betas_adv"] = list(d["betas_adv"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("betas_pretrain", "betas_adv"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d).validate()


def config_hash(model_cfg, train_cfg):
    """Stable short hash of the full configuration, recorded in checkpoints and manifests."""
    payload = json.dumps({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _parse_value(raw):
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if "," in text:
        return tuple(_parse_value(part) for part in text.split(","))
    return text


def parse_config_text(text):
    """Flat `dotted.key = value` lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{stripped}'")
        key, _, raw = stripped.partition("=")
        out[key.strip()] = _parse_value(raw)
    return out


# dotted config key -> (dataclass, field name)
_KEY_MAP = {
    "encoder.kind": ("model", "encoder"),
    "encoder.channels": ("model", "encoder_channels"),
    "encoder.pretrained": ("model", "pretrained_backbone"),
    "decoder.width": ("model", "width"),
    "decoder.background_mask": ("model", "background_mask"),
    "decoder.gate_order": ("model", "gate_order"),
    "decoder.aspp_dilations": ("model", "aspp_dilations"),
    "loss.beta": ("train", "beta"),
    "loss.lambda": ("train", "lam"),
    "loss.pool_window": ("train", "pool_window"),
    "loss.adv_multi_map": ("train", "adv_multi_map"),
    "loss.detector": ("train", "detector_loss"),
    "train.image_size": ("train", "image_size"),
    "train.batch_size": ("train", "batch_size"),
    "train.pretrain_epochs": ("train", "pretrain_epochs"),
    "train.adv_epochs": ("train", "adv_epochs"),
    "train.lr_pretrain": ("train", "lr_pretrain"),
    "train.lr_pretrain_step": ("train", "lr_pretrain_step"),
    "train.lr_adv": ("train", "lr_adv"),
    "train.lr_adv_step": ("train", "lr_adv_step"),
    "train.lr_gamma": ("train", "lr_gamma"),
    "train.alternation": ("train", "alternation"),
    "train.grad_clip": ("train", "grad_clip"),
    "train.seed": ("train", "seed"),
    "train.hflip": ("train", "hflip"),
    "train.max_steps": ("train", "max_steps"),
    "adv.real_mix": ("train", "real_mix"),
}


def apply_config(mapping, model_cfg=None, train_cfg=None):
    """Overlay flat dotted keys onto (ModelConfig, TrainConfig); unknown keys are errors."""
    model_d = (model_cfg or ModelConfig()).to_dict()
    train_d = (train_cfg or TrainConfig()).to_dict()
    for key, value in mapping.items():
        if key not in _KEY_MAP:
            raise ConfigError(f"unknown config key '{key}'")
        which, field_name = _KEY_MAP[key]
        (model_d if which == "model" else train_d)[field_name] = value
    try:
        return ModelConfig.from_dict(model_d), TrainConfig.from_dict(train_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config_file(path, model_cfg=None, train_cfg=None):
    with open(path) as fh:
        mapping = parse_config_text(fh.read())
    return apply_config(mapping, model_cfg, train_cfg)
