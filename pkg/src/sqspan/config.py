"""Config schema, named profiles, and parsing for the CLI.

Configs are nested trees with sections [data], [gan], [distill], [loss],
[eval] plus top-level seed/deterministic/profile keys, read from TOML or
JSON. Resolution order: built-in defaults, then the named profile, then the
file, then explicit overrides. Unknown keys are rejected with
path-qualified messages, and the fully resolved snapshot emitted into every
run directory parses back to the identical config.
"""

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .augment import AugmentationPolicy
from .data import ShapesSpec
from .gan import GeneratorSpec
from .losses import LossWeights

METHODS = ("sqsp", "squeeze", "vanilla", "vanilla_aug", "latent", "latent_squeeze", "encoder")


class ConfigError(Exception):
    """Invalid config: unknown key, bad type, bad value, or unreadable file."""


@dataclass(frozen=True)
class DataConfig:
    dataset: str = "shapes"
    image_size: int = 32
    num_classes: int = 4
    color_range: float = 0.5
    jitter: float = 0.25
    seed: int = 0
    n_train: int = 2048
    n_val: int = 512
    augment: AugmentationPolicy = field(default_factory=AugmentationPolicy)

    def shapes_spec(self) -> ShapesSpec:
        return ShapesSpec(
            image_size=self.image_size,
            num_classes=self.num_classes,
            color_range=self.color_range,
            jitter=self.jitter,
            seed=self.seed,
        )


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 64
    w_dim: int = 64
    mapper_layers: int = 2
    block_channels: tuple = (128, 64, 32, 16)
    norm: str = "batch"
    activation: str = "leaky_relu"
    steps: int = 2000
    batch_size: int = 64
    lr: float = 2e-4
    checkpoint: str = ""

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            latent_dim=self.latent_dim,
            w_dim=self.w_dim,
            mapper_layers=self.mapper_layers,
            block_channels=tuple(self.block_channels),
            norm=self.norm,
            activation=self.activation,
        )


@dataclass(frozen=True)
class DistillConfig:
    method: str = "sqsp"
    epochs: int = 25
    batch_size: int = 64
    base_lr: float = 0.12
    weight_decay: float = 5e-4
    momentum: float = 0.9
    block_set: Optional[tuple] = None  # None means all blocks
    proj_dim: int = 128
    widths: tuple = (16, 32, 64)
    blocks_per_stage: int = 2
    encoder_real: bool = False
    encoder_lambda: float = 1.0
    checkpoint_every: int = 0  # 0 keeps only the final checkpoint


@dataclass(frozen=True)
class EvalConfig:
    probe_max_iter: int = 200
    embed_samples: int = 1024
    embed_batch: int = 256


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    deterministic: bool = True
    data: DataConfig = field(default_factory=DataConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    eval: EvalConfig = field(default_factory=EvalConfig)


# File/profile keys mapped onto dataclass field names where they differ.
_ALIASES = {
    "loss": {"lambda": "lam"},
}
_SECTIONS = ("data", "gan", "distill", "loss", "eval")


PROFILES = {
    # desk-scale: everything sized to train on one CPU in minutes
    "tiny": {
        # color_range 2 overlaps neighboring hue arcs, so probes cannot
        # read the class off mean color alone and have to see shape.
        # Hue jitter and grayscale are dialed way down for the same reason:
        # on this dataset hue carries half the label, so the natural-image
        # strengths would erase class signal instead of teaching invariance.
        "data": {"image_size": 32, "num_classes": 4, "color_range": 2.0,
                 "n_train": 2048, "n_val": 512,
                 "augment": {"color_jitter": [0.4, 0.4, 0.4, 0.02],
                             "grayscale_prob": 0.0}},
        "gan": {"block_channels": [128, 64, 32, 16], "steps": 2000, "batch_size": 64},
        "distill": {"epochs": 64, "batch_size": 64, "base_lr": 0.12, "weight_decay": 5e-4,
                    "proj_dim": 128, "widths": [16, 32, 64]},
        "loss": {"lambda": 25.0, "mu": 25.0, "nu": 1.0, "alpha": 0.5},
    },
    "cifar-like": {
        "data": {"image_size": 32, "augment": {"blur_enabled": False}},
        "gan": {"block_channels": [256, 128, 64, 32]},
        "distill": {"epochs": 800, "batch_size": 512, "base_lr": 0.03,
                    "weight_decay": 5e-4, "momentum": 0.9, "proj_dim": 2048,
                    "widths": [64, 128, 256]},
        "loss": {"lambda": 25.0, "mu": 25.0, "nu": 1.0, "alpha": 0.5},
    },
    "cifar100-like": {
        "data": {"image_size": 32, "num_classes": 100,
                 "augment": {"blur_enabled": False}},
        "gan": {"block_channels": [256, 128, 64, 32]},
        "distill": {"epochs": 800, "batch_size": 512, "base_lr": 0.03,
                    "weight_decay": 5e-4, "momentum": 0.9, "proj_dim": 2048,
                    "widths": [64, 128, 256]},
        "loss": {"lambda": 10.0, "mu": 10.0, "nu": 1.0, "alpha": 0.5},
    },
    "stl-like": {
        "data": {"image_size": 64, "augment": {"blur_enabled": True}},
        "gan": {"block_channels": [256, 128, 64, 32, 16]},
        "distill": {"epochs": 200, "batch_size": 512, "base_lr": 0.05,
                    "weight_decay": 1e-4, "momentum": 0.9, "proj_dim": 2048,
                    "widths": [64, 128, 256]},
        "loss": {"lambda": 25.0, "mu": 25.0, "nu": 1.0, "alpha": 0.5},
    },
}


def _coerce(value, annotation, path: str):
    """Cast a raw config value to the dataclass field's type, or raise ConfigError."""
    origin = getattr(annotation, "__origin__", None)
    if annotation == Optional[tuple]:
        if value is None or value == "all":
            return None
        annotation = tuple
    if annotation is bool or annotation == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key {path}: expected bool, got {value!r}")
    if annotation is int or annotation == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {path}: expected int, got {value!r}")
        return value
    if annotation is float or annotation == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path}: expected number, got {value!r}")
        return float(value)
    if annotation is str or annotation == "str":
        if not isinstance(value, str):
            raise ConfigError(f"config key {path}: expected string, got {value!r}")
        return value
    if annotation is tuple or annotation == "tuple" or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key {path}: expected list, got {value!r}")
        return tuple(value)
    raise ConfigError(f"config key {path}: unsupported value {value!r}")


def _apply_updates(obj, updates: dict, path: str):
    """Return a copy of dataclass obj with updates applied, validating keys/types."""
    if not isinstance(updates, dict):
        raise ConfigError(f"config section {path}: expected a table, got {updates!r}")
    known = {f.name: f for f in fields(obj)}
    aliases = _ALIASES.get(path, {})
    changes = {}
    for raw_key, value in updates.items():
        key = aliases.get(raw_key, raw_key)
        if key not in known:
            raise ConfigError(f"unknown config key: {path}.{raw_key}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            changes[key] = _apply_updates(current, value, f"{path}.{raw_key}")
        else:
            changes[key] = _coerce(value, known[key].type, f"{path}.{raw_key}")
    try:
        return replace(obj, **changes)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config section {path}: {exc}") from exc


def _apply_tree(cfg: TrainConfig, tree: dict) -> TrainConfig:
    changes = {}
    for key, value in tree.items():
        if key == "profile":
            continue  # handled by the caller
        if key == "seed":
            changes["seed"] = _coerce(value, int, "seed")
        elif key == "deterministic":
            changes["deterministic"] = _coerce(value, bool, "deterministic")
        elif key in _SECTIONS:
            changes[key] = _apply_updates(getattr(cfg, key), value, key)
        else:
            raise ConfigError(f"unknown config key: {key}")
    return replace(cfg, **changes)


def _validate(cfg: TrainConfig) -> TrainConfig:
    if cfg.distill.method not in METHODS:
        raise ConfigError(
            f"config key distill.method: {cfg.distill.method!r} is not one of {METHODS}"
        )
    d = cfg.distill
    if d.epochs < 1 or d.batch_size < 2:
        raise ConfigError("distill.epochs must be >= 1 and distill.batch_size >= 2")
    if d.base_lr <= 0:
        raise ConfigError(f"distill.base_lr must be positive, got {d.base_lr}")
    if d.method == "sqsp":
        if cfg.loss.alpha == 0.5 and d.batch_size % 2:
            raise ConfigError(
                f"distill.batch_size must be even when loss.alpha is 0.5, got {d.batch_size}"
            )
        n_syn = int(cfg.loss.alpha * d.batch_size)
        n_real = d.batch_size - n_syn
        if 0 < cfg.loss.alpha < 1 and (n_syn < 2 or n_real < 2):
            raise ConfigError(
                f"distill.batch_size {d.batch_size} with loss.alpha {cfg.loss.alpha} "
                f"leaves a sub-batch below 2 samples ({n_syn} synthetic, {n_real} real)"
            )
    # construct the derived specs so their own validation runs now, not mid-train
    cfg.data.shapes_spec()
    cfg.gan.generator_spec()
    if cfg.data.dataset != "shapes":
        raise ConfigError(f"config key data.dataset: unknown dataset {cfg.data.dataset!r}")
    if cfg.gan.generator_spec().resolution != cfg.data.image_size:
        raise ConfigError(
            f"gan.block_channels gives resolution {cfg.gan.generator_spec().resolution}, "
            f"but data.image_size is {cfg.data.image_size}"
        )
    return cfg


def _mentions(tree: dict, *path) -> bool:
    node = tree
    for key in path:
        if not isinstance(node, dict) or key not in node:
            return False
        node = node[key]
    return True


def parse_config_tree(tree: dict, profile: str = None, overrides: dict = None) -> TrainConfig:
    """Resolve defaults <- profile <- tree <- overrides into a validated TrainConfig."""
    tree = tree or {}
    profile = profile or tree.get("profile")
    cfg = TrainConfig()
    sources = []
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile: {profile!r} (have {sorted(PROFILES)})")
        sources.append(PROFILES[profile])
        cfg = _apply_tree(cfg, PROFILES[profile])
    sources.append(tree)
    cfg = _apply_tree(cfg, tree)
    if overrides:
        sources.append(overrides)
        cfg = _apply_tree(cfg, overrides)
    # augmented views come out at the data resolution unless told otherwise
    if not any(_mentions(s, "data", "augment", "output_size") for s in sources):
        if cfg.data.augment.output_size != cfg.data.image_size:
            aug = replace(cfg.data.augment, output_size=cfg.data.image_size)
            cfg = replace(cfg, data=replace(cfg.data, augment=aug))
    return _validate(cfg)


def parse_config(path=None, profile: str = None, overrides: dict = None) -> TrainConfig:
    """Load and resolve a config file (TOML or JSON by extension).

    path may be None to resolve a profile (or pure defaults) without a file.
    """
    tree = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            if path.suffix == ".toml":
                tree = tomllib.loads(path.read_text())
            elif path.suffix == ".json":
                tree = json.loads(path.read_text())
            else:
                raise ConfigError(f"config file must end in .toml or .json: {path}")
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"config root must be a table, got {type(tree).__name__}")
    return parse_config_tree(tree, profile=profile, overrides=overrides)


def resolved_config(cfg: TrainConfig) -> dict:
    """Fully resolved snapshot; parse_config_tree on it reproduces cfg."""
    tree = {
        "seed": cfg.seed,
        "deterministic": cfg.deterministic,
        "data": asdict(cfg.data),
        "gan": asdict(cfg.gan),
        "distill": asdict(cfg.distill),
        "loss": asdict(cfg.loss),
        "eval": asdict(cfg.eval),
    }
    loss = tree["loss"]
    loss["lambda"] = loss.pop("lam")
    tree["distill"]["block_set"] = (
        list(cfg.distill.block_set) if cfg.distill.block_set is not None else "all"
    )
    for key in ("block_channels",):
        tree["gan"][key] = list(tree["gan"][key])
    tree["distill"]["widths"] = list(tree["distill"]["widths"])
    aug = tree["data"]["augment"]
    for key in ("crop_scale", "color_jitter", "blur_sigma"):
        aug[key] = list(aug[key])
    return tree
