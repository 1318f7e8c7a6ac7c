"""Experiment configuration: flat sectioned key=value files.

The grammar is INI as understood by :mod:`configparser`: one ``[section]``
per config group, ``key = value`` lines, ``#`` comments. Unknown sections
or keys are rejected, every value is range-checked, and serialization is
canonical so the config hash is stable across platforms.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields

from .losses import DistillConfig, FNC2Config, PlasticityConfig
from .samix import MixConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    generator: str = "blobs"
    classes: int = 10
    input_dim: int = 16
    samples_per_class: int = 200
    test_per_class: int = 50
    aux_per_class: int = 40
    center_scale: float = 3.0
    spread: float = 1.0

    def validate(self):
        if self.generator != "blobs":
            raise ConfigError(f"dataset.generator: unknown generator "
                              f"{self.generator!r}")
        for key in ("classes", "input_dim", "samples_per_class",
                    "test_per_class", "aux_per_class"):
            if getattr(self, key) < 1:
                raise ConfigError(f"dataset.{key}: must be >= 1")
        if self.spread <= 0 or self.center_scale <= 0:
            raise ConfigError("dataset.spread/center_scale: must be > 0")


@dataclass
class TaskSetupConfig:
    count: int = 5
    classes_per_task: int = 2
    scenario: str = "class_il"

    def validate(self, total_classes: int):
        if self.scenario not in ("class_il", "task_il"):
            raise ConfigError(f"tasks.scenario: unknown scenario "
                              f"{self.scenario!r}")
        if self.count < 1 or self.classes_per_task < 1:
            raise ConfigError("tasks.count/classes_per_task: must be >= 1")
        if self.count * self.classes_per_task != total_classes:
            raise ConfigError(
                f"tasks: count*classes_per_task = "
                f"{self.count * self.classes_per_task} but dataset.classes = "
                f"{total_classes}")


@dataclass
class ModelSectionConfig:
    hidden_dim: int = 64
    feature_dim: int = 64
    proj_hidden_dim: int = 64
    embed_dim: int = 16
    use_predictor_for_distill: bool = True

    def validate(self, num_classes: int):
        for key in ("hidden_dim", "feature_dim", "proj_hidden_dim",
                    "embed_dim"):
            if getattr(self, key) < 1:
                raise ConfigError(f"model.{key}: must be >= 1")
        if self.embed_dim < num_classes:
            raise ConfigError(f"model.embed_dim: must be >= dataset.classes "
                              f"({num_classes}) for the prototype frame")


@dataclass
class TrainSectionConfig:
    epochs_first: int = 60
    epochs_rest: int = 30
    batch_size: int = 32
    lr: float = 0.05
    warmup_epochs: int = 5
    seed: int = 0

    def validate(self):
        if self.epochs_first < 1 or self.epochs_rest < 1:
            raise ConfigError("train.epochs_first/epochs_rest: must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("train.batch_size: must be >= 2")
        if self.lr <= 0:
            raise ConfigError("train.lr: must be > 0")
        if self.warmup_epochs < 0:
            raise ConfigError("train.warmup_epochs: must be >= 0")


@dataclass
class AugmentConfig:
    noise_sigma: float = 0.1
    mask_rate: float = 0.05

    def validate(self):
        if self.noise_sigma < 0:
            raise ConfigError("augment.noise_sigma: must be >= 0")
        if not 0 <= self.mask_rate < 1:
            raise ConfigError("augment.mask_rate: must be in [0, 1)")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    tasks: TaskSetupConfig = field(default_factory=TaskSetupConfig)
    buffer_capacity: int = 200
    method_mode: str = "ta_nccl"   # ta_nccl (DR plasticity) | fc_nccl (FNC2)
    mix: MixConfig = field(default_factory=MixConfig)
    fnc2: FNC2Config = field(default_factory=FNC2Config)
    distill: DistillConfig = field(default_factory=DistillConfig)
    upsilon: float = 5.0
    iota: float = 5.0
    model: ModelSectionConfig = field(default_factory=ModelSectionConfig)
    train: TrainSectionConfig = field(default_factory=TrainSectionConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    calib_bins: int = 15

    def validate(self):
        self.dataset.validate()
        self.tasks.validate(self.dataset.classes)
        if self.buffer_capacity < 0:
            raise ConfigError("buffer.capacity: must be >= 0")
        if self.method_mode not in ("ta_nccl", "fc_nccl"):
            raise ConfigError(f"method.mode: unknown mode "
                              f"{self.method_mode!r}")
        if self.upsilon < 0 or self.iota < 0:
            raise ConfigError("loss.upsilon/iota: must be >= 0")
        self.model.validate(self.dataset.classes)
        self.train.validate()
        self.augment.validate()
        if self.calib_bins < 1:
            raise ConfigError("calib.bins: must be >= 1")

    def plasticity(self) -> PlasticityConfig:
        mode = "dr" if self.method_mode == "ta_nccl" else "fnc2"
        return PlasticityConfig(mode=mode, upsilon=self.upsilon,
                                iota=self.iota)


# section -> {key: (attribute path, type)}
_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "dataset": {
        "generator": ("dataset.generator", str),
        "classes": ("dataset.classes", int),
        "input_dim": ("dataset.input_dim", int),
        "samples_per_class": ("dataset.samples_per_class", int),
        "test_per_class": ("dataset.test_per_class", int),
        "aux_per_class": ("dataset.aux_per_class", int),
        "center_scale": ("dataset.center_scale", float),
        "spread": ("dataset.spread", float),
    },
    "tasks": {
        "count": ("tasks.count", int),
        "classes_per_task": ("tasks.classes_per_task", int),
        "scenario": ("tasks.scenario", str),
    },
    "buffer": {
        "capacity": ("buffer_capacity", int),
    },
    "method": {
        "mode": ("method_mode", str),
    },
    "mix": {
        "enabled": ("mix.enabled", bool),
        "alpha": ("mix.alpha", float),
        "interp": ("mix.interp_mode", str),
        "current_only": ("mix.current_only", bool),
    },
    "loss": {
        "tau": ("fnc2.tau", float),
        "gamma": ("fnc2.gamma", float),
        "upsilon": ("upsilon", float),
        "iota": ("iota", float),
        "kappa_past": ("distill.kappa_past", float),
        "kappa_current": ("distill.kappa_current", float),
        "zeta_past": ("distill.zeta_past", float),
        "zeta_current": ("distill.zeta_current", float),
        "e0": ("distill.warmup_epochs", int),
    },
    "model": {
        "hidden_dim": ("model.hidden_dim", int),
        "feature_dim": ("model.feature_dim", int),
        "proj_hidden_dim": ("model.proj_hidden_dim", int),
        "embed_dim": ("model.embed_dim", int),
        "use_predictor_for_distill": ("model.use_predictor_for_distill", bool),
    },
    "train": {
        "epochs_first": ("train.epochs_first", int),
        "epochs_rest": ("train.epochs_rest", int),
        "batch_size": ("train.batch_size", int),
        "lr": ("train.lr", float),
        "warmup_epochs": ("train.warmup_epochs", int),
        "seed": ("train.seed", int),
    },
    "augment": {
        "noise_sigma": ("augment.noise_sigma", float),
        "mask_rate": ("augment.mask_rate", float),
    },
    "calib": {
        "bins": ("calib_bins", int),
    },
}


def _set_path(cfg: ExperimentConfig, path: str, value):
    parts = path.split(".")
    target = cfg
    for part in parts[:-1]:
        target = getattr(target, part)
    setattr(target, parts[-1], value)


def _get_path(cfg: ExperimentConfig, path: str):
    target = cfg
    for part in path.split("."):
        target = getattr(target, part)
    return target


def _coerce(section: str, key: str, raw: str, typ: type):
    raw = raw.strip()
    try:
        if typ is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as "
                          f"{typ.__name__}") from None


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = ExperimentConfig()
    # DistillConfig validates warmup <= total on construction; the real
    # total is set per task at train time, so relax it while parsing.
    cfg.distill.total_epochs = 10**9
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            path, typ = _SCHEMA[section][key]
            _set_path(cfg, path, _coerce(section, key, raw, typ))
    try:
        cfg.mix.__post_init__()
        cfg.fnc2.__post_init__()
        cfg.distill.__post_init__()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: schema order, repr-stable values."""
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (path, typ) in keys.items():
            value = _get_path(cfg, path)
            if typ is bool:
                value = "true" if value else "false"
            elif typ is float:
                value = repr(float(value))
            out.write(f"{key} = {value}\n")
        out.write("\n")
    return out.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = serialize_config(cfg)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
