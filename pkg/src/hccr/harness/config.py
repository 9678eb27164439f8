"""Experiment configuration: an INI file with one section per pipeline stage.

Example::

    [data]
    source = synthetic
    num_classes = 20

    [features]
    modality = offline
    normalization = ldpi

    [train]
    batch_size = 50
    learning_rate = 0.0002
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..adaptation import AdaptConfig
from ..convnet import Architecture, TrainConfig, full_architecture, toy_architecture
from ..shapenorm import AspectMode, GrayMode


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DataError(RuntimeError):
    """Missing, empty or malformed input data."""


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # synthetic | casia
    grammar_seed: int = 0
    num_classes: int = 20
    train_writers: int = 30
    train_instances: int = 5
    test_writers: int = 10
    test_instances: int = 20
    test_style: str = "shifted"  # shifted | default
    # casia: globs of GNT (offline) or POT (online) files; writer id = leading digits of the name
    train_glob: str = ""
    test_glob: str = ""


@dataclass(frozen=True)
class FeatureConfig:
    modality: str = "offline"  # offline | online
    gray_mode: str = "nonlinear"
    normalization: str = "ldpi"
    mode: str = "cooperated"  # cooperated | based
    input: str = "directmap"  # directmap | image
    aspect: str = "adaptive"
    size: int = 32


@dataclass(frozen=True)
class NetworkConfig:
    preset: str = "toy"  # toy | full
    conv_widths: tuple = ()
    pool_after: tuple = ()
    fc_widths: tuple = ()
    dropout: tuple = ()
    no_dropout: bool = False


@dataclass(frozen=True)
class EvalConfig:
    members: int = 1  # models trained / ensembled
    top_n: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=lambda: TOY_TRAIN)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "run"
    data_dir: str = ""  # synthetic data location; default <output_dir>/data
    seed: int = 0
    precision: int = 32
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        f, d = self.features, self.data
        if d.source not in ("synthetic", "casia"):
            raise ConfigError(f"data.source must be synthetic or casia, not {d.source!r}")
        if d.source == "casia" and not d.train_glob:
            raise ConfigError("data.train_glob is required for casia data")
        if d.test_style not in ("shifted", "default"):
            raise ConfigError("data.test_style must be shifted or default")
        if f.modality not in ("offline", "online"):
            raise ConfigError(f"features.modality must be offline or online, not {f.modality!r}")
        if f.normalization not in ("linear", "bimoment", "p2dbmn", "ldpi"):
            raise ConfigError(f"unknown normalization {f.normalization!r}")
        if f.modality == "online" and f.normalization == "ldpi":
            raise ConfigError("LDPI is not applicable to online trajectories")
        if f.mode not in ("cooperated", "based"):
            raise ConfigError(f"features.mode must be cooperated or based, not {f.mode!r}")
        if f.input not in ("directmap", "image"):
            raise ConfigError(f"features.input must be directmap or image, not {f.input!r}")
        if f.modality == "online" and (f.mode == "based" or f.input == "image"):
            raise ConfigError("online features are always normalization-cooperated directMaps")
        try:
            GrayMode(f.gray_mode)
            AspectMode(f.aspect)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if f.size < 4 or f.size > 256:
            raise ConfigError("features.size must lie in [4, 256]")
        for name in ("num_classes", "train_writers", "train_instances", "test_writers",
                     "test_instances"):
            if getattr(d, name) < 1:
                raise ConfigError(f"data.{name} must be positive")
        if d.source == "synthetic" and not 2 <= d.num_classes <= 20:
            raise ConfigError("the synthetic grammar has 2 to 20 classes")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.jobs < 1 or self.eval.members < 1 or not 1 <= self.eval.top_n <= 10:
            raise ConfigError("jobs and eval.members must be positive; eval.top_n in [1, 10]")
        self.architecture()
        return self

    @property
    def in_channels(self) -> int:
        return 1 if self.features.input == "image" else 8

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.output_dir) / "data"

    def architecture(self, num_classes: int | None = None) -> Architecture:
        n = num_classes or self.data.num_classes
        net = self.network
        try:
            if net.preset == "full":
                base = full_architecture(n)
            elif net.preset == "toy":
                base = toy_architecture(n)
            else:
                raise ConfigError(f"unknown network preset {net.preset!r}")
            kw = {"in_channels": self.in_channels, "size": self.features.size}
            for name in ("conv_widths", "pool_after", "fc_widths", "dropout"):
                if getattr(net, name):
                    kw[name] = getattr(net, name)
            if net.no_dropout:
                layers = len(kw.get("conv_widths", base.conv_widths)) + len(
                    kw.get("fc_widths", base.fc_widths))
                kw["dropout"] = (0.0,) * layers
            return replace(base, **kw)
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(f"invalid architecture: {err}") from None


TOY_TRAIN = TrainConfig(batch_size=50, learning_rate=2e-4, max_epochs=30, eval_train=True)

_SECTIONS = {"data": DataConfig, "features": FeatureConfig, "network": NetworkConfig,
             "train": TrainConfig, "adapt": AdaptConfig, "eval": EvalConfig}


def _convert(cls, name, raw: str):
    target = {f.name: f for f in fields(cls)}[name]
    default = target.default if target.default is not target.default_factory else None
    kind = type(default)
    if name == "layer":
        return None if raw.strip().lower() in ("", "none") else int(raw)
    if kind is bool:
        low = raw.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("1", "true", "yes", "on")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple:
        items = [s for s in raw.replace(",", " ").split() if s]
        return tuple(float(s) if name == "dropout" else int(s) for s in items)
    return raw.strip()


def load_config(path=None, text: str | None = None, **overrides) -> ExperimentConfig:
    """Parse an INI file (or text); keyword overrides replace top-level fields."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file {path} not found")
            parser.read(path)
        if text is not None:
            parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config: {err}") from None
    parts = {}
    for section in parser.sections():
        if section == "run":
            continue
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown config section [{section}]")
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                kw[key] = _convert(cls, key, raw)
            except ValueError as err:
                raise ConfigError(f"{section}.{key}: {err}") from None
        base = TOY_TRAIN if cls is TrainConfig else cls()
        try:
            parts[section] = replace(base, **kw)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"[{section}]: {err}") from None
    top = {}
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in ("output_dir", "data_dir", "seed", "precision", "jobs"):
                raise ConfigError(f"unknown key run.{key}")
            try:
                top[key] = raw.strip() if key.endswith("_dir") else int(raw)
            except ValueError as err:
                raise ConfigError(f"run.{key}: {err}") from None
    top.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig(**parts, **top)
    return cfg.validate()
