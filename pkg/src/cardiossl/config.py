"""Flat key-value configuration with sections mirroring the module layout.

A config file is INI-style; every field of every section can also be
overridden on the command line via ``--set section.key=value``.  The
fully resolved configuration is persisted next to each run's outputs so
any table cell can be reproduced from its manifest alone.

Sections and their dataclasses:

    [cohort]      phantom.CohortConfig  (per-subject parameter ranges)
    [views]       phantom.ViewConfig    (plane geometry of sampled images)
    [pretext]     PretextConfig         (box size/spacing, pretraining views)
    [net]         unet.NetConfig
    [train]       training.TrainConfig
    [experiment]  ExperimentConfig      (grid axes and stage budgets)
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError
from .phantom import CohortConfig, ViewConfig
from .training import MODES, TrainConfig
from .unet import NetConfig


@dataclass(frozen=True)
class PretextConfig:
    # Desk-scale boxes for 64 px images; acquisition-scale values are
    # side=11, spacing=30 on ~208 px images.
    side: int = 7
    spacing: int = 12
    views: tuple[str, ...] = ("sa",)


@dataclass(frozen=True)
class ExperimentConfig:
    modes: tuple[str, ...] = ("scratch", "ssl_decoder", "ssl_all", "ssl_multitask")
    budgets: tuple[int, ...] = (1, 2, 5, 10, 20)  # full-scale: 1, 5, 10, 50, 100
    seeds: tuple[int, ...] = (0, 1, 2)
    pretrain_subjects: int = 200
    annotated_subjects: int = 40
    test_subjects: int = 20
    split_seed: int = 1234
    view: str = "sa"
    pretrain_iterations: int = 2000
    finetune_iterations: int = 1000

    def __post_init__(self):
        bad = set(self.modes) - set(MODES)
        if bad:
            raise ValueError(f"unknown transfer modes {sorted(bad)}")
        train_pool = self.annotated_subjects - self.test_subjects
        if train_pool < max(self.budgets, default=0):
            raise ValueError(f"largest budget {max(self.budgets)} exceeds the "
                             f"annotated training pool of {train_pool} subjects")


SECTIONS = {
    "cohort": CohortConfig,
    "views": ViewConfig,
    "pretext": PretextConfig,
    "net": NetConfig,
    "train": TrainConfig,
    "experiment": ExperimentConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    cohort: CohortConfig = field(default_factory=CohortConfig)
    views: ViewConfig = field(default_factory=ViewConfig)
    pretext: PretextConfig = field(default_factory=PretextConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)


def _parse_value(text: str, ftype):
    origin = typing.get_origin(ftype)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        args = [a for a in typing.get_args(ftype) if a is not type(None)]
        return _parse_value(text, args[0])
    if origin is tuple:
        args = typing.get_args(ftype)
        elem = args[0]
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_parse_value(p, elem) for p in parts)
        if len(parts) != len(args):
            raise FormatError(f"expected {len(args)} comma-separated values, got {text!r}")
        return tuple(_parse_value(p, a) for p, a in zip(parts, args))
    if ftype is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise FormatError(f"cannot parse boolean from {text!r}")
    try:
        if ftype is int:
            return int(text)
        if ftype is float:
            return float(text)
    except ValueError as exc:
        raise FormatError(f"cannot parse {text!r} as {ftype.__name__}") from exc
    if ftype is str:
        return text
    raise FormatError(f"unsupported config field type {ftype!r}")


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)
            if not dataclasses.is_dataclass(hints[f.name])}


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Build a PipelineConfig from defaults, an optional INI file and
    ``section.key=value`` override strings (applied last)."""
    values: dict[str, dict[str, object]] = {name: {} for name in SECTIONS}

    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as f:
                parser.read_file(f)
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise FormatError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SECTIONS:
                raise FormatError(f"unknown config section [{section}]")
            types = _field_types(SECTIONS[section])
            for key, text in parser.items(section):
                if key not in types:
                    raise FormatError(f"unknown key {key!r} in section [{section}]")
                values[section][key] = _parse_value(text, types[key])

    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise FormatError(f"override must look like section.key=value, got {item!r}")
        target, text = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in SECTIONS:
            raise FormatError(f"unknown config section {section!r} in override {item!r}")
        types = _field_types(SECTIONS[section])
        if key not in types:
            raise FormatError(f"unknown key {key!r} in section [{section}]")
        values[section][key] = _parse_value(text, types[key])

    try:
        cohort = CohortConfig(views=ViewConfig(**values["views"]), **values["cohort"])
        return PipelineConfig(
            cohort=cohort,
            views=cohort.views,
            pretext=PretextConfig(**values["pretext"]),
            net=NetConfig(**values["net"]),
            train=TrainConfig(**values["train"]),
            experiment=ExperimentConfig(**values["experiment"]),
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid configuration: {exc}") from exc


def resolved_dict(cfg: PipelineConfig) -> dict:
    """The fully resolved configuration as a JSON-serializable dict."""
    return dataclasses.asdict(cfg)


def save_resolved(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(resolved_dict(cfg), indent=1, sort_keys=True))
