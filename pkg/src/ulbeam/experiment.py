"""Experiment configuration: one YAML document describing scenario, data
sizes, networks, loss weights, training, schemes and an optional sweep.

Every section is validated against its dataclass: unknown keys and values
of the wrong type are rejected with ConfigError.
"""
from __future__ import annotations

import copy
import dataclasses
import os
import typing
from dataclasses import asdict, dataclass, field

import yaml

from .channels import ScenarioConfig
from .errors import ConfigError
from .nets.baselines import base_spec, check_schemes
from .nets.training import LossWeights, TrainConfig

OUTPUT_ROOT_ENV = "ULBEAM_OUTPUT_ROOT"

# sweep axis -> scenario field
SWEEP_AXES = {"users": "k", "antennas": "n_t", "pilots": "pilot_length", "power": "power", "cells": "n_cells"}
# NetSpec fields an experiment may set; the rest follow from the scenario
NET_FIELDS = ("csi_width", "csi_layers", "power_width", "power_layers", "conv_filters", "kernel",
              "dropout", "fc_width", "per_user", "power_input", "seed", "recovery")


@dataclass
class DataSizes:
    train: int = 5000
    val: int = 500
    test: int = 1000
    workers: int = 1

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or self.workers < 1:
            raise ConfigError("sample counts must be nonnegative and workers at least 1")


@dataclass
class Sweep:
    """``values`` are scenario values; the power axis is given in dB
    (``P = 10^(dB/10)`` in the scenario's power unit)."""

    axis: str
    values: list

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; expected one of {sorted(SWEEP_AXES)}"
                              " (Doppler is not modeled)")
        if not isinstance(self.values, list) or not self.values:
            raise ConfigError("sweep needs a nonempty list of values")
        for v in self.values:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"sweep value {v!r} is not a number")
            if self.axis != "power" and (int(v) != v or v < 1):
                raise ConfigError(f"sweep values on axis {self.axis!r} must be positive integers")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    data: DataSizes = field(default_factory=DataSizes)
    net: dict = field(default_factory=dict)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))
    schemes: list = field(default_factory=lambda: ["wmmse", "proposed", "learned_ch_zf", "learned_ch_bf"])
    sweep: typing.Optional[Sweep] = None
    output: str = "runs/experiment"

    def __post_init__(self):
        unknown = set(self.net) - set(NET_FIELDS)
        if unknown:
            raise ConfigError(f"unknown net fields: {sorted(unknown)}")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        check_schemes(self.schemes, self.scenario.kind == "multicell")
        if any(s == "lmmse_then_wmmse" for s in self.schemes) and self.scenario.pilot_length is None \
                and (self.sweep is None or self.sweep.axis != "pilots"):
            raise ConfigError("lmmse_then_wmmse needs a pilot stage (scenario.pilot_length)")
        # build the network once so bad architecture settings fail early
        net_spec(self)

    # --- serialization -------------------------------------------------------
    def to_dict(self):
        out = {
            "scenario": self.scenario.to_dict(),
            "data": asdict(self.data),
            "net": copy.deepcopy(self.net),
            "loss": asdict(self.loss),
            "train": asdict(self.train),
            "schemes": list(self.schemes),
            "output": self.output,
        }
        if self.sweep is not None:
            out["sweep"] = asdict(self.sweep)
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown top-level fields: {sorted(unknown)}")
        kw = {}
        if "scenario" in d:
            kw["scenario"] = _build(ScenarioConfig, d["scenario"], "scenario")
        if "data" in d:
            kw["data"] = _build(DataSizes, d["data"], "data")
        if "loss" in d:
            kw["loss"] = _build(LossWeights, d["loss"], "loss")
        if "train" in d:
            kw["train"] = _build(TrainConfig, d["train"], "train")
        if d.get("sweep") is not None:
            kw["sweep"] = _build(Sweep, d["sweep"], "sweep")
        if "net" in d:
            if not isinstance(d["net"], dict):
                raise ConfigError("net must be a mapping")
            kw["net"] = dict(d["net"])
        if "schemes" in d:
            if not isinstance(d["schemes"], list):
                raise ConfigError("schemes must be a list")
            kw["schemes"] = list(d["schemes"])
        if "output" in d:
            if not isinstance(d["output"], str):
                raise ConfigError("output must be a path string")
            kw["output"] = d["output"]
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        return cls.from_dict(data or {})

    # --- derived -------------------------------------------------------------
    def output_dir(self):
        """``output`` resolved against the output-root environment variable."""
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(self.output):
            return os.path.join(root, self.output)
        return self.output

    def at_sweep_value(self, value):
        """Copy of this config with the sweep axis set to ``value``."""
        if self.sweep is None:
            raise ConfigError("config has no sweep section")
        scen = self.scenario.to_dict()
        name = SWEEP_AXES[self.sweep.axis]
        scen[name] = 10.0 ** (value / 10.0) if self.sweep.axis == "power" else int(value)
        d = self.to_dict()
        d["scenario"] = scen
        d.pop("sweep")
        d["output"] = os.path.join(self.output, f"{self.sweep.axis}={value}")
        return ExperimentConfig.from_dict(d)


def _type_ok(value, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        return any(_type_ok(value, a) for a in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    if tp in (tuple, list) or origin in (tuple, list):
        return isinstance(value, (list, tuple))
    return True


def _build(cls, data, section):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown fields in {section}: {sorted(unknown)}")
    for key, value in data.items():
        if not _type_ok(value, hints[key]):
            raise ConfigError(f"{section}.{key} = {value!r} has the wrong type")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section}: {exc}") from exc


def net_spec(exp):
    """The proposed model's NetSpec for this experiment (validates ``net``)."""
    try:
        return base_spec(exp.scenario, **exp.net)
    except TypeError as exc:
        raise ConfigError(f"invalid net settings: {exc}") from exc


def default_config(kind="small_tdd"):
    scen = ScenarioConfig(kind=kind, n_cells=3 if kind == "multicell" else 1)
    schemes = ["wmmse", "proposed", "learned_ch_slnr", "learned_ch_bf"] if kind == "multicell" else None
    if schemes is None:
        return ExperimentConfig(scenario=scen)
    return ExperimentConfig(scenario=scen, schemes=schemes)

