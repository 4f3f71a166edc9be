"""Simulation configuration: one nested structure covering every tunable, YAML in and out."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from vdsa.baseline import BaselineConfig
from vdsa.learning.qtable import LearningParams
from vdsa.learning.state import QuantizerConfig
from vdsa.radio import DttProtectionParams, DttReceiver, PropagationModel, TxWeightModel
from vdsa.rem import DttTransmitter
from vdsa.scenario import BandPlan, ConfigError, ScenarioConfig


@dataclass(frozen=True)
class EngineParams:
    decode_threshold_db: float = 8.0
    reward_mode: str = "mean"  # or "sum"
    # "rank": action a picks the band with the a-th lowest estimated SINR
    action_mapping: str = "rank"  # or "band"
    # concurrent transmitters assumed when splitting the DTT interference budget:
    # one on-air vehicle per platoon, every vehicle, or a single transmitter
    power_split: str = "per_platoon"  # or "all_vehicles", "single"
    shadowing: bool = True
    dtt_knot_spacing_m: float = 50.0

    def __post_init__(self):
        if self.reward_mode not in ("mean", "sum"):
            raise ConfigError(f"unknown reward_mode {self.reward_mode!r}")
        if self.action_mapping not in ("rank", "band"):
            raise ConfigError(f"unknown action_mapping {self.action_mapping!r}")
        if self.power_split not in ("per_platoon", "all_vehicles", "single"):
            raise ConfigError(f"unknown power_split {self.power_split!r}")
        if self.dtt_knot_spacing_m <= 0:
            raise ConfigError("dtt_knot_spacing_m must be positive")


def _default_transmitters() -> tuple[DttTransmitter, ...]:
    return (
        DttTransmitter(band=0, position_m=-1000.0, lateral_offset_m=800.0, eirp_dbm=60.0),
        DttTransmitter(band=1, position_m=6000.0, lateral_offset_m=-800.0, eirp_dbm=60.0),
    )


def _default_receivers() -> tuple[DttReceiver, ...]:
    rx = []
    for i, x in enumerate((250.0, 1250.0, 2250.0, 3250.0, 4250.0)):
        side = 1.0 if i % 2 == 0 else -1.0
        rx.append(DttReceiver(position_m=x, lateral_offset_m=side * (250.0 + 50.0 * i), band=0))
    for i, x in enumerate((750.0, 1750.0, 2750.0, 3750.0, 4750.0)):
        side = -1.0 if i % 2 == 0 else 1.0
        rx.append(DttReceiver(position_m=x, lateral_offset_m=side * (450.0 - 50.0 * i), band=1))
    return tuple(rx)


@dataclass(frozen=True)
class SimulationConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    bands: BandPlan = field(default_factory=BandPlan)
    v2v_propagation: PropagationModel = field(default_factory=PropagationModel)
    v2dtt_propagation: PropagationModel = field(
        default_factory=lambda: PropagationModel(exponent=3.5, shadowing_sigma_db=8.0)
    )
    broadcast_propagation: PropagationModel = field(
        default_factory=lambda: PropagationModel(exponent=3.0, shadowing_sigma_db=0.0)
    )
    dtt_transmitters: tuple[DttTransmitter, ...] = field(default_factory=_default_transmitters)
    dtt_profile_file: str | None = None
    protection: DttProtectionParams = field(default_factory=lambda: DttProtectionParams(receivers=_default_receivers()))
    acir: tuple[tuple[float, ...], ...] | None = None
    tx_weights: TxWeightModel = field(default_factory=TxWeightModel)
    rem_latency_s: float = 1.0
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    learning: LearningParams = field(default_factory=LearningParams)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    engine: EngineParams = field(default_factory=EngineParams)

    def __post_init__(self):
        K = self.bands.num_bands
        for tx in self.dtt_transmitters:
            if not 0 <= tx.band < len(self.bands.dtt_centers_mhz):
                raise ConfigError(f"DTT transmitter references unknown DTT channel {tx.band}")
        for r in self.protection.receivers:
            if not 0 <= r.band < len(self.bands.dtt_centers_mhz):
                raise ConfigError(f"DTT receiver references unknown DTT channel {r.band}")
        if self.acir is not None:
            if len(self.acir) != K or any(len(row) != K for row in self.acir):
                raise ConfigError("acir override must be K_VDSA x K_VDSA")
        if self.rem_latency_s < 0:
            raise ConfigError("rem_latency_s must be non-negative")

    def replace(self, **changes) -> "SimulationConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return to_plain(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        return from_plain(cls, data, "config")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


PRESETS = ("three_platoons_six", "four_platoons_ten", "custom")


def preset(name: str) -> SimulationConfig:
    """Defaults for the two evaluated scenarios.

    The three-platoon layout keeps platoons far apart so DTT dominates; the
    four-platoon layout packs them side by side across the lanes.
    """
    if name in ("three_platoons_six", "custom"):
        return SimulationConfig()
    if name == "four_platoons_ten":
        return SimulationConfig(
            scenario=ScenarioConfig(num_platoons=4, vehicles_per_platoon=10, platoon_gap_m=20.0),
        )
    raise ConfigError(f"unknown scenario preset {name!r}; choose from {', '.join(PRESETS)}")


# ---------------------------------------------------------------------------
# plain-data conversion


def to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, float) and obj.is_integer():
        return obj
    return obj


def _strip_optional(tp):
    args = typing.get_args(tp)
    if type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return rest[0] if len(rest) == 1 else typing.Union[tuple(rest)]
    return tp


def _coerce(tp, value, where: str):
    if value is None:
        if type(None) in typing.get_args(tp):
            return None
        raise ConfigError(f"{where}: value required")
    tp = _strip_optional(tp)
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if isinstance(value, tp):
            return value
        return from_plain(tp, value, where)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        item_tp = args[0]
        return tuple(_coerce(item_tp, v, f"{where}[{i}]") for i, v in enumerate(value))
    if origin is typing.Union or origin is types.UnionType:
        # float | tuple[float, ...] style fields
        for alt in typing.get_args(tp):
            try:
                return _coerce(alt, value, where)
            except ConfigError:
                continue
        raise ConfigError(f"{where}: {value!r} does not match {tp}")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def from_plain(cls, data: Any, where: str = "config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def merge_overrides(base: dict, overrides: dict, where: str = "overrides") -> dict:
    """Deep-merge ``overrides`` into a copy of ``base``, refusing unknown keys."""
    out = dict(base)
    for k, v in overrides.items():
        if k not in out:
            raise ConfigError(f"{where}: unknown key {k}")
        if isinstance(v, dict) and isinstance(out[k], dict):
            out[k] = merge_overrides(out[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def dump_yaml(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)


def load_yaml(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data
