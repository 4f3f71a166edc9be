"""Road geometry, platoons, band plan and mobility."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

LOG = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for invalid experiment or scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    road_length_m: float = 5000.0
    lanes: int = 3
    num_platoons: int = 3
    vehicles_per_platoon: int = 6
    inter_car_spacing_m: float = 5.0
    vehicle_length_m: float = 4.0
    lane_width_m: float = 4.0
    # scalar or one entry per platoon
    platoon_speed_mps: float | tuple[float, ...] = 30.0
    # bumper-to-bumper gap between the last car of one platoon and the next leader
    platoon_gap_m: float = 400.0
    cacc_period_s: float = 0.2
    cacc_message_bytes: int = 300
    vdsa_period_s: float = 1.0
    run_duration_s: float = 140.0
    wrap: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if isinstance(self.platoon_speed_mps, (list, tuple)):
            object.__setattr__(self, "platoon_speed_mps", tuple(float(s) for s in self.platoon_speed_mps))
        self.validate()

    def validate(self) -> None:
        if not self.road_length_m > 0:
            raise ConfigError("road_length_m must be positive")
        if self.lanes < 1:
            raise ConfigError("lanes must be >= 1")
        if self.num_platoons < 1:
            raise ConfigError("num_platoons must be >= 1")
        if self.vehicles_per_platoon < 2:
            raise ConfigError("vehicles_per_platoon must be >= 2")
        if self.inter_car_spacing_m < 0 or self.vehicle_length_m < 0:
            raise ConfigError("spacing and vehicle length must be non-negative")
        if not self.cacc_period_s > 0:
            raise ConfigError("cacc_period_s must be positive")
        if self.vdsa_period_s < self.cacc_period_s:
            raise ConfigError("vdsa_period_s must be >= cacc_period_s")
        ratio = self.vdsa_period_s / self.cacc_period_s
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("vdsa_period_s must be an integer multiple of cacc_period_s")
        epochs = self.run_duration_s / self.vdsa_period_s
        if self.run_duration_s <= 0 or abs(epochs - round(epochs)) > 1e-9:
            raise ConfigError("run_duration_s must be a positive multiple of vdsa_period_s")
        if isinstance(self.platoon_speed_mps, tuple) and len(self.platoon_speed_mps) != self.num_platoons:
            raise ConfigError("platoon_speed_mps needs one entry per platoon")
        if self.platoon_gap_m < 0:
            raise ConfigError("platoon_gap_m must be non-negative")
        if self.convoy_length_m > self.road_length_m:
            raise ConfigError(
                f"convoy length {self.convoy_length_m:.1f} m exceeds road length {self.road_length_m:.1f} m"
            )

    @property
    def car_pitch_m(self) -> float:
        return self.inter_car_spacing_m + self.vehicle_length_m

    @property
    def platoon_span_m(self) -> float:
        """Leader-to-last distance."""
        return (self.vehicles_per_platoon - 1) * self.car_pitch_m

    @property
    def convoy_length_m(self) -> float:
        return self.num_platoons * (self.platoon_span_m + self.vehicle_length_m) + (
            self.num_platoons - 1
        ) * self.platoon_gap_m

    @property
    def ticks_per_epoch(self) -> int:
        return int(round(self.vdsa_period_s / self.cacc_period_s))

    @property
    def epochs(self) -> int:
        return int(round(self.run_duration_s / self.vdsa_period_s))

    @property
    def total_vehicles(self) -> int:
        return self.num_platoons * self.vehicles_per_platoon

    def speeds(self) -> np.ndarray:
        if isinstance(self.platoon_speed_mps, tuple):
            return np.asarray(self.platoon_speed_mps, dtype=float)
        return np.full(self.num_platoons, float(self.platoon_speed_mps))


@dataclass(frozen=True)
class BandPlan:
    vdsa_centers_mhz: tuple[float, ...] = (498.0, 506.0, 514.0)
    vdsa_bandwidth_mhz: float = 10.0
    dtt_centers_mhz: tuple[float, ...] = (490.0, 522.0)
    dtt_bandwidth_mhz: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "vdsa_centers_mhz", tuple(float(c) for c in self.vdsa_centers_mhz))
        object.__setattr__(self, "dtt_centers_mhz", tuple(float(c) for c in self.dtt_centers_mhz))
        if not self.vdsa_centers_mhz:
            raise ConfigError("at least one VDSA band is required")
        if any(b <= a for a, b in zip(self.vdsa_centers_mhz, self.vdsa_centers_mhz[1:])):
            raise ConfigError("vdsa_centers_mhz must be strictly increasing")
        if self.vdsa_bandwidth_mhz <= 0 or self.dtt_bandwidth_mhz <= 0:
            raise ConfigError("bandwidths must be positive")

    @property
    def num_bands(self) -> int:
        return len(self.vdsa_centers_mhz)


@dataclass(frozen=True)
class Vehicle:
    platoon_id: int
    index_in_platoon: int
    position_m: float
    lane: int

    @property
    def is_leader(self) -> bool:
        return self.index_in_platoon == 0


@dataclass(frozen=True)
class Platoon:
    id: int
    members: tuple[Vehicle, ...]
    current_band: int
    agent_kind: str = "q_learning"

    @property
    def leader(self) -> Vehicle:
        return self.members[0]


@dataclass(frozen=True)
class World:
    """Snapshot of all vehicles at one instant.

    Vehicles are stored platoon-major (platoon 0 leader first), so vehicle
    ``i`` belongs to platoon ``i // n`` at index ``i % n``.
    """

    config: ScenarioConfig
    plan: BandPlan
    positions: np.ndarray
    lanes: np.ndarray
    bands: np.ndarray
    time_s: float = 0.0
    agent_kinds: tuple[str, ...] = ()

    def __post_init__(self):
        # callers must not mutate a published snapshot
        for arr in (self.positions, self.lanes, self.bands):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.config.vehicles_per_platoon

    @property
    def platoon_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.config.num_platoons), self.n)

    @property
    def index_in_platoon(self) -> np.ndarray:
        return np.tile(np.arange(self.n), self.config.num_platoons)

    @property
    def lateral_m(self) -> np.ndarray:
        return self.lanes * self.config.lane_width_m

    def vehicle_speeds(self) -> np.ndarray:
        return np.repeat(self.config.speeds(), self.n)

    @property
    def vehicles(self) -> list[Vehicle]:
        pid, idx = self.platoon_of, self.index_in_platoon
        return [
            Vehicle(int(pid[i]), int(idx[i]), float(self.positions[i]), int(self.lanes[i]))
            for i in range(len(self.positions))
        ]

    @property
    def platoons(self) -> list[Platoon]:
        vs = self.vehicles
        kinds = self.agent_kinds or ("q_learning",) * self.config.num_platoons
        return [
            Platoon(m, tuple(vs[m * self.n:(m + 1) * self.n]), int(self.bands[m]), kinds[m])
            for m in range(self.config.num_platoons)
        ]

    def platoon_slice(self, m: int) -> slice:
        return slice(m * self.n, (m + 1) * self.n)

    def with_bands(self, bands: Sequence[int]) -> "World":
        bands = np.asarray(bands, dtype=np.int64)
        if bands.shape != (self.config.num_platoons,):
            raise ValueError("need one band per platoon")
        if np.any((bands < 0) | (bands >= self.plan.num_bands)):
            raise ValueError("band index out of range")
        return replace(self, bands=bands.copy())


def build_scenario(
    config: ScenarioConfig,
    plan: BandPlan,
    rng: np.random.Generator | None = None,
    initial_bands: Sequence[int] | None = None,
    agent_kinds: Sequence[str] | None = None,
) -> World:
    """Place every platoon on the road.

    The first leader is dropped uniformly on the road (seeded by ``rng`` or
    ``config.rng_seed``); following platoons queue up behind it separated by
    ``platoon_gap_m`` and cycle through the lanes.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    n, M = config.vehicles_per_platoon, config.num_platoons
    head = float(rng.uniform(0.0, config.road_length_m))
    pitch = config.car_pitch_m
    stride = config.platoon_span_m + config.vehicle_length_m + config.platoon_gap_m
    offsets = np.arange(n) * pitch
    positions = np.concatenate([head - m * stride - offsets for m in range(M)])
    if config.wrap:
        positions = np.mod(positions, config.road_length_m)
    else:
        # shift the convoy so it sits fully on the road
        positions = positions - min(0.0, positions.min())
        positions = np.clip(positions, 0.0, config.road_length_m)
    lanes = np.repeat(np.arange(M) % config.lanes, n)
    if initial_bands is None:
        initial_bands = np.arange(M) % plan.num_bands
    world = World(
        config=config,
        plan=plan,
        positions=positions,
        lanes=lanes.astype(np.int64),
        bands=np.asarray(initial_bands, dtype=np.int64).copy(),
        agent_kinds=tuple(agent_kinds) if agent_kinds else (),
    )
    return world.with_bands(world.bands)


def advance_mobility(world: World, dt_s: float) -> World:
    if not dt_s > 0:
        raise ValueError("dt_s must be positive")
    cfg = world.config
    positions = world.positions + world.vehicle_speeds() * dt_s
    if cfg.wrap:
        positions = np.mod(positions, cfg.road_length_m)
    else:
        positions = np.clip(positions, 0.0, cfg.road_length_m)
    return replace(world, positions=positions, time_s=world.time_s + dt_s)


def ring_gap(a: np.ndarray, b: np.ndarray, road_length_m: float, wrap: bool = True) -> np.ndarray:
    """Longitudinal separation, measured around the ring when wrapping."""
    d = np.abs(np.asarray(a) - np.asarray(b))
    if wrap:
        d = np.minimum(d, road_length_m - d)
    return d


def pair_distances(
    xa: np.ndarray, ya: np.ndarray, xb: np.ndarray, yb: np.ndarray, road_length_m: float, wrap: bool = True
) -> np.ndarray:
    """Euclidean distance matrix between point sets ``a`` (rows) and ``b`` (columns)."""
    dx = ring_gap(np.asarray(xa)[:, None], np.asarray(xb)[None, :], road_length_m, wrap)
    dy = np.asarray(ya)[:, None] - np.asarray(yb)[None, :]
    return np.hypot(dx, dy)
