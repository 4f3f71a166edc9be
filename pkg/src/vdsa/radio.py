"""Channel gains, adjacent-channel leakage, DTT-protecting power control and SINR.

All externally visible powers are dBm and gains dB; the arithmetic inside
runs in linear units (mW and plain ratios).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from vdsa.scenario import BandPlan, ConfigError

LOG = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

# Power control backs off by this much so that aggregate interference at a
# binding receiver cannot exceed the budget through float rounding alone.
PROTECTION_GUARD_DB = 1e-9


def db_to_lin(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def lin_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float))


def friis_loss_db(distance_m, freq_mhz):
    """Free-space path loss ``20 log10(4 pi d f / c)``."""
    d = np.asarray(distance_m, dtype=float)
    return 20.0 * np.log10(4.0 * math.pi * d * np.asarray(freq_mhz, dtype=float) * 1e6 / SPEED_OF_LIGHT)


@dataclass(frozen=True)
class PropagationModel:
    """Log-distance path loss with log-normal shadowing.

    ``pl0_db`` of ``None`` means free-space loss at ``ref_distance_m`` for the
    carrier in use.
    """

    pl0_db: float | None = None
    ref_distance_m: float = 1.0
    exponent: float = 2.7
    shadowing_sigma_db: float = 3.0
    shadowing_correlation_m: float = 25.0
    noise_variance_dbm: float = -95.0

    def __post_init__(self):
        if self.ref_distance_m <= 0:
            raise ConfigError("ref_distance_m must be positive")
        if self.exponent <= 0:
            raise ConfigError("path-loss exponent must be positive")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("shadowing_sigma_db must be non-negative")
        if self.shadowing_correlation_m <= 0:
            raise ConfigError("shadowing_correlation_m must be positive")

    def reference_loss_db(self, freq_mhz) -> np.ndarray:
        if self.pl0_db is not None:
            return np.broadcast_to(np.float64(self.pl0_db), np.shape(freq_mhz))
        return friis_loss_db(self.ref_distance_m, freq_mhz)

    def path_loss_db(self, distance_m, freq_mhz) -> np.ndarray:
        d = np.maximum(np.asarray(distance_m, dtype=float), self.ref_distance_m)
        return self.reference_loss_db(freq_mhz) + 10.0 * self.exponent * np.log10(d / self.ref_distance_m)

    def gain_db(self, distance_m, freq_mhz, shadow_db=0.0) -> np.ndarray:
        return -self.path_loss_db(distance_m, freq_mhz) + shadow_db

    @property
    def noise_mw(self) -> float:
        return float(db_to_lin(self.noise_variance_dbm))


def path_gain(distance_m, freq_mhz, prop: PropagationModel, shadow_db=0.0) -> np.ndarray:
    """Linear channel gain between two points ``distance_m`` apart.

    Distances below the reference distance are clamped to it. The gain only
    depends on the separation, so it is symmetric in its endpoints.
    """
    return db_to_lin(prop.gain_db(distance_m, freq_mhz, shadow_db))


def spectral_overlap_fraction(c_tx: float, w_tx: float, c_rx: float, w_rx: float) -> float:
    """Share of a flat ``w_tx``-wide emission that lands in a flat ``w_rx`` receive mask."""
    lo = max(c_tx - w_tx / 2.0, c_rx - w_rx / 2.0)
    hi = min(c_tx + w_tx / 2.0, c_rx + w_rx / 2.0)
    return max(0.0, hi - lo) / w_tx


@dataclass(frozen=True)
class AcirMatrix:
    factors: np.ndarray

    def __post_init__(self):
        f = np.array(self.factors, dtype=float)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ConfigError("ACIR matrix must be square")
        if not np.all(np.diag(f) == 1.0):
            raise ConfigError("ACIR diagonal must be exactly 1")
        if np.any(f < 0) or np.any(f > 1):
            raise ConfigError("ACIR entries must lie in [0, 1]")
        if not np.array_equal(f, f.T):
            raise ConfigError("ACIR matrix must be symmetric")
        f.setflags(write=False)
        object.__setattr__(self, "factors", f)

    @classmethod
    def from_plan(cls, plan: BandPlan) -> "AcirMatrix":
        c, w = plan.vdsa_centers_mhz, plan.vdsa_bandwidth_mhz
        f = np.array([[spectral_overlap_fraction(c[l], w, c[k], w) for k in range(len(c))] for l in range(len(c))])
        return cls(f)

    def factor(self, l: int, k: int) -> float:
        return float(self.factors[l, k])


def acir_factor(l: int, k: int, acir: AcirMatrix) -> float:
    return acir.factor(l, k)


def vdsa_to_dtt_leakage(plan: BandPlan) -> np.ndarray:
    """(K_VDSA, n_dtt) fraction of a VDSA emission falling into each DTT channel."""
    return np.array(
        [
            [spectral_overlap_fraction(c, plan.vdsa_bandwidth_mhz, d, plan.dtt_bandwidth_mhz) for d in plan.dtt_centers_mhz]
            for c in plan.vdsa_centers_mhz
        ]
    ).reshape(plan.num_bands, len(plan.dtt_centers_mhz))


def dtt_to_vdsa_capture(plan: BandPlan) -> np.ndarray:
    """(n_dtt, K_VDSA) fraction of a DTT signal captured by each VDSA receiver."""
    return np.array(
        [
            [spectral_overlap_fraction(d, plan.dtt_bandwidth_mhz, c, plan.vdsa_bandwidth_mhz) for c in plan.vdsa_centers_mhz]
            for d in plan.dtt_centers_mhz
        ]
    ).reshape(len(plan.dtt_centers_mhz), plan.num_bands)


@dataclass(frozen=True)
class DttReceiver:
    position_m: float
    lateral_offset_m: float
    band: int  # index into BandPlan.dtt_centers_mhz


@dataclass(frozen=True)
class DttProtectionParams:
    receivers: tuple[DttReceiver, ...] = ()
    gamma_pu_dbm: float = -80.0
    sir_min_db: float = 39.5
    device_max_power_dbm: float = 20.0
    power_floor_dbm: float = -10.0

    def __post_init__(self):
        object.__setattr__(
            self, "receivers", tuple(r if isinstance(r, DttReceiver) else DttReceiver(**r) for r in self.receivers)
        )
        if self.sir_min_db <= 0:
            raise ConfigError("sir_min_db must be positive")
        if self.power_floor_dbm > self.device_max_power_dbm:
            raise ConfigError("power floor above device cap")


@dataclass
class PowerAllocation:
    p_max_dbm: np.ndarray  # (vehicles, bands)
    floor_bound: np.ndarray  # where the floor overrode the protection limit

    @property
    def p_max_mw(self) -> np.ndarray:
        return db_to_lin(self.p_max_dbm)


def protection_limits(
    loss_db: np.ndarray,
    budget_dbm: np.ndarray,
    leakage: np.ndarray,
    params: DttProtectionParams,
) -> PowerAllocation:
    """Per-band power limits from median path losses toward the receivers.

    ``loss_db`` is (..., K, receivers), ``budget_dbm`` the per-receiver
    interference budget of one transmitter and ``leakage`` (K, receivers)
    linear leakage, zero where a receiver is not protected.
    """
    with np.errstate(divide="ignore"):
        leak_db = 10.0 * np.log10(leakage)
    limit = budget_dbm - leak_db + loss_db - PROTECTION_GUARD_DB
    p_max = np.minimum(params.device_max_power_dbm, limit.min(axis=-1, initial=np.inf))
    floor_bound = p_max < params.power_floor_dbm
    return PowerAllocation(np.maximum(p_max, params.power_floor_dbm), floor_bound)


def protection_budget_dbm(rx_dtt_power_dbm, params: DttProtectionParams, interferer_count: int = 1) -> np.ndarray:
    return np.asarray(rx_dtt_power_dbm, dtype=float) - params.sir_min_db - 10.0 * math.log10(max(interferer_count, 1))


def protected_leakage(leakage: np.ndarray, rx_dtt_power_dbm, params: DttProtectionParams) -> np.ndarray:
    protected = np.asarray(rx_dtt_power_dbm) >= params.gamma_pu_dbm
    return np.where(protected[None, :], np.asarray(leakage, dtype=float), 0.0)


def compute_power_control(
    tx_x: np.ndarray,
    tx_y: np.ndarray,
    rx_x: np.ndarray,
    rx_y: np.ndarray,
    rx_dtt_power_dbm: np.ndarray,
    leakage: np.ndarray,
    freqs_mhz: np.ndarray,
    prop: PropagationModel,
    params: DttProtectionParams,
    interferer_count: int = 1,
) -> PowerAllocation:
    """Maximum transmit power per (vehicle, band) that keeps DTT receivers protected.

    Each transmitter gets ``1 / interferer_count`` of the interference budget
    ``P_DTT - SIR_min`` at every detectable receiver, using median (shadow-free)
    propagation. ``leakage`` is (bands, receivers) linear leakage into the
    receiver's channel. Receivers below ``gamma_pu_dbm`` are not protected.
    """
    tx_x = np.atleast_1d(np.asarray(tx_x, dtype=float))
    tx_y = np.broadcast_to(np.asarray(tx_y, dtype=float), tx_x.shape)
    rx_x = np.atleast_1d(np.asarray(rx_x, dtype=float))
    rx_y = np.broadcast_to(np.asarray(rx_y, dtype=float), rx_x.shape)
    leak = protected_leakage(np.asarray(leakage, dtype=float).reshape(len(freqs_mhz), rx_x.size), rx_dtt_power_dbm, params)
    dist = np.hypot(tx_x[:, None] - rx_x[None, :], tx_y[:, None] - rx_y[None, :])
    loss = prop.path_loss_db(dist[:, None, :], np.asarray(freqs_mhz, dtype=float)[None, :, None])
    alloc = protection_limits(loss, protection_budget_dbm(rx_dtt_power_dbm, params, interferer_count), leak, params)
    if np.any(alloc.floor_bound):
        LOG.debug("power floor binding for %d (vehicle, band) pairs", int(alloc.floor_bound.sum()))
    return alloc


@dataclass(frozen=True)
class TxWeightModel:
    """Probability that a foreign vehicle is on air while a packet is received."""

    mode: str = "duty_cycle"  # or "worst_case"
    phy_rate_mbps: float = 6.0
    phy_overhead_us: float = 40.0

    def __post_init__(self):
        if self.mode not in ("duty_cycle", "worst_case"):
            raise ConfigError(f"unknown tx weight mode {self.mode!r}")
        if self.phy_rate_mbps <= 0:
            raise ConfigError("phy_rate_mbps must be positive")

    def airtime_s(self, message_bytes: int) -> float:
        return message_bytes * 8 / (self.phy_rate_mbps * 1e6) + self.phy_overhead_us * 1e-6

    def weight(self, vehicles_per_platoon: int, message_bytes: int, cacc_period_s: float) -> float:
        if self.mode == "worst_case":
            return 1.0
        w = vehicles_per_platoon * self.airtime_s(message_bytes) / cacc_period_s
        return float(min(1.0, max(0.0, w)))


def other_platoon_interference(
    k: int,
    rx_platoon: np.ndarray,
    tx_platoon: np.ndarray,
    tx_band: np.ndarray,
    tx_power_mw: np.ndarray,
    gain: np.ndarray,
    acir: AcirMatrix,
    weights=1.0,
) -> np.ndarray:
    """Expected interference in band ``k`` at each receiver from foreign platoons.

    ``gain`` is the (tx, rx) linear gain matrix in band ``k``; ``tx_power_mw``
    holds each transmitter's maximum power in its own band. Transmitters in the
    receiver's own platoon contribute nothing.
    """
    rx_platoon = np.atleast_1d(rx_platoon)
    tx_platoon = np.atleast_1d(tx_platoon)
    per_tx = np.asarray(tx_power_mw, dtype=float) * acir.factors[np.asarray(tx_band), k]
    terms = np.asarray(weights, dtype=float) * per_tx[:, None] * np.asarray(gain, dtype=float)
    foreign = tx_platoon[:, None] != rx_platoon[None, :]
    return np.where(foreign, terms, 0.0).sum(axis=0)


def link_sinr(p_tx_mw, gain, noise_mw, p_dtt_mw, p_other_mw):
    """Linear SINR of one link: ``P h / (noise + P_DTT + P_other)``."""
    return np.asarray(p_tx_mw) * np.asarray(gain) / (noise_mw + np.asarray(p_dtt_mw) + np.asarray(p_other_mw))


def vehicle_sinr(leader_link_sinr, preceding_link_sinr):
    """A member's SINR is the weaker of its leader and predecessor links."""
    return np.minimum(leader_link_sinr, preceding_link_sinr)


def platoon_min_sinr(member_sinrs: Sequence[float] | np.ndarray) -> float:
    """Minimum over the non-leader members' SINR values."""
    arr = np.asarray(member_sinrs, dtype=float)
    if arr.size == 0:
        raise ValueError("platoon needs at least one non-leader member")
    return float(arr.min())


def dtt_sir_db(p_dtt_dbm: float, interference_mw) -> float:
    """SIR at a DTT receiver, ``inf`` when nothing leaks into its channel."""
    total = float(np.sum(interference_mw))
    if total <= 0.0:
        return math.inf
    return float(p_dtt_dbm - 10.0 * math.log10(total))


def dtt_sir_at_receiver(
    p_dtt_dbm: float,
    tx_power_mw: np.ndarray,
    leakage: np.ndarray,
    gain: np.ndarray,
) -> float:
    """Aggregate SIR at one receiver from every transmitting vehicle.

    ``leakage`` and ``gain`` are per vehicle toward this receiver (gain with
    shadowing already applied).
    """
    return dtt_sir_db(p_dtt_dbm, np.asarray(tx_power_mw) * np.asarray(leakage) * np.asarray(gain))


@dataclass
class ShadowField:
    """Spatially correlated log-normal shadowing for a fixed set of links.

    Each link follows a Gauss-Markov process in travelled distance with
    correlation ``exp(-dx / d_corr)``. Symmetric fields keep ``s[i, j] ==
    s[j, i]`` so reciprocal links fade together.
    """

    sigma_db: float
    correlation_m: float
    values: np.ndarray
    symmetric: bool = False

    @classmethod
    def draw(cls, shape, sigma_db: float, correlation_m: float, rng: np.random.Generator, symmetric=False):
        return cls(sigma_db, correlation_m, cls._noise(shape, sigma_db, rng, symmetric), symmetric)

    @staticmethod
    def _noise(shape, sigma_db, rng, symmetric):
        z = rng.standard_normal(shape)
        if symmetric:
            z = (z + np.swapaxes(z, -1, -2)) / math.sqrt(2.0)
            n = z.shape[-1]
            z[..., np.arange(n), np.arange(n)] = 0.0
        return sigma_db * z

    def advance(self, moved_m, rng: np.random.Generator) -> np.ndarray:
        """Update for a displacement ``moved_m`` (scalar or broadcastable)."""
        if self.sigma_db == 0.0:
            return self.values
        rho = np.exp(-np.asarray(moved_m, dtype=float) / self.correlation_m)
        fresh = self._noise(self.values.shape, self.sigma_db, rng, self.symmetric)
        self.values = rho * self.values + np.sqrt(1.0 - rho * rho) * fresh
        return self.values

    def trajectory(self, moved_m, steps: int, rng: np.random.Generator) -> np.ndarray:
        """Values at the start of each of ``steps`` equal moves, then advance past them."""
        out = np.empty((steps,) + self.values.shape)
        if self.sigma_db == 0.0:
            out[:] = self.values
            return out
        rho = np.exp(-np.asarray(moved_m, dtype=float) / self.correlation_m)
        scale = np.sqrt(1.0 - rho * rho)
        fresh = self._noise((steps,) + self.values.shape, self.sigma_db, rng, self.symmetric)
        v = self.values
        for j in range(steps):
            out[j] = v
            v = rho * v + scale * fresh[j]
        self.values = v
        return out
