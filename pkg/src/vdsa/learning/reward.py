"""Truncated-Shannon platoon reward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

THROUGHPUT_CAP_MBPS = 100.0


@dataclass(frozen=True)
class RewardSample:
    value: float
    per_vehicle: tuple[float, ...]
    packets_counted: int


def shannon_mbps(sinr_lin, bandwidth_mhz: float) -> np.ndarray:
    return bandwidth_mhz * np.log2(1.0 + np.asarray(sinr_lin, dtype=float))


def vehicle_throughput(total_mbps, packets, cap: float = THROUGHPUT_CAP_MBPS, mode: str = "mean") -> np.ndarray:
    """Per-vehicle ``T_v`` from summed per-packet Shannon rates.

    ``mean`` averages over the vehicle's packets; ``sum`` keeps the raw sum.
    Vehicles without packets get 0.
    """
    total = np.asarray(total_mbps, dtype=float)
    packets = np.asarray(packets)
    if mode == "mean":
        rate = np.divide(total, packets, out=np.zeros_like(total), where=packets > 0)
    elif mode == "sum":
        rate = np.where(packets > 0, total, 0.0)
    else:
        raise ValueError(f"unknown reward mode {mode!r}")
    return np.minimum(cap, rate)


def compute_reward(
    per_packet_sinrs: Sequence[Sequence[float]],
    bandwidth_mhz: float,
    cap: float = THROUGHPUT_CAP_MBPS,
    mode: str = "mean",
) -> RewardSample:
    """Platoon reward from the linear SINR of every packet each member received.

    ``per_packet_sinrs`` holds one list per non-leader member.
    """
    if len(per_packet_sinrs) == 0:
        raise ValueError("need at least one receiving vehicle")
    totals = [float(shannon_mbps(p, bandwidth_mhz).sum()) if len(p) else 0.0 for p in per_packet_sinrs]
    counts = [len(p) for p in per_packet_sinrs]
    tv = vehicle_throughput(totals, counts, cap, mode)
    return RewardSample(float(tv.mean()), tuple(float(t) for t in tv), int(sum(counts)))
