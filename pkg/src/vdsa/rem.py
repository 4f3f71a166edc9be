"""Radio environment map: DTT power along the road and delayed platoon announcements."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vdsa.radio import PropagationModel, db_to_lin, dtt_to_vdsa_capture, lin_to_db
from vdsa.scenario import BandPlan, ConfigError


@dataclass(frozen=True)
class DttTransmitter:
    band: int  # index into BandPlan.dtt_centers_mhz
    position_m: float
    lateral_offset_m: float
    eirp_dbm: float = 60.0


def dtt_power_from_transmitters(
    x, y, band: int, transmitters, plan: BandPlan, prop: PropagationModel
) -> np.ndarray:
    """Median received DTT power (dBm) at points ``(x, y)`` in one DTT channel."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    total = np.zeros(x.shape)
    freq = plan.dtt_centers_mhz[band]
    for tx in transmitters:
        if tx.band != band:
            continue
        d = np.hypot(x - tx.position_m, y - tx.lateral_offset_m)
        total = total + db_to_lin(tx.eirp_dbm + prop.gain_db(d, freq))
    return lin_to_db(total)


@dataclass
class DttPowerMap:
    """Piecewise-linear (in dB) DTT power profile along the road, one per DTT channel."""

    knots: dict[int, tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        for band, (pos, pw) in self.knots.items():
            pos = np.asarray(pos, dtype=float)
            if pos.ndim != 1 or pos.size == 0 or np.any(np.diff(pos) < 0):
                raise ConfigError(f"DTT profile for band {band} must have sorted knots")
            self.knots[band] = (pos, np.asarray(pw, dtype=float))

    @classmethod
    def from_transmitters(
        cls,
        transmitters,
        plan: BandPlan,
        road_length_m: float,
        prop: PropagationModel,
        spacing_m: float = 50.0,
    ) -> "DttPowerMap":
        pos = np.arange(0.0, road_length_m + spacing_m / 2, spacing_m)
        pos[-1] = min(pos[-1], road_length_m)
        if pos[-1] < road_length_m:
            pos = np.append(pos, road_length_m)
        knots = {}
        for band in range(len(plan.dtt_centers_mhz)):
            pw = dtt_power_from_transmitters(pos, 0.0, band, transmitters, plan, prop)
            knots[band] = (pos.copy(), pw)
        return cls(knots)

    @classmethod
    def load(cls, path: str | Path, plan: BandPlan) -> "DttPowerMap":
        """Read ``band_center_mhz position_m power_dbm`` rows."""
        rows = np.loadtxt(path, ndmin=2)
        if rows.shape[1] != 3:
            raise ConfigError(f"{path}: expected 3 columns per row")
        knots = {}
        for band, center in enumerate(plan.dtt_centers_mhz):
            sel = rows[np.isclose(rows[:, 0], center)]
            if sel.size:
                knots[band] = (sel[:, 1], sel[:, 2])
        unknown = set(np.unique(rows[:, 0])) - set(plan.dtt_centers_mhz)
        if unknown:
            raise ConfigError(f"{path}: rows for unknown DTT channels {sorted(unknown)}")
        return cls(knots)

    def save(self, path: str | Path, plan: BandPlan) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for band, (pos, pw) in sorted(self.knots.items()):
                for p, v in zip(pos, pw):
                    fh.write(f"{plan.dtt_centers_mhz[band]:g} {p:.6f} {v:.6f}\n")

    def power_dbm(self, band: int, position_m) -> np.ndarray:
        """Interpolated power; positions outside the profile clamp to the end knots."""
        if band not in self.knots:
            return np.full(np.shape(position_m), -np.inf)
        pos, pw = self.knots[band]
        return np.interp(position_m, pos, pw)


@dataclass(frozen=True)
class PlatoonAnnouncement:
    platoon_id: int
    leader_position_m: float
    member_count: int
    chosen_band: int
    timestamp_s: float
    lane: int = 0


class Rem:
    """Context database read by every platoon leader.

    DTT queries are exact and immediate. Announcements only become visible
    ``info_latency_s`` after their timestamp.
    """

    def __init__(self, power_map: DttPowerMap, plan: BandPlan, info_latency_s: float = 1.0):
        if info_latency_s < 0:
            raise ConfigError("info_latency_s must be non-negative")
        self.power_map = power_map
        self.plan = plan
        self.info_latency_s = info_latency_s
        self._capture = dtt_to_vdsa_capture(plan)
        self._log: dict[int, list[PlatoonAnnouncement]] = {}

    def query_dtt_power(self, position_m, vdsa_band: int) -> np.ndarray:
        """Expected DTT interference (dBm) captured by a receiver tuned to ``vdsa_band``."""
        return lin_to_db(self.query_dtt_power_mw(position_m, vdsa_band))

    def query_dtt_power_mw(self, position_m, vdsa_band: int) -> np.ndarray:
        total = np.zeros(np.shape(position_m))
        for band in range(len(self.plan.dtt_centers_mhz)):
            frac = self._capture[band, vdsa_band]
            if frac > 0:
                total = total + frac * db_to_lin(self.power_map.power_dbm(band, position_m))
        return total

    def announce(self, announcement: PlatoonAnnouncement, now_s: float) -> None:
        if announcement.timestamp_s > now_s + 1e-9:
            raise ValueError("announcement timestamp lies in the future")
        self._log.setdefault(announcement.platoon_id, []).append(announcement)

    def visible(self, now_s: float) -> dict[int, PlatoonAnnouncement]:
        cutoff = now_s - self.info_latency_s + 1e-9
        out = {}
        for pid, entries in self._log.items():
            best = None
            for a in entries:
                if a.timestamp_s <= cutoff and (best is None or a.timestamp_s >= best.timestamp_s):
                    best = a
            if best is not None:
                out[pid] = best
        return out

    def snapshot_other_platoons(self, requester: int, now_s: float) -> list[PlatoonAnnouncement]:
        """Latest visible announcement of every platoon except ``requester``."""
        return [a for pid, a in sorted(self.visible(now_s).items()) if pid != requester]

    def prune(self, now_s: float) -> None:
        """Drop announcements already superseded by a visible newer one."""
        cutoff = now_s - self.info_latency_s + 1e-9
        for pid, entries in self._log.items():
            vis = [a for a in entries if a.timestamp_s <= cutoff]
            if len(vis) > 1:
                newest = max(vis, key=lambda a: a.timestamp_s)
                self._log[pid] = [a for a in entries if a.timestamp_s > cutoff or a is newest]
