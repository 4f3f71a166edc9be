"""Conventional distributed band selection with hysteresis.

Each platoon estimates its minimum member SINR in every band from the
(delayed) context database and moves only when another band beats the
current one by more than a fixed margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vdsa.scenario import ConfigError


@dataclass(frozen=True)
class BaselineConfig:
    switch_margin_db: float = 1.0
    evaluation_order: str = "platoon_id"

    def __post_init__(self):
        if self.switch_margin_db < 0:
            raise ConfigError("switch_margin_db must be non-negative")
        if self.evaluation_order not in ("platoon_id", "reverse_platoon_id"):
            raise ConfigError(f"unknown evaluation_order {self.evaluation_order!r}")

    def order(self, num_platoons: int) -> list[int]:
        ids = list(range(num_platoons))
        return ids[::-1] if self.evaluation_order == "reverse_platoon_id" else ids


def select_band_baseline(band_sinr_db, current_band: int, config: BaselineConfig = BaselineConfig()) -> int:
    """Pick a band from per-band platoon-minimum SINR estimates (dB)."""
    est = np.asarray(band_sinr_db, dtype=float)
    best = int(np.argmax(est))
    if est[best] > est[current_band] + config.switch_margin_db:
        return best
    return int(current_band)
