"""SINR quantization and the sorted-tuple state index.

A state is the multiset of quantized per-band SINR levels. Sorted tuples are
ranked with the combinatorial number system after the usual stars-and-bars
shift ``b_i = a_i + i`` that turns a nondecreasing tuple over ``R`` levels into
a strictly increasing one over ``R + K - 1`` values.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Iterable, Sequence

import numpy as np

from vdsa.scenario import ConfigError


@dataclass(frozen=True)
class QuantizerConfig:
    levels: int = 8
    thresholds_db: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0)

    def __post_init__(self):
        object.__setattr__(self, "thresholds_db", tuple(float(t) for t in self.thresholds_db))
        if self.levels < 2:
            raise ConfigError("quantizer needs at least 2 levels")
        if len(self.thresholds_db) != self.levels - 1:
            raise ConfigError("quantizer needs levels - 1 thresholds")
        if any(b <= a for a, b in zip(self.thresholds_db, self.thresholds_db[1:])):
            raise ConfigError("quantizer thresholds must be strictly ascending")


def quantize_sinr(sinr_db, config: QuantizerConfig = QuantizerConfig()):
    """Number of thresholds strictly below ``sinr_db`` (``-inf`` maps to 0)."""
    levels = np.searchsorted(np.asarray(config.thresholds_db), sinr_db, side="left")
    return int(levels) if np.ndim(levels) == 0 else levels


def state_count(levels: int, bands: int) -> int:
    """Number of sorted level tuples: ``C(R + K - 1, K)``."""
    return comb(levels + bands - 1, bands)


def encode_state(levels: Sequence[int] | Iterable[int], num_levels: int) -> int:
    """Rank of the sorted tuple of ``levels`` in ``[0, state_count)``."""
    a = sorted(int(x) for x in levels)
    if any(x < 0 or x >= num_levels for x in a):
        raise ValueError(f"levels must lie in [0, {num_levels})")
    return sum(comb(x + i, i + 1) for i, x in enumerate(a))


def decode_state(index: int, num_levels: int, bands: int) -> tuple[int, ...]:
    """Inverse of :func:`encode_state`."""
    total = state_count(num_levels, bands)
    if not 0 <= index < total:
        raise ValueError(f"state index {index} outside [0, {total})")
    out = []
    rem = index
    for i in range(bands, 0, -1):
        b = i - 1
        while comb(b + 1, i) <= rem:
            b += 1
        rem -= comb(b, i)
        out.append(b - (i - 1))
    return tuple(reversed(out))


@lru_cache(maxsize=None)
def _rank_table(num_levels: int, bands: int) -> dict[tuple[int, ...], int]:
    return {decode_state(s, num_levels, bands): s for s in range(state_count(num_levels, bands))}


@dataclass(frozen=True)
class PlatoonStateTuple:
    levels: tuple[int, ...]
    index: int

    @classmethod
    def from_sinr_db(cls, band_sinr_db: Sequence[float], quantizer: QuantizerConfig) -> "PlatoonStateTuple":
        lv = tuple(sorted(int(q) for q in np.atleast_1d(quantize_sinr(np.asarray(band_sinr_db), quantizer))))
        return cls(lv, _rank_table(quantizer.levels, len(lv))[lv])
