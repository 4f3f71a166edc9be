"""Q-table storage, the Q-update, averaging fusion and on-disk formats."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from vdsa.learning.state import decode_state, state_count
from vdsa.scenario import ConfigError

MAGIC = b"VDSAQTBL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIQ")


@dataclass(frozen=True)
class LearningParams:
    alpha: float = 0.1
    gamma: float = 0.7
    epsilon: float = 0.01
    tau_low_samples: int = 1000
    tau_high_samples: int = 100_000
    tau_max: float = 10.0
    update_rule: str = "standard"  # or "paper_literal"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if not 0 <= self.tau_low_samples < self.tau_high_samples:
            raise ConfigError("tau_low_samples must be below tau_high_samples")
        if self.tau_max < 1.0:
            raise ConfigError("tau_max must be >= 1")
        if self.update_rule not in ("standard", "paper_literal"):
            raise ConfigError(f"unknown update_rule {self.update_rule!r}")


@dataclass
class QTable:
    values: np.ndarray  # (S, K) float64
    visit_counts: np.ndarray  # (S,) int64
    levels: int

    @classmethod
    def zeros(cls, levels: int, bands: int) -> "QTable":
        S = state_count(levels, bands)
        return cls(np.zeros((S, bands)), np.zeros(S, dtype=np.int64), levels)

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def num_actions(self) -> int:
        return self.values.shape[1]

    @property
    def total_samples(self) -> int:
        return int(self.visit_counts.sum())

    def copy(self) -> "QTable":
        return QTable(self.values.copy(), self.visit_counts.copy(), self.levels)

    def same_shape(self, other: "QTable") -> bool:
        return self.values.shape == other.values.shape and self.levels == other.levels

    def __eq__(self, other):
        if not isinstance(other, QTable):
            return NotImplemented
        return (
            self.same_shape(other)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.visit_counts, other.visit_counts)
        )

    def to_bytes(self) -> bytes:
        S, K = self.values.shape
        head = _HEADER.pack(MAGIC, FORMAT_VERSION, self.levels, K, S)
        return head + self.values.astype("<f8").tobytes() + self.visit_counts.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "QTable":
        if len(raw) < _HEADER.size:
            raise ValueError("truncated Q-table header")
        magic, version, levels, K, S = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValueError("not a Q-table file")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported Q-table version {version}")
        if S != state_count(levels, K):
            raise ValueError("state count inconsistent with levels and bands")
        off = _HEADER.size
        need = off + S * K * 8 + S * 8
        if len(raw) != need:
            raise ValueError(f"Q-table payload is {len(raw)} bytes, expected {need}")
        values = np.frombuffer(raw, dtype="<f8", count=S * K, offset=off).reshape(S, K).astype(np.float64)
        counts = np.frombuffer(raw, dtype="<i8", count=S, offset=off + S * K * 8).astype(np.int64)
        return cls(values, counts, levels)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "QTable":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, path: str | Path) -> None:
        K = self.num_actions
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "levels", "visits"] + [f"q_{a}" for a in range(K)])
            for s in range(self.num_states):
                lv = " ".join(map(str, decode_state(s, self.levels, K)))
                w.writerow([s, lv, int(self.visit_counts[s])] + [repr(float(v)) for v in self.values[s]])


def q_update(table: QTable, s_t: int, a_t: int, r_t: float, s_next: int, params: LearningParams) -> QTable:
    """One tabular Q-learning step, applied in place; returns ``table``.

    ``standard`` adds the discounted best next value; ``paper_literal``
    subtracts it.
    """
    best_next = table.values[s_next].max()
    sign = 1.0 if params.update_rule == "standard" else -1.0
    q = table.values[s_t, a_t]
    table.values[s_t, a_t] = q + params.alpha * (r_t + sign * params.gamma * best_next - q)
    table.visit_counts[s_t] += 1
    return table


def fuse_average(tables: Sequence[QTable], base: QTable | None = None) -> QTable:
    """Element-wise mean of Q-values.

    Visit counts are summed. When ``base`` is the table every input was forked
    from, counts become ``base`` plus the increments gathered since the fork,
    so repeated fusion does not multiply old samples.

    The mean is taken over values sorted across tables and anchored at the
    smallest, which makes it exact for identical inputs and independent of
    input order.
    """
    if not tables:
        raise ValueError("nothing to fuse")
    first = tables[0]
    for t in tables[1:]:
        if not t.same_shape(first):
            raise ValueError("cannot fuse Q-tables of different dimensions")
    if base is not None and not base.same_shape(first):
        raise ValueError("base table has different dimensions")
    stack = np.sort(np.stack([t.values for t in tables]), axis=0)
    low = stack[0]
    values = low + (stack - low).sum(axis=0) / len(tables)
    counts = np.sum([t.visit_counts for t in tables], axis=0)
    if base is not None:
        counts = counts - (len(tables) - 1) * base.visit_counts
    return QTable(values, counts.astype(np.int64), first.levels)
