"""Action selection: epsilon-greedy and Boltzmann softmax with a sample-count temperature."""

from __future__ import annotations

import math

import numpy as np

from vdsa.learning.qtable import LearningParams, QTable

# Temperature regime markers. UNIFORM picks every action with equal
# probability; GREEDY is the zero-temperature limit (pure argmax).
UNIFORM = math.inf
GREEDY = 0.0


def greedy_action(q_row: np.ndarray) -> int:
    """Argmax with ties going to the lowest index."""
    return int(np.argmax(q_row))


def select_epsilon_greedy(table: QTable, s: int, epsilon: float, rng: np.random.Generator) -> int:
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(table.num_actions))
    return greedy_action(table.values[s])


def temperature_for(visit_count: int, params: LearningParams) -> float:
    """Softmax temperature for a state with ``visit_count`` reward samples.

    Below ``tau_low_samples`` the choice is uniform and above
    ``tau_high_samples`` it is greedy. In between ``log(tau)`` falls linearly
    in ``log(count)`` from ``log(tau_max)`` to 0.
    """
    if visit_count < params.tau_low_samples:
        return UNIFORM
    if visit_count > params.tau_high_samples:
        return GREEDY
    lo = math.log(max(params.tau_low_samples, 1))
    hi = math.log(params.tau_high_samples)
    frac = (math.log(max(visit_count, 1)) - lo) / (hi - lo)
    return params.tau_max ** (1.0 - min(max(frac, 0.0), 1.0))


def softmax_probabilities(q_row: np.ndarray, tau: float) -> np.ndarray:
    q = np.asarray(q_row, dtype=float)
    if tau == UNIFORM:
        return np.full(q.size, 1.0 / q.size)
    if tau == GREEDY:
        p = np.zeros(q.size)
        p[greedy_action(q)] = 1.0
        return p
    z = np.exp((q - q.max()) / tau)
    return z / z.sum()


def select_softmax(table: QTable, s: int, tau: float, rng: np.random.Generator) -> int:
    if tau == GREEDY:
        return greedy_action(table.values[s])
    if tau == UNIFORM:
        return int(rng.integers(table.num_actions))
    p = softmax_probabilities(table.values[s], tau)
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, p.size - 1)
