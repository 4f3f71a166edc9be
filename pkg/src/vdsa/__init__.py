"""Platoon dynamic spectrum access simulator for TV white space.

Tabular Q-learning band selection (epsilon-greedy and softmax, ideal and
federated table fusion) against a conventional distributed baseline, on a
seeded discrete-time simulator of platoons sharing TVWS channels with
protected DTT receivers.
"""

from vdsa.scenario import (
    BandPlan,
    Platoon,
    ScenarioConfig,
    Vehicle,
    World,
    advance_mobility,
    build_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "BandPlan",
    "Platoon",
    "ScenarioConfig",
    "Vehicle",
    "World",
    "advance_mobility",
    "build_scenario",
]
