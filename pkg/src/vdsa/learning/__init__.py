from vdsa.learning.policy import (
    GREEDY,
    UNIFORM,
    greedy_action,
    select_epsilon_greedy,
    select_softmax,
    softmax_probabilities,
    temperature_for,
)
from vdsa.learning.qtable import LearningParams, QTable, fuse_average, q_update
from vdsa.learning.reward import RewardSample, compute_reward
from vdsa.learning.state import (
    PlatoonStateTuple,
    QuantizerConfig,
    decode_state,
    encode_state,
    quantize_sinr,
    state_count,
)

__all__ = [
    "GREEDY",
    "UNIFORM",
    "LearningParams",
    "PlatoonStateTuple",
    "QTable",
    "QuantizerConfig",
    "RewardSample",
    "compute_reward",
    "decode_state",
    "encode_state",
    "fuse_average",
    "greedy_action",
    "q_update",
    "quantize_sinr",
    "select_epsilon_greedy",
    "select_softmax",
    "softmax_probabilities",
    "state_count",
    "temperature_for",
]
