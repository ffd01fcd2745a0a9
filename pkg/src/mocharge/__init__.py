"""Mobile-charger wireless sensor network simulator with multi-objective
policy search.

The package splits into the physics simulator (`env`), its decision-process
wrapper (`momdp`), a small float64 autograd-free neural stack (`nn`),
multi-objective proximal policy optimization (`ppo`), the evolutionary
archive layer (`emo`), reference baselines (`baselines`), and file/CLI
plumbing (`io`, `cli`).
"""

__version__ = "0.1.0"

from .backend import NUMBA_ENABLED, numba_enabled
from .env import (
    BadConfig,
    ChargerState,
    MochargeError,
    NetworkState,
    NotAtPile,
    ScenarioConfig,
    SlotLedger,
    advance_slot,
    episode_objectives,
    init_state,
    pile_efficiency,
    wpt_received_power,
)
from .momdp import Action, ChargingEnv, RewardWeights, RewardVec, rollout, rollout_batch
from .emo import AlgoConfig, ParetoArchive, hypervolume2, emoppo_tml
from .ppo import GaeConfig, LearningTask, compute_gae, lstm_mppo

__all__ = [
    "__version__",
    "NUMBA_ENABLED",
    "numba_enabled",
    "MochargeError",
    "BadConfig",
    "NotAtPile",
    "ScenarioConfig",
    "ChargerState",
    "NetworkState",
    "SlotLedger",
    "advance_slot",
    "episode_objectives",
    "init_state",
    "pile_efficiency",
    "wpt_received_power",
    "Action",
    "ChargingEnv",
    "RewardWeights",
    "RewardVec",
    "rollout",
    "rollout_batch",
    "AlgoConfig",
    "ParetoArchive",
    "hypervolume2",
    "emoppo_tml",
    "GaeConfig",
    "LearningTask",
    "compute_gae",
    "lstm_mppo",
]
