"""Model-based graph RL lab for inductive traffic-signal control.

A microscopic traffic simulator, a heterogeneous graph network with latent
dynamics trained by a built-in reverse-mode tape, a coordinated joint-action
tree-search planner, heuristic baselines, and a zero-shot transfer benchmark.
"""

from .netmodel import (
    ACYCLIC,
    CYCLIC,
    GREEN_PRIORITY,
    GREEN_YIELD,
    RED,
    NetworkGenConfig,
    NetworkGenError,
    RoadNetwork,
    Trip,
    fresh_trip_process,
    generate_network,
    generate_trips,
    load_network,
    load_trips,
    save_network,
    save_trips,
)
from .sim import IllegalAction, SimConfig, TrafficSim
from .connectivity import ControllerSnapshot, advance_snapshot, connection_features, snapshot_from_sim
from .graphobs import GraphObservation, encode_observation
from .tape import Tape
from .model import (
    ModelParams,
    init_params,
    initial_representation,
    dynamics_step,
    predict_priors,
    predict_value_reward,
    resample_noise,
    zero_noise,
)
from .checkpoint import load_params, save_params
from .planner import SearchConfig, SearchResult, plan, plan_independent
from .trainer import HyperParams, ReplayBuffer, run_training
from .baselines import fixed_time_action, greedy_action
from .config import Config, ConfigError, load_config
from .bench import (
    ExperimentConfig,
    MetricsReport,
    MissingArtifact,
    PairingError,
    run_experiment1,
    run_smoke_scale,
)
from .reports import export_report

__version__ = "0.1.0"

__all__ = [
    "ACYCLIC",
    "CYCLIC",
    "GREEN_PRIORITY",
    "GREEN_YIELD",
    "RED",
    "Config",
    "ConfigError",
    "ControllerSnapshot",
    "ExperimentConfig",
    "GraphObservation",
    "HyperParams",
    "IllegalAction",
    "MetricsReport",
    "MissingArtifact",
    "ModelParams",
    "NetworkGenConfig",
    "NetworkGenError",
    "PairingError",
    "ReplayBuffer",
    "RoadNetwork",
    "SearchConfig",
    "SearchResult",
    "SimConfig",
    "Tape",
    "TrafficSim",
    "Trip",
    "advance_snapshot",
    "connection_features",
    "dynamics_step",
    "encode_observation",
    "export_report",
    "fixed_time_action",
    "fresh_trip_process",
    "generate_network",
    "generate_trips",
    "greedy_action",
    "init_params",
    "initial_representation",
    "load_config",
    "load_network",
    "load_params",
    "load_trips",
    "plan",
    "plan_independent",
    "predict_priors",
    "predict_value_reward",
    "resample_noise",
    "run_experiment1",
    "run_smoke_scale",
    "run_training",
    "save_network",
    "save_params",
    "save_trips",
    "snapshot_from_sim",
    "zero_noise",
]
