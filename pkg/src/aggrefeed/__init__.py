"""Distributed aggregative feedback optimization over weight-balanced digraphs."""

__version__ = "0.1.0"

from .controller import Gains, NetworkState, StackedDynamics, metrics, network_rhs  # noqa: E402
from .graph import NetworkGraph, build_consensus_basis, build_laplacian, generate_er_balanced  # noqa: E402
from .model import AgentModel, NetworkModel, finite_diff_check  # noqa: E402
from .scenarios import QuadraticConfig, SurveillanceConfig, quadratic_benchmark, surveillance_scenario  # noqa: E402
from .sim import DisturbanceSpec, SimConfig, TrajectoryLog, integrate  # noqa: E402

__all__ = [
    "AgentModel",
    "DisturbanceSpec",
    "Gains",
    "NetworkGraph",
    "NetworkModel",
    "NetworkState",
    "QuadraticConfig",
    "SimConfig",
    "StackedDynamics",
    "SurveillanceConfig",
    "TrajectoryLog",
    "build_consensus_basis",
    "build_laplacian",
    "finite_diff_check",
    "generate_er_balanced",
    "integrate",
    "metrics",
    "network_rhs",
    "quadratic_benchmark",
    "surveillance_scenario",
]
