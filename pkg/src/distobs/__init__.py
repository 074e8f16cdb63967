"""Distributed adaptive observers and controllers for multi-channel LTI plants."""

from .exceptions import *  # noqa: F401,F403
from .linalg import Tolerance, DEFAULT_TOL, solve_care, solve_lyapunov  # noqa: F401
from .graph import CommGraph, collective_strong_detectability, is_connected, laplacian  # noqa: F401
from .decomposition import DecompositionQuadruplet, decompose, verify_quadruplet  # noqa: F401
from .observer import AdaptiveSettings, ObserverNode, build_mas_observer, build_observer  # noqa: F401
from .control import ControllerNode, SineSignal, UnknownInputModel  # noqa: F401
from .simulation import ClosedLoop, ExogenousInput, TrajectoryRecord, metrics, run  # noqa: F401
from .scenarios import (  # noqa: F401
    ScenarioConfig,
    RunSummary,
    assemble,
    builtin_scenario,
    dump_config,
    emit_csv,
    parse_config,
    run_acceptance,
)

__version__ = "0.1.0"
