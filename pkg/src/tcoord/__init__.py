"""Time-coordinated path following over time-varying digraphs."""

from .controller import CoordinationGains, alpha_bar, coordination_accel, validate_gains
from .coordmath import build_q, consensus_constants, coordination_error, diam, iss_bounds
from .engine import Scenario, extract_metrics, run, run_auxiliary_consensus
from .scenario import load_bundled, load_scenario
from .topology import Digraph, DigraphSchedule, delta_spanning_tree_root, verify_assumption3
from .trajectory import BezierTrajectory, TrajectorySet, speed_bounds

__version__ = "0.1.0"
