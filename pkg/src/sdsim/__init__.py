"""Discrete-event simulator for backfill and slowdown-driven malleable co-scheduling."""

__version__ = "0.1.0"

from .cluster import ClusterConfig, ClusterState
from .engine import EventLog, InvariantChecker, SimConfig, Simulation, replay_compare, run
from .metrics import SimReport, daily_series, heatmap, summarize
from .runtime_model import ModelKind
from .selection import CutoffPolicy, brute_force_select, select_mates
from .workload import Job, SynthParams, gen_synthetic, load_swf, parse_swf

__all__ = [
    "ClusterConfig", "ClusterState", "CutoffPolicy", "EventLog", "InvariantChecker", "Job", "ModelKind",
    "SimConfig", "SimReport", "Simulation", "SynthParams", "brute_force_select", "daily_series",
    "gen_synthetic", "heatmap", "load_swf", "parse_swf", "replay_compare", "run", "select_mates", "summarize",
]
