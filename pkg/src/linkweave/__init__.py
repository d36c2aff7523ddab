"""Local detour weaving for segment-routed traffic engineering under link failures."""

from .demand import DemandMatrix, DemandSeries, gravity_series, perturb, split
from .failure import FailureScenario, no_reaction, recover, sample_scenarios, source_reroute, weave
from .learn import PredictorModel, TrainConfig, forward, gradient_check, train
from .metrics import avg_delay, perc_loss, router_state, scenario_loss
from .pathing import PathSet, build_path_set, edge_risk, edksp, ksp
from .te import RatioConfig, compute_loads, lp_oracle, mlu, normalized_mlu
from .topology import Topology, load_topology, load_topology_file, prune_degree_one

__version__ = "0.1.0"

__all__ = [
    "DemandMatrix", "DemandSeries", "FailureScenario", "PathSet", "PredictorModel",
    "RatioConfig", "Topology", "TrainConfig", "avg_delay", "build_path_set",
    "compute_loads", "edge_risk", "edksp", "forward", "gradient_check", "gravity_series",
    "ksp", "load_topology", "load_topology_file", "lp_oracle", "mlu", "no_reaction",
    "normalized_mlu", "perc_loss", "perturb", "prune_degree_one", "recover",
    "router_state", "sample_scenarios", "scenario_loss", "source_reroute", "split",
    "train", "weave",
]
