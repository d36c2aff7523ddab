"""Link-failure scenarios and the recovery regimes evaluated against them.

All regimes keep the controller's split ratios fixed and work in expectation:
an equal-probability choice among k detours becomes a 1/k fractional split.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .demand import DemandMatrix
from .pathing import PathSet
from .te import LinkLoad, PathView, RatioConfig, TEError, path_flows
from .topology import Topology

REGIMES = ("weave", "source_reroute", "no_reaction")
MAX_DRAWS_PER_SCENARIO = 1000


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class FailureScenario:
    failed: tuple[int, ...]
    weight: float = 1.0
    resamples: int = 0  # draws rejected for disconnecting the graph

    def __post_init__(self):
        if not self.failed:
            raise ScenarioError("a failure scenario needs at least one failed edge")
        object.__setattr__(self, "failed", tuple(sorted(set(int(e) for e in self.failed))))


def sample_scenarios(
    t: Topology, count: int, simultaneous: int, seed: int
) -> list[FailureScenario]:
    """``count`` scenarios of ``simultaneous`` distinct links, uniform over links.

    Draws that disconnect the residual graph are rejected and redrawn.
    Scenario weights are uniform (1 / count).
    """
    if simultaneous < 1:
        raise ScenarioError("need at least one failed link per scenario")
    if simultaneous >= t.num_edges:
        raise ScenarioError("cannot fail as many links as the topology has")
    rng = np.random.default_rng(seed)
    out: list[FailureScenario] = []
    for _ in range(count):
        rejected = 0
        while True:
            pick = rng.choice(t.num_edges, size=simultaneous, replace=False)
            if t.is_connected(pick.tolist()):
                break
            rejected += 1
            if rejected == MAX_DRAWS_PER_SCENARIO and not _any_survivable(t, simultaneous):
                raise ScenarioError(
                    f"every set of {simultaneous} failed links disconnects the topology"
                )
        out.append(FailureScenario(tuple(int(e) for e in pick), 1.0 / count, rejected))
    return out


def _any_survivable(t: Topology, simultaneous: int) -> bool:
    return any(
        t.is_connected(combo)
        for combo in itertools.combinations(range(t.num_edges), simultaneous)
    )


def scenarios_to_json(scenarios: Sequence[FailureScenario]) -> str:
    return json.dumps([{"failed_edges": list(s.failed), "weight": s.weight} for s in scenarios])


def scenarios_from_json(text: str) -> list[FailureScenario]:
    return [FailureScenario(tuple(r["failed_edges"]), float(r.get("weight", 1.0))) for r in json.loads(text)]


@dataclass(frozen=True)
class WovenLoad:
    """Post-recovery link loads and where each unit of demand ended up.

    ``planned`` counts demand on paths untouched by the failure, ``weaved``
    demand on paths repaired by local detours, ``rerouted`` demand moved by
    the source to other paths of its pair, ``dropped`` demand lost.
    """

    regime: str
    load: LinkLoad
    planned: float
    weaved: float
    rerouted: float
    dropped: float
    total: float
    dropped_pairs: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def delivered(self) -> float:
        return self.planned + self.weaved + self.rerouted

    def conservation_error(self) -> float:
        return abs(self.planned + self.weaved + self.rerouted + self.dropped - self.total)


def _detour_profile(
    ps: PathSet, path, failed: frozenset[int], num_edges: int
) -> np.ndarray | None:
    """Edge traversal counts for one unit sent along ``path`` with detours.

    Each failed hop u->v is replaced by an even split over the u->v detours
    that avoid every failed link. Detours never cross a failed link, so a
    single level of substitution is complete. None if some failed hop has
    no such detour.
    """
    prof = np.zeros(num_edges)
    for a, e in zip(path.nodes, path.edges):
        if e not in failed:
            prof[e] += 1.0
            continue
        alive = [b for b in ps.backup_paths(e, a) if not failed.intersection(b.edges)]
        if not alive:
            return None
        share = 1.0 / len(alive)
        for b in alive:
            for be in b.edges:
                prof[be] += share
    return prof


def _recover(
    regime: str, ps: PathSet, dm: DemandMatrix, r: RatioConfig, failed_edges: Sequence[int]
) -> WovenLoad:
    t = ps.topology
    failed = frozenset(int(e) for e in failed_edges)
    for e in failed:
        if not 0 <= e < t.num_edges:
            raise TEError(f"failed edge {e} not in topology")
    view = PathView(ps, failed)
    flat = view.flat
    x = path_flows(view, dm, r)
    demand = flat.pair_demand(dm.entries)
    total = float(demand.sum())

    broken_pair = np.zeros(len(flat.pairs), dtype=bool)
    np.logical_or.at(broken_pair, flat.path_pair, ~view.usable)
    untouched = ~broken_pair[flat.path_pair]
    flow = flat.incidence[:, untouched] @ x[untouched]
    planned = float(x[untouched].sum())
    weaved = rerouted = dropped = 0.0
    dropped_pairs: dict[tuple[int, int], float] = {}

    for i in np.flatnonzero(broken_pair & (demand > 0)):
        d = float(demand[i])
        lo, hi = flat.offsets[i], flat.offsets[i + 1]
        lam = r.weights[lo:hi]
        idx = range(lo, hi)
        intact = view.usable[lo:hi]
        profiles: list[np.ndarray | None] = []
        for j in idx:
            p = flat.paths[j]
            if view.usable[j]:
                prof = np.zeros(t.num_edges)
                prof[list(p.edges)] = 1.0
            elif regime == "weave":
                prof = _detour_profile(ps, p, failed, t.num_edges)
            else:
                prof = None
            profiles.append(prof)
        ok = np.array([p is not None for p in profiles])
        w_ok = float(lam[ok].sum())
        w_lost = float(lam[~ok].sum())
        planned += d * float(lam[intact].sum())
        weaved += d * float(lam[ok & ~intact].sum())

        if regime == "no_reaction" or not ok.any():
            scale = np.where(ok, lam, 0.0)
            lost = d * w_lost
            dropped += lost
            if lost > 0:
                dropped_pairs[flat.pairs[i]] = lost
        else:
            rerouted += d * w_lost
            if w_ok > 0:
                scale = np.where(ok, lam / w_ok, 0.0)
            else:
                scale = ok / ok.sum()
        for prof, s in zip(profiles, scale):
            if prof is not None and s > 0:
                flow = flow + (d * s) * prof

    load = LinkLoad(np.asarray(flow, dtype=float), flat.capacity)
    return WovenLoad(regime, load, planned, weaved, rerouted, dropped, total, dropped_pairs)


def _scenario_edges(sc) -> Sequence[int]:
    return sc.failed if isinstance(sc, FailureScenario) else sc


def weave(ps: PathSet, dm: DemandMatrix, r: RatioConfig, sc) -> WovenLoad:
    """Local detour recovery.

    A path crossing failed link u->v keeps its share and its route; only the
    failed hop is replaced by an even split over the surviving u->v detours.
    A path with a failed hop that has no surviving detour falls back to
    source rerouting over the pair's remaining (intact or repaired) paths,
    and is dropped when none remain.
    """
    return _recover("weave", ps, dm, r, _scenario_edges(sc))


def source_reroute(ps: PathSet, dm: DemandMatrix, r: RatioConfig, sc) -> WovenLoad:
    """Move the share of each failed path proportionally onto the pair's intact paths."""
    return _recover("source_reroute", ps, dm, r, _scenario_edges(sc))


def no_reaction(ps: PathSet, dm: DemandMatrix, r: RatioConfig, sc) -> WovenLoad:
    """Drop the traffic of failed paths and leave everything else alone."""
    return _recover("no_reaction", ps, dm, r, _scenario_edges(sc))


def recover(regime: str, ps: PathSet, dm: DemandMatrix, r: RatioConfig, sc) -> WovenLoad:
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    return _recover(regime, ps, dm, r, _scenario_edges(sc))
