"""Routing and backup path computation plus path-set risk analytics.

Path length is hop count everywhere. Ties are broken by the lexicographically
smallest node-id sequence, so every function here is deterministic.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property, partial
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy import sparse

from .topology import Topology

ROUTING_METHODS = ("edksp", "ksp")


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]
    edges: tuple[int, ...]

    @classmethod
    def from_nodes(cls, t: Topology, nodes: Sequence[int]) -> Path:
        nodes = tuple(int(x) for x in nodes)
        if len(nodes) < 2:
            raise PathError("a path needs at least two nodes")
        if len(set(nodes)) != len(nodes):
            raise PathError(f"path {nodes} repeats a node")
        try:
            edges = tuple(t.edge_id(a, b) for a, b in zip(nodes, nodes[1:]))
        except KeyError as exc:
            raise PathError(f"path {nodes}: {exc.args[0]}") from None
        return cls(nodes, edges)

    @property
    def hops(self) -> int:
        return len(self.edges)

    @property
    def src(self) -> int:
        return self.nodes[0]

    @property
    def dst(self) -> int:
        return self.nodes[-1]

    def reversed(self) -> Path:
        return Path(self.nodes[::-1], self.edges[::-1])

    def sort_key(self) -> tuple[int, tuple[int, ...]]:
        return (len(self.nodes), self.nodes)


# ---------------------------------------------------------------------------
# single-pair searches


def _shortest(
    t: Topology,
    s: int,
    d: int,
    banned_edges: set[int] | frozenset[int] = frozenset(),
    banned_nodes: set[int] | frozenset[int] = frozenset(),
) -> tuple[int, ...] | None:
    """Lexicographically smallest among the fewest-hop s->d paths, or None."""
    if s == d:
        return (s,)
    dist = {d: 0}
    queue = deque([d])
    while queue and s not in dist:
        x = queue.popleft()
        for y, eid in t.neighbors(x):
            if y in dist or eid in banned_edges or y in banned_nodes:
                continue
            dist[y] = dist[x] + 1
            queue.append(y)
    if s not in dist:
        return None
    path = [s]
    x = s
    while x != d:
        want = dist[x] - 1
        for y, eid in t.neighbors(x):
            if dist.get(y) == want and eid not in banned_edges and y not in banned_nodes:
                x = y
                break
        path.append(x)
    return tuple(path)


def _edge_seq(t: Topology, nodes: Sequence[int]) -> Iterator[int]:
    return (t.edge_id(a, b) for a, b in zip(nodes, nodes[1:]))


def ksp(
    t: Topology, s: int, d: int, k: int, excluded_edges: Iterable[int] = ()
) -> list[Path]:
    """Up to ``k`` loopless shortest paths (Yen), ordered by (hops, node sequence).

    ``excluded_edges`` are treated as absent from the graph.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if s == d:
        raise ValueError("source and destination must differ")
    excluded = frozenset(excluded_edges)
    first = _shortest(t, s, d, excluded)
    if first is None:
        return []
    accepted = [first]
    seen = {first}
    candidates: list[tuple[int, tuple[int, ...]]] = []
    while len(accepted) < k:
        last = accepted[-1]
        for i in range(len(last) - 1):
            root = last[: i + 1]
            banned_edges = set(excluded)
            for p in accepted:
                if len(p) > i + 1 and p[: i + 1] == root:
                    banned_edges.add(t.edge_id(p[i], p[i + 1]))
            spur = _shortest(t, last[i], d, banned_edges, set(root[:-1]))
            if spur is None:
                continue
            cand = root[:-1] + spur
            if cand not in seen:
                seen.add(cand)
                heapq.heappush(candidates, (len(cand), cand))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates)[1])
    return [Path(p, tuple(_edge_seq(t, p))) for p in accepted]


def edksp(t: Topology, s: int, d: int, k: int) -> list[Path]:
    """Edge-disjoint paths by repeated shortest-path extraction and edge removal."""
    if k < 1:
        raise ValueError("k must be positive")
    if s == d:
        raise ValueError("source and destination must differ")
    banned: set[int] = set()
    out: list[Path] = []
    while len(out) < k:
        nodes = _shortest(t, s, d, banned)
        if nodes is None:
            break
        p = Path(nodes, tuple(_edge_seq(t, nodes)))
        banned.update(p.edges)
        out.append(p)
    return out


# ---------------------------------------------------------------------------
# path sets


@dataclass(frozen=True)
class PathSet:
    """Routing paths per ordered pair and detour paths per link.

    ``backup[e]`` runs from ``edges[e].u`` to ``edges[e].v`` (lower id to
    higher id); use :meth:`backup_paths` for an oriented view.
    """

    topology: Topology = field(repr=False)
    k: int
    routing: Mapping[tuple[int, int], tuple[Path, ...]] = field(repr=False)
    backup: Mapping[int, tuple[Path, ...]] = field(repr=False)
    method: str = "edksp"
    backup_k: int | None = None

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(self.routing)

    @property
    def num_routing_paths(self) -> int:
        return sum(len(v) for v in self.routing.values())

    @property
    def num_backup_paths(self) -> int:
        return sum(len(v) for v in self.backup.values())

    @property
    def unprotected_edges(self) -> list[int]:
        """Links with no detour; their failures go straight to the fallback rule."""
        return [e for e, paths in self.backup.items() if not paths]

    def backup_paths(self, edge: int, src: int) -> tuple[Path, ...]:
        e = self.topology.edges[edge]
        paths = self.backup[edge]
        if src == e.u:
            return paths
        if src == e.v:
            return self._reversed_backup[edge]
        raise PathError(f"node {src} is not an endpoint of edge {edge}")

    @cached_property
    def _reversed_backup(self) -> dict[int, tuple[Path, ...]]:
        return {e: tuple(p.reversed() for p in ps) for e, ps in self.backup.items()}

    @cached_property
    def flat(self) -> FlatPaths:
        return FlatPaths.build(self)

    def to_json(self) -> str:
        doc = {
            "k": self.k,
            "method": self.method,
            "backup_k": self.backup_k,
            "routing": [
                {"src": s, "dst": d, "paths": [list(p.nodes) for p in ps]}
                for (s, d), ps in self.routing.items()
            ],
            "backup": [
                {"edge": e, "paths": [list(p.nodes) for p in ps]}
                for e, ps in self.backup.items()
            ],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, t: Topology, text: str) -> PathSet:
        doc = json.loads(text)
        routing = {
            (int(r["src"]), int(r["dst"])): tuple(Path.from_nodes(t, p) for p in r["paths"])
            for r in doc["routing"]
        }
        backup = {
            int(b["edge"]): tuple(Path.from_nodes(t, p) for p in b["paths"])
            for b in doc["backup"]
        }
        return cls(t, int(doc["k"]), routing, backup, doc.get("method", "edksp"), doc.get("backup_k"))


@dataclass(frozen=True, eq=False)
class FlatPaths:
    """Routing paths laid out in one array, pair by pair in ``PathSet`` order.

    Path ``j`` belongs to pair ``path_pair[j]``; pair ``i`` owns paths
    ``offsets[i]:offsets[i + 1]``. ``incidence`` is the (edges x paths)
    0/1 matrix.
    """

    pairs: tuple[tuple[int, int], ...]
    pair_index: dict[tuple[int, int], int]
    offsets: np.ndarray
    paths: tuple[Path, ...]
    path_pair: np.ndarray
    pair_src: np.ndarray
    pair_dst: np.ndarray
    incidence: sparse.csr_matrix
    capacity: np.ndarray

    @classmethod
    def build(cls, ps: PathSet) -> FlatPaths:
        pairs = tuple(ps.routing)
        counts = np.array([len(ps.routing[p]) for p in pairs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        paths = tuple(p for pair in pairs for p in ps.routing[pair])
        rows = np.fromiter((e for p in paths for e in p.edges), dtype=np.int64)
        cols = np.repeat(np.arange(len(paths)), [p.hops for p in paths])
        inc = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)),
            shape=(ps.topology.num_edges, len(paths)),
        )
        return cls(
            pairs=pairs,
            pair_index={p: i for i, p in enumerate(pairs)},
            offsets=offsets,
            paths=paths,
            path_pair=np.repeat(np.arange(len(pairs)), counts),
            pair_src=np.array([s for s, _ in pairs], dtype=np.int64),
            pair_dst=np.array([d for _, d in pairs], dtype=np.int64),
            incidence=inc,
            capacity=ps.topology.capacities,
        )

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    def pair_demand(self, entries: np.ndarray) -> np.ndarray:
        return np.asarray(entries)[self.pair_src, self.pair_dst]

    def path_demand(self, entries: np.ndarray) -> np.ndarray:
        return self.pair_demand(entries)[self.path_pair]


def _pair_paths(t: Topology, k: int, method: str, pair: tuple[int, int]) -> tuple[Path, ...]:
    fn = edksp if method == "edksp" else ksp
    return tuple(fn(t, pair[0], pair[1], k))


def _edge_backups(t: Topology, k: int, method: str, eid: int) -> tuple[Path, ...]:
    e = t.edges[eid]
    if method == "edksp":
        # the direct hop is the protected link itself, so it is banned up front
        banned = {eid}
        out = []
        while len(out) < k:
            nodes = _shortest(t, e.u, e.v, banned)
            if nodes is None:
                break
            p = Path(nodes, tuple(_edge_seq(t, nodes)))
            banned.update(p.edges)
            out.append(p)
        return tuple(out)
    return tuple(ksp(t, e.u, e.v, k, excluded_edges=(eid,)))


def build_path_set(
    t: Topology,
    k: int,
    *,
    method: str = "edksp",
    backup_method: str = "ksp",
    backup_k: int | None = None,
    mapper: Callable = map,
) -> PathSet:
    """Routing paths for every ordered pair plus detours for every link.

    ``mapper`` must preserve order (builtin ``map`` or ``Executor.map``); it
    lets callers fan the per-pair work out to a pool.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if method not in ROUTING_METHODS or backup_method not in ROUTING_METHODS:
        raise ValueError(f"path methods must be among {ROUTING_METHODS}")
    n = t.num_nodes
    pairs = [(s, d) for s in range(n) for d in range(n) if s != d]
    routing_lists = list(mapper(partial(_pair_paths, t, k, method), pairs))
    for pair, paths in zip(pairs, routing_lists):
        if not paths:
            raise PathError(f"no path between {pair[0]} and {pair[1]}; topology is disconnected")
    bk = k if backup_k is None else backup_k
    backup_lists = list(mapper(partial(_edge_backups, t, bk, backup_method), range(t.num_edges)))
    return PathSet(
        t,
        k,
        dict(zip(pairs, routing_lists)),
        dict(zip(range(t.num_edges), backup_lists)),
        method,
        backup_k,
    )


# ---------------------------------------------------------------------------
# risk analytics


def edge_risk(paths: Sequence[Path]) -> float:
    """Largest fraction of ``paths`` that share a single edge."""
    if not paths:
        raise PathError("edge risk of an empty path list is undefined")
    counts: dict[int, int] = {}
    for p in paths:
        for e in set(p.edges):
            counts[e] = counts.get(e, 0) + 1
    return max(counts.values()) / len(paths)


@dataclass(frozen=True)
class RiskSummary:
    count: int
    mean: float
    quantiles: dict[float, float]
    histogram: dict[float, int]  # distinct risk value -> number of path lists

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "quantiles": {str(q): v for q, v in self.quantiles.items()},
            "histogram": {repr(v): c for v, c in self.histogram.items()},
        }


RISK_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9, 1.0)


def risk_profile(ps: PathSet, kind: str) -> RiskSummary:
    """Distribution of :func:`edge_risk` over one family of path lists.

    ``adjacent`` / ``nonadjacent`` select routing lists of pairs with / without
    a direct link; ``backup`` selects per-link detour lists (links without
    detours are skipped).
    """
    t = ps.topology
    if kind == "adjacent":
        lists = [v for (s, d), v in ps.routing.items() if t.has_edge(s, d)]
    elif kind == "nonadjacent":
        lists = [v for (s, d), v in ps.routing.items() if not t.has_edge(s, d)]
    elif kind == "backup":
        lists = [v for v in ps.backup.values() if v]
    else:
        raise ValueError(f"unknown risk kind {kind!r}")
    if not lists:
        return RiskSummary(0, float("nan"), {q: float("nan") for q in RISK_QUANTILES}, {})
    risks = np.array([edge_risk(v) for v in lists])
    values, counts = np.unique(risks, return_counts=True)
    return RiskSummary(
        count=len(risks),
        mean=float(risks.mean()),
        quantiles={q: float(np.quantile(risks, q)) for q in RISK_QUANTILES},
        histogram={float(v): int(c) for v, c in zip(values, counts)},
    )


def backup_coverage(ps: PathSet, k: int) -> float:
    """Fraction of links that have at least ``k`` detours."""
    if ps.topology.num_edges == 0:
        return 0.0
    return sum(len(v) >= k for v in ps.backup.values()) / ps.topology.num_edges


@dataclass(frozen=True)
class DeltaF:
    base: float
    reweave: float
    stranded: tuple[tuple[int, int], ...]  # pairs whose routing paths all cross the failure

    def __iter__(self):
        yield self.base
        yield self.reweave


def delta_f_models(
    ps: PathSet,
    failed: int,
    per_pair_failed_traffic: Mapping[tuple[int, int], float],
    e0: int,
) -> DeltaF:
    """Predicted load increase on ``e0`` after ``failed`` goes down.

    ``base``: each pair's disrupted volume spread evenly over its surviving
    routing paths. ``reweave``: the total disrupted volume spread evenly over
    the failed link's detours.
    """
    if failed == e0:
        raise ValueError("observed edge must differ from the failed edge")
    base = 0.0
    stranded = []
    total = 0.0
    for pair, vol in sorted(per_pair_failed_traffic.items()):
        if vol < 0:
            raise ValueError(f"negative failed volume for pair {pair}")
        total += vol
        if vol == 0:
            continue
        surviving = [p for p in ps.routing[pair] if failed not in p.edges]
        if not surviving:
            stranded.append(pair)
            continue
        base += vol * sum(e0 in p.edges for p in surviving) / len(surviving)
    detours = ps.backup[failed]
    risk_backup = sum(e0 in p.edges for p in detours) / len(detours) if detours else 0.0
    return DeltaF(base, risk_backup * total, tuple(stranded))
