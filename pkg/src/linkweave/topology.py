"""Capacitated undirected network graphs, file ingestion and degree-one pruning."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

import numpy as np

DEFAULT_CAPACITY = 1.0


class TopologyError(ValueError):
    """Invalid topology input or a topology that cannot be used."""


class TopologyParseError(TopologyError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class Edge:
    id: int
    u: int  # u < v always
    v: int
    capacity: float

    def other(self, node: int) -> int:
        return self.v if node == self.u else self.u


@dataclass(frozen=True)
class Topology:
    """Immutable graph with dense node ids ``0..N-1`` and edge ids ``0..E-1``."""

    labels: tuple[str, ...]
    edges: tuple[Edge, ...]
    _adj: tuple[tuple[tuple[int, int], ...], ...] = field(repr=False, compare=False)
    _index: dict[tuple[int, int], int] = field(repr=False, compare=False)

    @classmethod
    def build(
        cls,
        labels: Iterable[str],
        edges: Iterable[tuple[int, int, float]],
    ) -> Topology:
        labels = tuple(str(x) for x in labels)
        n = len(labels)
        if len(set(labels)) != n:
            raise TopologyError("duplicate node label")
        index: dict[tuple[int, int], int] = {}
        recs: list[Edge] = []
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for a, b, cap in edges:
            a, b = int(a), int(b)
            if not (0 <= a < n and 0 <= b < n):
                raise TopologyError(f"edge ({a}, {b}) references unknown node")
            if a == b:
                raise TopologyError(f"self-loop on node {labels[a]!r}")
            cap = float(cap)
            if not cap > 0 or not np.isfinite(cap):
                raise TopologyError(
                    f"edge {labels[a]!r}-{labels[b]!r} has non-positive capacity {cap}"
                )
            key = (min(a, b), max(a, b))
            if key in index:
                raise TopologyError(f"duplicate edge {labels[a]!r}-{labels[b]!r}")
            eid = len(recs)
            index[key] = eid
            recs.append(Edge(eid, key[0], key[1], cap))
            adj[a].append((b, eid))
            adj[b].append((a, eid))
        frozen_adj = tuple(tuple(sorted(x)) for x in adj)
        return cls(labels, tuple(recs), frozen_adj, index)

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([e.capacity for e in self.edges], dtype=float)

    def neighbors(self, node: int) -> tuple[tuple[int, int], ...]:
        """``(neighbor, edge_id)`` pairs sorted by neighbor id."""
        return self._adj[node]

    def degree(self, node: int) -> int:
        return len(self._adj[node])

    def edge_id(self, a: int, b: int) -> int:
        try:
            return self._index[(min(a, b), max(a, b))]
        except KeyError:
            raise KeyError(f"no edge between {a} and {b}") from None

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._index

    def node(self, label: str) -> int:
        return self.labels.index(label)

    def is_connected(self, removed: Iterable[int] = ()) -> bool:
        """Connectivity of the graph with the given edge ids taken out."""
        n = self.num_nodes
        if n == 0:
            return False
        removed = set(removed)
        seen = [False] * n
        seen[0] = True
        queue = deque([0])
        count = 1
        while queue:
            x = queue.popleft()
            for y, eid in self._adj[x]:
                if not seen[y] and eid not in removed:
                    seen[y] = True
                    count += 1
                    queue.append(y)
        return count == n

    def degree_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for x in range(self.num_nodes):
            d = self.degree(x)
            hist[d] = hist.get(d, 0) + 1
        return dict(sorted(hist.items()))


# ---------------------------------------------------------------------------
# ingestion


def _as_text(source: BinaryIO | bytes | str) -> str:
    if isinstance(source, str):
        return source
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
        if isinstance(data, str):
            return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TopologyParseError(f"invalid UTF-8 at byte {exc.start}") from None


def _parse_edge_list(text: str) -> Topology:
    labels: dict[str, int] = {}
    edges: list[tuple[int, int, float]] = []
    seen: dict[tuple[int, int], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) not in (2, 3):
            raise TopologyParseError(
                f"expected 'src dst [capacity]', got {len(tok)} fields", lineno
            )
        if tok[0] == tok[1]:
            raise TopologyParseError(f"self-loop on node {tok[0]!r}", lineno)
        cap = DEFAULT_CAPACITY
        if len(tok) == 3:
            try:
                cap = float(tok[2])
            except ValueError:
                col = raw.find(tok[2]) + 1
                raise TopologyParseError(f"bad capacity {tok[2]!r}", lineno, col) from None
            if not cap > 0 or not np.isfinite(cap):
                raise TopologyParseError(f"capacity must be positive, got {tok[2]}", lineno)
        a = labels.setdefault(tok[0], len(labels))
        b = labels.setdefault(tok[1], len(labels))
        key = (min(a, b), max(a, b))
        if key in seen:
            raise TopologyParseError(
                f"duplicate edge {tok[0]}-{tok[1]} (first on line {seen[key]})", lineno
            )
        seen[key] = lineno
        edges.append((a, b, cap))
    return Topology.build(labels, edges)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_graphml(text: str) -> Topology:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise TopologyParseError(f"malformed XML: {exc}", line, col + 1) from None

    cap_keys = {
        k.get("id")
        for k in root.iter()
        if _local(k.tag) == "key"
        and k.get("for", "edge") in ("edge", "all")
        and (k.get("attr.name") or "").lower() == "capacity"
    }
    graphs = [g for g in root.iter() if _local(g.tag) == "graph"]
    if not graphs:
        raise TopologyParseError("no <graph> element")
    graph = graphs[0]

    labels: dict[str, int] = {}
    for el in graph:
        if _local(el.tag) == "node":
            nid = el.get("id")
            if nid is None:
                raise TopologyParseError("<node> without id attribute")
            if nid in labels:
                raise TopologyParseError(f"duplicate node id {nid!r}")
            labels[nid] = len(labels)

    edges: list[tuple[int, int, float]] = []
    seen: set[tuple[int, int]] = set()
    for el in graph:
        if _local(el.tag) != "edge":
            continue
        src, dst = el.get("source"), el.get("target")
        if src is None or dst is None:
            raise TopologyParseError("<edge> without source/target")
        if src == dst:
            raise TopologyParseError(f"self-loop on node {src!r}")
        for end in (src, dst):
            if end not in labels:
                labels[end] = len(labels)
        cap = DEFAULT_CAPACITY
        for data in el:
            if _local(data.tag) == "data" and data.get("key") in cap_keys and data.text:
                try:
                    cap = float(data.text.strip())
                except ValueError:
                    raise TopologyParseError(
                        f"bad capacity {data.text.strip()!r} on edge {src}-{dst}"
                    ) from None
        a, b = labels[src], labels[dst]
        key = (min(a, b), max(a, b))
        if key in seen:
            raise TopologyParseError(f"duplicate edge {src}-{dst}")
        seen.add(key)
        edges.append((a, b, cap))
    return Topology.build(labels, edges)


FORMATS = ("edge-list", "graphml-lite")


def load_topology(source: BinaryIO | bytes | str, format: str = "edge-list") -> Topology:
    """Parse a topology from a byte stream (or bytes / already-decoded text).

    Edges without a capacity get ``DEFAULT_CAPACITY``. Self-loops and repeated
    node pairs are rejected. Connectivity is not checked here.
    """
    text = _as_text(source)
    if format == "edge-list":
        return _parse_edge_list(text)
    if format == "graphml-lite":
        return _parse_graphml(text)
    raise TopologyError(f"unknown topology format {format!r}; expected one of {FORMATS}")


def load_topology_file(path, format: str | None = None) -> Topology:
    path = str(path)
    if format is None:
        format = "graphml-lite" if path.endswith((".graphml", ".xml")) else "edge-list"
    with open(path, "rb") as fh:
        return load_topology(fh, format)


def dump_edge_list(t: Topology) -> str:
    lines = [
        f"{t.labels[e.u]} {t.labels[e.v]} {e.capacity!r}"
        for e in t.edges
    ]
    return "\n".join(lines) + "\n"


def dump_graphml(t: Topology) -> str:
    root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    ET.SubElement(
        root, "key", {"id": "cap", "for": "edge", "attr.name": "capacity", "attr.type": "double"}
    )
    g = ET.SubElement(root, "graph", edgedefault="undirected")
    for label in t.labels:
        ET.SubElement(g, "node", id=label)
    for e in t.edges:
        el = ET.SubElement(g, "edge", source=t.labels[e.u], target=t.labels[e.v])
        ET.SubElement(el, "data", key="cap").text = repr(e.capacity)
    return ET.tostring(root, encoding="unicode")


# ---------------------------------------------------------------------------
# preprocessing


def prune_degree_one(t: Topology) -> tuple[Topology, dict[int, int]]:
    """Repeatedly strip nodes of degree <= 1.

    Returns the pruned topology and a map from surviving old node ids to new
    ones. Edge ids are re-densified in their original relative order.
    """
    alive = [True] * t.num_nodes
    deg = [t.degree(x) for x in range(t.num_nodes)]
    queue = deque(x for x in range(t.num_nodes) if deg[x] <= 1)
    while queue:
        x = queue.popleft()
        if not alive[x]:
            continue
        alive[x] = False
        for y, _ in t.neighbors(x):
            if alive[y]:
                deg[y] -= 1
                if deg[y] == 1:
                    queue.append(y)

    mapping: dict[int, int] = {}
    for x in range(t.num_nodes):
        if alive[x]:
            mapping[x] = len(mapping)
    if not mapping:
        raise TopologyError("topology degenerates: pruning removed every node")

    labels = [t.labels[x] for x in sorted(mapping)]
    edges = [
        (mapping[e.u], mapping[e.v], e.capacity)
        for e in t.edges
        if alive[e.u] and alive[e.v]
    ]
    pruned = Topology.build(labels, edges)
    if not pruned.is_connected():
        raise TopologyError("pruned topology is disconnected")
    return pruned, mapping


def random_topology(num_nodes: int, mean_degree: float, seed: int, capacity: float = 1.0) -> Topology:
    """Ring backbone plus uniformly drawn chords; 2-edge-connected by construction."""
    if num_nodes < 3:
        raise TopologyError("need at least 3 nodes")
    rng = np.random.default_rng(seed)
    pairs = {(i, (i + 1) % num_nodes) for i in range(num_nodes)}
    pairs = {(min(a, b), max(a, b)) for a, b in pairs}
    target = max(num_nodes, int(round(mean_degree * num_nodes / 2)))
    limit = num_nodes * (num_nodes - 1) // 2
    target = min(target, limit)
    while len(pairs) < target:
        a, b = rng.choice(num_nodes, size=2, replace=False)
        pairs.add((int(min(a, b)), int(max(a, b))))
    labels = [f"n{i}" for i in range(num_nodes)]
    return Topology.build(labels, [(a, b, capacity) for a, b in sorted(pairs)])
