"""Network graph of directed arcs and deterministic minimum-hop routing."""
from __future__ import annotations

import pathlib
from collections import deque
from dataclasses import dataclass, field
from importlib import resources


class TopologyError(ValueError):
    pass


def arc_label(u: int, v: int) -> str:
    """``L38`` for arc 3->8; a dash separates multi-digit ids (``L3-12``)."""
    if u < 10 and v < 10 and u >= 0 and v >= 0:
        return f"L{u}{v}"
    return f"L{u}-{v}"


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]

    @property
    def arcs(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.nodes[:-1], self.nodes[1:]))

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    @property
    def source(self) -> int:
        return self.nodes[0]

    @property
    def target(self) -> int:
        return self.nodes[-1]


@dataclass(frozen=True)
class Topology:
    node_ids: tuple[int, ...]
    arcs: tuple[tuple[int, int], ...]
    successors: dict = field(repr=False, compare=False, default_factory=dict)
    predecessors: dict = field(repr=False, compare=False, default_factory=dict)

    @classmethod
    def from_arcs(cls, node_ids, arcs) -> "Topology":
        nodes = tuple(sorted(set(node_ids)))
        if len(nodes) != len(list(node_ids)):
            raise TopologyError("duplicate node ids")
        node_set = set(nodes)
        seen = set()
        for u, v in arcs:
            if u == v:
                raise TopologyError(f"self-loop on node {u}")
            if u not in node_set or v not in node_set:
                raise TopologyError(f"arc ({u}, {v}) references an undeclared node")
            if (u, v) in seen:
                raise TopologyError(f"duplicate arc ({u}, {v})")
            seen.add((u, v))
        succ = {n: [] for n in nodes}
        pred = {n: [] for n in nodes}
        for u, v in sorted(seen):
            succ[u].append(v)
            pred[v].append(u)
        return cls(nodes, tuple(sorted(seen)), succ, pred)

    @classmethod
    def from_edges(cls, edges, node_ids=None) -> "Topology":
        """Undirected edges, each expanded into both arcs."""
        edges = list(edges)
        if node_ids is None:
            node_ids = sorted({n for e in edges for n in e})
        canon = set()
        for u, v in edges:
            key = (min(u, v), max(u, v))
            if key in canon:
                raise TopologyError(f"duplicate edge {u}-{v}")
            canon.add(key)
        arcs = [(u, v) for u, v in edges] + [(v, u) for u, v in edges]
        return cls.from_arcs(node_ids, arcs)

    @property
    def labels(self) -> list[str]:
        return [arc_label(u, v) for u, v in self.arcs]

    def arc_index(self) -> dict[tuple[int, int], int]:
        return {arc: i for i, arc in enumerate(self.arcs)}

    def is_undirected(self) -> bool:
        arcs = set(self.arcs)
        return all((v, u) in arcs for u, v in arcs)


def _parse_edge_file(text: str, source: str):
    declared = None
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0].lower() == "nodes":
            try:
                declared = [int(x) for x in parts[1:]]
            except ValueError:
                raise TopologyError(f"{source}: line {lineno}: malformed node list") from None
            continue
        if len(parts) != 2:
            raise TopologyError(f"{source}: line {lineno}: expected 'u v', got {raw.strip()!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise TopologyError(f"{source}: line {lineno}: node ids must be integers") from None
    if not pairs:
        raise TopologyError(f"{source}: no edges")
    if declared is not None:
        missing = sorted({n for e in pairs for n in e} - set(declared))
        if missing:
            raise TopologyError(f"{source}: edges reference undeclared node(s) {missing}")
    return declared, pairs


def load_topology(path, mode: str = "undirected") -> Topology:
    """Read an edge list: one ``u v`` pair per line, ``#`` comments.

    An optional ``nodes 1 2 3 ...`` line declares the node set; otherwise it is
    inferred from the edges. ``undirected`` expands each edge into two arcs,
    ``directed`` takes each line as one arc.
    """
    path = pathlib.Path(path)
    if not path.is_file():
        raise TopologyError(f"missing topology file: {path}")
    declared, pairs = _parse_edge_file(path.read_text(), str(path))
    if mode == "undirected":
        return Topology.from_edges(pairs, declared)
    if mode == "directed":
        nodes = declared if declared is not None else sorted({n for e in pairs for n in e})
        return Topology.from_arcs(nodes, pairs)
    raise TopologyError(f"unknown topology mode {mode!r}")


def brain_topology_path() -> pathlib.Path:
    return pathlib.Path(str(resources.files("fedlink") / "data" / "brain.edges"))


def _hops_to(topology: Topology, target: int) -> dict[int, int]:
    """Hop distance from every node that can reach ``target``."""
    dist = {target: 0}
    queue = deque([target])
    while queue:
        v = queue.popleft()
        for u in topology.predecessors[v]:
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def _walk(topology: Topology, s: int, d: int, dist: dict[int, int]) -> Path:
    nodes = [s]
    u = s
    while u != d:
        # successors are sorted, so the first one a hop closer is the smallest id
        u = next(v for v in topology.successors[u] if dist.get(v) == dist[u] - 1)
        nodes.append(u)
    return Path(tuple(nodes))


def shortest_path(topology: Topology, s: int, d: int) -> Path:
    """Minimum-hop path from s to d.

    Among equal-hop paths the one whose node sequence is lexicographically
    smallest wins: at every hop the smallest-id neighbor that stays on a
    shortest path is taken.
    """
    if s == d:
        raise TopologyError("source and destination must differ")
    for n in (s, d):
        if n not in topology.successors:
            raise TopologyError(f"unknown node {n}")
    dist = _hops_to(topology, d)
    if s not in dist:
        raise TopologyError(f"node {d} is unreachable from node {s}")
    return _walk(topology, s, d, dist)


def all_pairs_paths(topology: Topology) -> dict[tuple[int, int], Path]:
    paths = {}
    unreachable = []
    for d in topology.node_ids:
        dist = _hops_to(topology, d)
        for s in topology.node_ids:
            if s == d:
                continue
            if s not in dist:
                unreachable.append((s, d))
                continue
            paths[(s, d)] = _walk(topology, s, d, dist)
    if unreachable:
        raise TopologyError(f"topology is disconnected; unreachable pairs: {unreachable}")
    return dict(sorted(paths.items()))


def check_path(topology: Topology, path: Path, s: int, d: int) -> None:
    arcs = set(topology.arcs)
    if path.source != s or path.target != d:
        raise AssertionError(f"path {path.nodes} does not run {s}->{d}")
    for arc in path.arcs:
        if arc not in arcs:
            raise AssertionError(f"path uses missing arc {arc}")
    if len(set(path.nodes)) != len(path.nodes):
        raise AssertionError(f"path {path.nodes} revisits a node")
