"""Directed topological navigation map: nodes, timed edges, JSON I/O.

The map is immutable after construction and safe to share across
simulation workers. Edge ordering is deterministic everywhere (sorted by
target id) so downstream tie-breaking is reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class MapFormatError(ValueError):
    """Raised when a map file or map structure violates the schema."""


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    traversal_time: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.source, self.target)


@dataclass(frozen=True)
class TopoMap:
    """Directed graph of locations with per-edge expected traversal times.

    ``coords`` is optional reporting metadata; planning uses only the graph
    structure and traversal times.
    """

    nodes: tuple[int, ...]
    edges: tuple[Edge, ...]
    coords: dict[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise MapFormatError("duplicate node id")
        node_set = set(self.nodes)
        seen: set[tuple[int, int]] = set()
        for i, e in enumerate(self.edges):
            if e.source == e.target:
                raise MapFormatError(f"edges[{i}]: self-loop at node {e.source}")
            if e.source not in node_set:
                raise MapFormatError(f"edges[{i}]: dangling endpoint {e.source}")
            if e.target not in node_set:
                raise MapFormatError(f"edges[{i}]: dangling endpoint {e.target}")
            if not e.traversal_time > 0:
                raise MapFormatError(
                    f"edges[{i}]: non-positive traversal_time {e.traversal_time}"
                )
            if e.key in seen:
                raise MapFormatError(f"edges[{i}]: duplicate edge {e.key}")
            seen.add(e.key)
        # Canonical order: nodes ascending, edges by (source, target).
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: e.key)))
        object.__setattr__(
            self, "_out", _build_adjacency(self.nodes, self.edges)
        )
        object.__setattr__(
            self, "_by_key", {e.key: e for e in self.edges}
        )

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def has_node(self, node: int) -> bool:
        return node in self._out  # type: ignore[attr-defined]

    def edge(self, source: int, target: int) -> Edge:
        try:
            return self._by_key[(source, target)]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"no edge ({source}, {target}) in map") from None

    def has_edge(self, source: int, target: int) -> bool:
        return (source, target) in self._by_key  # type: ignore[attr-defined]

    def out_edges(self, node: int) -> tuple[Edge, ...]:
        """Outgoing edges of ``node`` in target-sorted order."""
        try:
            return self._out[node]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"unknown node {node}") from None

    def reachable(self, source: int, target: int) -> bool:
        """True iff a directed path from ``source`` to ``target`` exists."""
        if not self.has_node(source):
            raise KeyError(f"unknown node {source}")
        if not self.has_node(target):
            raise KeyError(f"unknown node {target}")
        if source == target:
            return True
        stack = [source]
        seen = {source}
        while stack:
            for e in self.out_edges(stack.pop()):
                if e.target == target:
                    return True
                if e.target not in seen:
                    seen.add(e.target)
                    stack.append(e.target)
        return False

    def to_json_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            entry: dict = {"id": n}
            if n in self.coords:
                x, y = self.coords[n]
                entry["xy"] = [x, y]
            nodes.append(entry)
        edges = [
            {"src": e.source, "dst": e.target, "t": e.traversal_time} for e in self.edges
        ]
        return {"nodes": nodes, "edges": edges}


def _build_adjacency(
    nodes: tuple[int, ...], edges: tuple[Edge, ...]
) -> dict[int, tuple[Edge, ...]]:
    out: dict[int, list[Edge]] = {n: [] for n in nodes}
    for e in edges:
        out[e.source].append(e)
    return {n: tuple(sorted(es, key=lambda e: e.target)) for n, es in out.items()}


def map_from_json_dict(data: dict, where: str = "map") -> TopoMap:
    """Build and validate a TopoMap from the JSON map schema.

    Schema: ``{"nodes": [{"id": int, "xy": [x, y]?}], "edges":
    [{"src": int, "dst": int, "t": float}]}``. Unknown fields are rejected.
    """
    if not isinstance(data, dict):
        raise MapFormatError(f"{where}: expected an object")
    unknown = set(data) - {"nodes", "edges"}
    if unknown:
        raise MapFormatError(f"{where}: unknown fields {sorted(unknown)}")
    if "nodes" not in data or "edges" not in data:
        raise MapFormatError(f"{where}: missing 'nodes' or 'edges'")

    nodes: list[int] = []
    coords: dict[int, tuple[float, float]] = {}
    for i, entry in enumerate(data["nodes"]):
        loc = f"{where}.nodes[{i}]"
        if not isinstance(entry, dict):
            raise MapFormatError(f"{loc}: expected an object")
        extra = set(entry) - {"id", "xy"}
        if extra:
            raise MapFormatError(f"{loc}: unknown fields {sorted(extra)}")
        if "id" not in entry or not isinstance(entry["id"], int) or isinstance(entry["id"], bool):
            raise MapFormatError(f"{loc}: 'id' must be an integer")
        node = entry["id"]
        if node in coords or node in nodes:
            raise MapFormatError(f"{loc}: duplicate node id {node}")
        nodes.append(node)
        if "xy" in entry:
            xy = entry["xy"]
            if (
                not isinstance(xy, list)
                or len(xy) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in xy)
            ):
                raise MapFormatError(f"{loc}: 'xy' must be [x, y]")
            coords[node] = (float(xy[0]), float(xy[1]))

    edges: list[Edge] = []
    for i, entry in enumerate(data["edges"]):
        loc = f"{where}.edges[{i}]"
        if not isinstance(entry, dict):
            raise MapFormatError(f"{loc}: expected an object")
        extra = set(entry) - {"src", "dst", "t"}
        if extra:
            raise MapFormatError(f"{loc}: unknown fields {sorted(extra)}")
        for key in ("src", "dst", "t"):
            if key not in entry:
                raise MapFormatError(f"{loc}: missing '{key}'")
        src, dst, t = entry["src"], entry["dst"], entry["t"]
        if not isinstance(src, int) or not isinstance(dst, int) or isinstance(src, bool) or isinstance(dst, bool):
            raise MapFormatError(f"{loc}: 'src'/'dst' must be integers")
        if not isinstance(t, (int, float)) or isinstance(t, bool):
            raise MapFormatError(f"{loc}: 't' must be a number")
        edges.append(Edge(src, dst, float(t)))

    try:
        return TopoMap(tuple(nodes), tuple(edges), coords)
    except MapFormatError as exc:
        raise MapFormatError(f"{where}: {exc}") from None


def load_map(path: str | Path) -> TopoMap:
    """Load and validate a map JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MapFormatError(f"{path}: parse failure: {exc}") from None
    return map_from_json_dict(data, where=str(path))


def save_map(topo: TopoMap, path: str | Path) -> None:
    """Write the map in the canonical JSON schema (stable key/entry order)."""
    Path(path).write_text(json.dumps(topo.to_json_dict(), sort_keys=True) + "\n")
