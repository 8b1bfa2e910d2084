"""Seeded random environment generation for experiments.

Maps are directed Bernoulli graphs patched to strong connectivity, so
every (start, goal) pair is a valid task. Hazards are only placed on
edges whose removal keeps the hazard-free subgraph strongly connected:
a planner that learns where the hazards are can always route around
them, which is the regime the deployment benchmarks measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .failures import FailureKind, default_taxonomy
from .sensor_sim import Hazard, RngStream, SensorFidelity, SimEnvironment
from .topo_map import Edge, TopoMap


@dataclass(frozen=True)
class EnvParams:
    nodes: int = 16
    density: float = 0.3          # directed edge probability per ordered pair
    hazards: int = 8
    cf_fraction: float = 0.5      # share of hazards that are catastrophic
    placement: str = "uniform"    # "uniform" | "trafficked" hazard placement
    t_min: float = 5.0            # traversal time range, seconds
    t_max: float = 15.0
    strength_min: float = 0.4     # hazard failure-probability contribution
    strength_max: float = 0.9
    pos_min: float = 0.15         # hazard position along the edge
    pos_max: float = 0.85
    vis_min: float = 0.3          # visibility window, fraction of the edge
    vis_max: float = 0.6

    def __post_init__(self) -> None:
        if self.nodes < 2:
            raise ValueError("nodes must be >= 2")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must be in [0, 1]")
        if self.hazards < 0:
            raise ValueError("hazards must be >= 0")
        if not 0.0 <= self.cf_fraction <= 1.0:
            raise ValueError("cf_fraction must be in [0, 1]")
        if self.placement not in ("uniform", "trafficked"):
            raise ValueError(f"unknown placement {self.placement!r}")
        for lo, hi, name, lim in [
            (self.t_min, self.t_max, "t", None),
            (self.strength_min, self.strength_max, "strength", (0.0, 1.0)),
            (self.pos_min, self.pos_max, "pos", (0.0, 1.0)),
            (self.vis_min, self.vis_max, "vis", (0.0, 1.0)),
        ]:
            if not 0 < lo <= hi:
                raise ValueError(f"{name} range [{lo}, {hi}] invalid")
            if lim and not (lim[0] <= lo and hi <= lim[1]):
                raise ValueError(f"{name} range [{lo}, {hi}] outside {lim}")

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)


def _strongly_connected(n: int, edges: set[tuple[int, int]]) -> bool:
    if not edges:
        return n <= 1
    rows, cols = zip(*edges)
    adj = csr_matrix((np.ones(len(edges), dtype=np.int8), (rows, cols)), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    return n_comp == 1


def generate_map(params: EnvParams, rng: RngStream) -> TopoMap:
    """Directed Bernoulli(density) graph over ``nodes``, made strongly
    connected by linking leftover components in a cycle."""
    gen = rng.generator
    n = params.nodes
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v]
    draws = gen.random(len(pairs))
    chosen = {p for p, d in zip(pairs, draws) if d < params.density}

    if not _strongly_connected(n, chosen):
        if chosen:
            rows, cols = zip(*chosen)
            adj = csr_matrix(
                (np.ones(len(chosen), dtype=np.int8), (rows, cols)), shape=(n, n)
            )
        else:
            adj = csr_matrix((n, n), dtype=np.int8)
        n_comp, labels = connected_components(adj, directed=True, connection="strong")
        reps = []
        for comp in range(n_comp):
            members = np.nonzero(labels == comp)[0]
            reps.append(int(members[gen.integers(len(members))]))
        order = gen.permutation(len(reps))
        for i in range(len(reps)):
            u = reps[order[i]]
            v = reps[order[(i + 1) % len(reps)]]
            if u != v:
                chosen.add((u, v))

    times = gen.uniform(params.t_min, params.t_max, len(chosen))
    edges = tuple(
        Edge(u, v, float(t)) for (u, v), t in zip(sorted(chosen), times)
    )
    coords = {
        i: (float(x), float(y))
        for i, (x, y) in enumerate(gen.uniform(0.0, 100.0, (n, 2)))
    }
    return TopoMap(tuple(range(n)), edges, coords)


def _edge_traffic(topo: TopoMap) -> dict[tuple[int, int], int]:
    """How many all-pairs time-shortest paths use each edge (ties to the
    lowest target id, matching the planner's tie-break)."""
    import heapq

    counts: dict[tuple[int, int], int] = {e.key: 0 for e in topo.edges}
    for src in topo.nodes:
        dist: dict[int, float] = {src: 0.0}
        first_hop: dict[int, tuple[int, int] | None] = {src: None}
        heap: list[tuple[float, int, int | None]] = [(0.0, src, None)]
        done: set[int] = set()
        parent: dict[int, int] = {}
        while heap:
            d, node, _ = heapq.heappop(heap)
            if node in done:
                continue
            done.add(node)
            for e in topo.out_edges(node):
                nd = d + e.traversal_time
                if nd < dist.get(e.target, float("inf")):
                    dist[e.target] = nd
                    parent[e.target] = node
                    heapq.heappush(heap, (nd, e.target, node))
        for goal in topo.nodes:
            if goal == src or goal not in parent:
                continue
            node = goal
            while node != src:
                counts[(parent[node], node)] += 1
                node = parent[node]
    return counts


def place_hazards(
    topo: TopoMap, params: EnvParams, rng: RngStream
) -> tuple[Hazard, ...]:
    """Hazards on distinct (edge, class) slots, keeping the hazard-free
    subgraph strongly connected so every hazard is avoidable.

    With ``placement="trafficked"`` the busiest shortest-path edges are
    targeted first, so deployments actually encounter the hazards.
    """
    taxonomy = default_taxonomy()
    gen = rng.generator
    cf_classes = [c.index for c in taxonomy.failure_classes if c.kind is FailureKind.CATASTROPHIC]
    ncf_classes = [c.index for c in taxonomy.failure_classes if c.kind is FailureKind.NON_CATASTROPHIC]

    n_cf = round(params.hazards * params.cf_fraction)
    wanted = [FailureKind.CATASTROPHIC] * n_cf
    wanted += [FailureKind.NON_CATASTROPHIC] * (params.hazards - n_cf)

    all_edges = {e.key for e in topo.edges}
    if params.placement == "trafficked":
        traffic = _edge_traffic(topo)
        candidates = sorted(all_edges, key=lambda ek: (-traffic[ek], ek))
    else:
        order = gen.permutation(topo.num_edges)
        candidates = [topo.edges[i].key for i in order]
    hazardous: set[tuple[int, int]] = set()
    used_slots: set[tuple[tuple[int, int], int]] = set()
    hazards: list[Hazard] = []

    for kind in wanted:
        classes = cf_classes if kind is FailureKind.CATASTROPHIC else ncf_classes
        placed = False
        for ek in candidates:
            cls = classes[int(gen.integers(len(classes)))] if len(classes) > 1 else classes[0]
            if (ek, cls) in used_slots:
                continue
            if ek not in hazardous and not _strongly_connected(
                topo.num_nodes, {e for e in all_edges if e not in hazardous and e != ek}
            ):
                continue
            hazards.append(
                Hazard(
                    edge=ek,
                    class_index=cls,
                    position=float(gen.uniform(params.pos_min, params.pos_max)),
                    contribution=float(gen.uniform(params.strength_min, params.strength_max)),
                    visibility=float(gen.uniform(params.vis_min, params.vis_max)),
                )
            )
            used_slots.add((ek, cls))
            hazardous.add(ek)
            placed = True
            break
        if not placed:
            break  # map saturated; keep what fits
    return tuple(hazards)


def generate_environment(
    params: EnvParams, fidelity: SensorFidelity, seed: int
) -> SimEnvironment:
    rng = RngStream(seed)
    topo = generate_map(params, rng.substream(0))
    hazards = place_hazards(topo, params, rng.substream(1))
    return SimEnvironment(topo, hazards, fidelity, default_taxonomy())
