"""Stochastic shortest path model over a topological map, plus solvers.

States are the map nodes plus one failure state per (edge, failure class).
Traversing an edge costs its expected time and lands on the target node
with the believed success probability, or in one of the edge's failure
states with the believed per-class failure probability. A failure state
has a single recovery action that returns deterministically to the edge's
source node at the class recovery cost (the catastrophic penalty for
catastrophic classes, which keeps the model proper even though the
simulator ends an episode on a catastrophic event). The goal node is
absorbing with zero cost.

The solver is synchronous value iteration on the subset of states from
which the goal is reachable, vectorized through a sparse transition
matrix; states that cannot reach the goal keep an infinite value and no
action. Ties are broken by action order (traverse actions sorted by
target id), so identical inputs always yield identical policies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .failures import FailureKind, FailureTaxonomy
from .topo_map import TopoMap

VI_TOLERANCE = 1e-8
VI_MAX_SWEEPS = 100_000
_DIVERGENCE_CAP = 1e12
_PROB_TOL = 1e-9


class PlanningError(RuntimeError):
    pass


class NoConvergence(PlanningError):
    pass


class ImproperPolicy(PlanningError):
    pass


@dataclass(frozen=True)
class NodeState:
    node: int


@dataclass(frozen=True)
class FailureState:
    edge: tuple[int, int]
    class_index: int


SspState = NodeState | FailureState


@dataclass(frozen=True)
class Traverse:
    edge: tuple[int, int]


@dataclass(frozen=True)
class Recover:
    class_index: int


SspAction = Traverse | Recover


@dataclass(frozen=True)
class CostParams:
    """Recovery costs per failure class, in seconds.

    ``recovery_cost`` maps non-catastrophic class indices to their expected
    recovery time; catastrophic classes always cost ``catastrophic_penalty``.
    """

    recovery_cost: dict[int, float]
    catastrophic_penalty: float = 1000.0

    def __post_init__(self) -> None:
        for c, cost in self.recovery_cost.items():
            if not cost > 0:
                raise ValueError(f"recovery cost for class {c} must be positive")
        if not self.catastrophic_penalty > 0:
            raise ValueError("catastrophic_penalty must be positive")
        if self.recovery_cost and self.catastrophic_penalty < max(self.recovery_cost.values()):
            raise ValueError("catastrophic_penalty below a recovery cost")

    @classmethod
    def defaults(cls, taxonomy: FailureTaxonomy) -> "CostParams":
        return cls(
            recovery_cost={
                c.index: 30.0
                for c in taxonomy.failure_classes
                if c.kind is FailureKind.NON_CATASTROPHIC
            },
            catastrophic_penalty=1000.0,
        )

    def cost_for(self, taxonomy: FailureTaxonomy, class_index: int) -> float:
        cls = taxonomy.classes[class_index]
        if cls.kind is FailureKind.CATASTROPHIC:
            return self.catastrophic_penalty
        return self.recovery_cost[class_index]


@dataclass
class SspModel:
    topo: TopoMap
    taxonomy: FailureTaxonomy
    costs: CostParams
    goal: int
    states: tuple[SspState, ...]
    state_index: dict[SspState, int]
    goal_index: int
    # state-major flattened (state, action) rows
    row_state: np.ndarray
    row_cost: np.ndarray
    transition: sparse.csr_matrix
    row_range: np.ndarray  # (n_states, 2) row slice per state
    actions: tuple[tuple[SspAction, ...], ...] = field(repr=False)

    @property
    def num_states(self) -> int:
        return len(self.states)

    def actions_for(self, state: int | SspState) -> tuple[SspAction, ...]:
        if not isinstance(state, int):
            state = self.state_index[state]
        return self.actions[state]

    def row_of(self, state: int, action_pos: int) -> int:
        start, end = self.row_range[state]
        row = start + action_pos
        if not start <= row < end:
            raise IndexError(f"state {state} has no action #{action_pos}")
        return int(row)

    def outcome_probs(self, row: int) -> dict[int, float]:
        """Stored successor distribution of one (state, action) row."""
        sl = slice(self.transition.indptr[row], self.transition.indptr[row + 1])
        return dict(zip(self.transition.indices[sl], self.transition.data[sl]))

    def to_debug_dict(self) -> dict:
        """JSON-able model dump for golden-file tests."""
        out = []
        for s, state in enumerate(self.states):
            start, end = self.row_range[s]
            rows = []
            for r in range(start, end):
                action = self.actions[s][r - start]
                rows.append(
                    {
                        "action": _action_label(action),
                        "cost": float(self.row_cost[r]),
                        "outcomes": {
                            _state_label(self.states[t]): float(p)
                            for t, p in sorted(self.outcome_probs(r).items())
                        },
                    }
                )
            out.append({"state": _state_label(state), "actions": rows})
        return {"goal": self.goal, "states": out}


def _state_label(state: SspState) -> str:
    if isinstance(state, NodeState):
        return f"node:{state.node}"
    return f"fail:{state.edge[0]}-{state.edge[1]}:{state.class_index}"


def debug_dump(model: "SspModel", values=None, policy=None) -> dict:
    """Model plus solution as one JSON-able blob for golden-file tests."""
    out = model.to_debug_dict()
    if values is not None:
        out["values"] = {
            _state_label(s): (float(values[i]) if np.isfinite(values[i]) else None)
            for i, s in enumerate(model.states)
        }
    if policy is not None:
        out["policy"] = {
            _state_label(s): (
                _action_label(policy.action(i)) if policy.action(i) is not None else None
            )
            for i, s in enumerate(model.states)
        }
    return out


def _action_label(action: SspAction) -> str:
    if isinstance(action, Traverse):
        return f"traverse:{action.edge[0]}-{action.edge[1]}"
    return f"recover:{action.class_index}"


def build_ssp(
    topo: TopoMap,
    snapshot,
    costs: CostParams,
    goal: int,
    taxonomy: FailureTaxonomy,
) -> SspModel:
    """Assemble the planning SSP from a map and a belief snapshot.

    ``snapshot`` is either an array of shape (num_edges, num_classes) in
    map edge order or a mapping from (source, target) to an outcome
    categorical with success last. Every edge must be covered and every
    row must sum to 1 within 1e-9.
    """
    if not topo.has_node(goal):
        raise ValueError(f"goal {goal} not in map")
    n_fail = taxonomy.num_failure_classes
    probs = _snapshot_matrix(topo, snapshot, taxonomy.num_classes)

    states: list[SspState] = [NodeState(n) for n in topo.nodes]
    for e in topo.edges:
        states.extend(FailureState(e.key, c) for c in range(n_fail))
    state_index = {s: i for i, s in enumerate(states)}
    goal_index = state_index[NodeState(goal)]
    edge_row = {e.key: i for i, e in enumerate(topo.edges)}

    actions: list[tuple[SspAction, ...]] = []
    cost_list: list[float] = []
    coo_rows: list[int] = []
    coo_cols: list[int] = []
    coo_vals: list[float] = []
    row_range = np.zeros((len(states), 2), dtype=np.int64)
    row = 0

    for s, state in enumerate(states):
        row_range[s, 0] = row
        if s == goal_index:
            actions.append(())
            row_range[s, 1] = row
            continue
        if isinstance(state, NodeState):
            acts = []
            for e in topo.out_edges(state.node):
                p = probs[edge_row[e.key]]
                acts.append(Traverse(e.key))
                cost_list.append(e.traversal_time)
                if p[n_fail] > 0.0:
                    coo_rows.append(row)
                    coo_cols.append(state_index[NodeState(e.target)])
                    coo_vals.append(p[n_fail])
                for c in range(n_fail):
                    if p[c] > 0.0:
                        coo_rows.append(row)
                        coo_cols.append(state_index[FailureState(e.key, c)])
                        coo_vals.append(p[c])
                row += 1
            actions.append(tuple(acts))
        else:
            actions.append((Recover(state.class_index),))
            cost_list.append(costs.cost_for(taxonomy, state.class_index))
            coo_rows.append(row)
            coo_cols.append(state_index[NodeState(state.edge[0])])
            coo_vals.append(1.0)
            row += 1
        row_range[s, 1] = row

    transition = sparse.csr_matrix(
        (coo_vals, (coo_rows, coo_cols)), shape=(row, len(states))
    )
    row_state = np.repeat(np.arange(len(states)), row_range[:, 1] - row_range[:, 0])
    return SspModel(
        topo=topo,
        taxonomy=taxonomy,
        costs=costs,
        goal=goal,
        states=tuple(states),
        state_index=state_index,
        goal_index=goal_index,
        row_state=row_state,
        row_cost=np.asarray(cost_list),
        transition=transition,
        row_range=row_range,
        actions=tuple(actions),
    )


def _snapshot_matrix(topo: TopoMap, snapshot, num_classes: int) -> np.ndarray:
    if isinstance(snapshot, np.ndarray):
        probs = np.asarray(snapshot, dtype=float)
        if probs.shape != (topo.num_edges, num_classes):
            raise ValueError(
                f"snapshot shape {probs.shape} != ({topo.num_edges}, {num_classes})"
            )
    else:
        probs = np.empty((topo.num_edges, num_classes))
        for i, e in enumerate(topo.edges):
            if e.key not in snapshot:
                raise ValueError(f"snapshot missing edge {e.key}")
            row = np.asarray(snapshot[e.key], dtype=float)
            if row.shape != (num_classes,):
                raise ValueError(f"snapshot for edge {e.key} has shape {row.shape}")
            probs[i] = row
    if np.any(probs < 0.0):
        raise ValueError("snapshot contains negative probabilities")
    sums = probs.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > _PROB_TOL)[0]
    if bad.size:
        e = topo.edges[bad[0]].key
        raise ValueError(f"snapshot for edge {e} sums to {sums[bad[0]]:.12f}, not 1")
    return probs


@dataclass
class Policy:
    """Action choice per state, stored as an index into the state's actions."""

    model: SspModel
    choice: np.ndarray  # action position per state, -1 where no action

    def action(self, state: SspState | int) -> SspAction | None:
        if not isinstance(state, int):
            state = self.model.state_index[state]
        pos = int(self.choice[state])
        if pos < 0:
            return None
        return self.model.actions[state][pos]

    def with_action(self, state: SspState | int, action: SspAction) -> "Policy":
        """Copy of this policy taking ``action`` in ``state`` (for what-ifs)."""
        if not isinstance(state, int):
            state = self.model.state_index[state]
        try:
            pos = self.model.actions[state].index(action)
        except ValueError:
            raise ValueError(f"{action} not admissible in state {state}") from None
        choice = self.choice.copy()
        choice[state] = pos
        return Policy(self.model, choice)

    def success_route(self, start: int) -> list[int]:
        """Node sequence followed when every traversal succeeds."""
        model = self.model
        route = [start]
        node = start
        seen = {start}
        while node != model.goal:
            action = self.action(NodeState(node))
            if not isinstance(action, Traverse):
                raise ImproperPolicy(f"no traverse action at node {node}")
            node = action.edge[1]
            if node in seen:
                raise ImproperPolicy(f"policy cycles at node {node}")
            seen.add(node)
            route.append(node)
        return route


def _solvable_mask(model: SspModel) -> np.ndarray:
    """States from which the goal is reachable under some action sequence."""
    n = model.num_states
    mask = np.zeros(n, dtype=bool)
    mask[model.goal_index] = True
    tr = model.transition
    if tr.nnz == 0:
        return mask
    src_state = np.repeat(model.row_state, np.diff(tr.indptr))
    reversed_adj = sparse.csr_matrix(
        (np.ones(tr.nnz, dtype=np.int8), (tr.indices, src_state)), shape=(n, n)
    )
    order = sparse.csgraph.breadth_first_order(
        reversed_adj, model.goal_index, directed=True, return_predecessors=False
    )
    mask[order] = True
    return mask


def value_iteration(
    model: SspModel,
    tolerance: float = VI_TOLERANCE,
    max_iters: int = VI_MAX_SWEEPS,
    v0: np.ndarray | None = None,
) -> tuple[np.ndarray, Policy]:
    """Solve the SSP; returns optimal values and the greedy policy.

    Values are infinite (and the policy empty) for states that cannot
    reach the goal. ``v0`` warm-starts the sweep, which shortens
    re-planning after small belief changes.
    """
    n = model.num_states
    solvable = _solvable_mask(model)

    # Keep only rows fully supported on solvable states; every solvable
    # non-goal state retains at least one (the first hop of a goal path).
    tr = model.transition
    if tr.shape[0] == 0:
        policy = Policy(model, np.full(n, -1, dtype=np.int64))
        values = np.full(n, np.inf)
        values[model.goal_index] = 0.0
        return values, policy
    row_ok = np.minimum.reduceat(
        solvable[tr.indices].astype(np.int8), tr.indptr[:-1]
    ).astype(bool)
    row_ok &= solvable[model.row_state]
    rows = np.nonzero(row_ok)[0]
    if rows.size == 0 and np.any(solvable & (np.arange(n) != model.goal_index)):
        raise NoConvergence("no admissible actions among solvable states")

    sub_tr = tr[rows]
    sub_cost = model.row_cost[rows]
    sub_state = model.row_state[rows]
    # Group surviving rows by state (they stay state-major).
    group_starts = np.nonzero(np.diff(sub_state, prepend=-1))[0]
    group_state = sub_state[group_starts]

    values = np.full(n, np.inf)
    values[solvable] = 0.0
    if v0 is not None:
        prev = np.asarray(v0, dtype=float)
        if prev.shape == (n,):
            finite = np.isfinite(prev) & solvable
            values[finite] = prev[finite]
    values[model.goal_index] = 0.0

    for _ in range(max_iters):
        q = sub_cost + sub_tr @ values
        new_values = values.copy()
        new_values[group_state] = np.minimum.reduceat(q, group_starts)
        new_values[model.goal_index] = 0.0
        residual = np.max(np.abs(new_values[solvable] - values[solvable]))
        values = new_values
        if residual < tolerance:
            break
        if values[solvable].max() > _DIVERGENCE_CAP:
            raise NoConvergence(
                "value iteration diverged; goal unreachable from some state"
            )
    else:
        raise NoConvergence(f"no convergence within {max_iters} sweeps")

    # Greedy policy; argmin takes the first minimum, and rows are already
    # in deterministic action order, so ties break by lowest target id.
    q = sub_cost + sub_tr @ values
    choice = np.full(n, -1, dtype=np.int64)
    bounds = np.append(group_starts, q.size)
    for g, s in enumerate(group_state):
        if s == model.goal_index:
            continue
        block = q[bounds[g] : bounds[g + 1]]
        pos = int(np.argmin(block))
        # Map back to the state's full action list (some rows may be filtered).
        full_rows = np.nonzero(row_ok[model.row_range[s, 0] : model.row_range[s, 1]])[0]
        choice[s] = int(full_rows[pos])
    return values, Policy(model, choice)


def expected_cost(policy: Policy, model: SspModel, start: SspState | int) -> float:
    """Expected cumulative cost of following ``policy`` from ``start``.

    Evaluates the policy's linear system restricted to the states reachable
    from ``start`` under the policy; raises ImproperPolicy if the system is
    singular or produces a non-finite or negative solution.
    """
    if not isinstance(start, int):
        start = model.state_index[start]
    if start == model.goal_index:
        return 0.0

    # Forward closure under the policy.
    reach: list[int] = []
    seen = {model.goal_index}
    stack = [start]
    rows: dict[int, int] = {}
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        seen.add(s)
        pos = int(policy.choice[s])
        if pos < 0:
            raise ImproperPolicy(f"policy undefined at state {model.states[s]}")
        row = model.row_of(s, pos)
        rows[s] = row
        reach.append(s)
        for t in model.outcome_probs(row):
            if t not in seen:
                stack.append(t)

    index = {s: i for i, s in enumerate(reach)}
    k = len(reach)
    a = np.eye(k)
    b = np.empty(k)
    for s, i in index.items():
        row = rows[s]
        b[i] = model.row_cost[row]
        for t, p in model.outcome_probs(row).items():
            if t != model.goal_index:
                a[i, index[t]] -= p
    try:
        v = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise ImproperPolicy(f"policy evaluation failed: {exc}") from None
    residual = np.max(np.abs(a @ v - b))
    if not np.all(np.isfinite(v)) or np.any(v < -1e-9) or residual > 1e-6 * (1 + np.max(np.abs(b))):
        raise ImproperPolicy("policy evaluation diverged; policy is improper")
    return float(v[index[start]])
