"""Seeded deployment episodes for the four planning strategies.

A deployment executes a task list sequentially with persistent agent
state. For every task the agent plans with its own view of edge risk:

* ``cpip``       - failure-belief snapshots, updated online from consensus
                   perception triggers and from intervention signals;
* ``frequentist`` - smoothed per-edge failure frequencies, updated only
                   when failures are experienced;
* ``baseline``   - assumes every edge always succeeds;
* ``oracle``     - plans with the environment's true probabilities.

Traversal outcomes are sampled from the hidden ground truth at a uniform
progress point. Non-catastrophic failures cost a recovery and return the
agent to the edge source; a catastrophic failure ends the episode; too
many consecutive non-catastrophic failures on one edge strand the agent.
All randomness is drawn from substreams keyed by (task, edge, attempt,
channel), so runs are bit-reproducible and agents share failure draws on
common traversals.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import predictor as pred
from .belief import DEFAULT_DELTA, DEFAULT_EPSILON, BeliefPrior, FailureBelief, Perception, init_beliefs
from .failures import FailureKind, FailureTaxonomy
from .predictor import PredictorConfig
from .sensor_sim import RngStream, SimEnvironment, frames_for_traversal, intervention_for_failure
from .ssp import CostParams, NodeState, Policy, Traverse, build_ssp, value_iteration
from .topo_map import TopoMap

LOG_VERSION = 1

# rng substream channels within (task, edge-source, edge-target, attempt)
_CH_FRAMES = 0
_CH_FAILURE = 1


class AgentKind(str, Enum):
    CPIP = "cpip"
    FREQUENTIST = "frequentist"
    BASELINE = "baseline"
    ORACLE = "oracle"


@dataclass(frozen=True)
class Task:
    start: int
    goal: int


@dataclass(frozen=True)
class SimConfig:
    """Every tunable of a deployment, with the module defaults."""

    epsilon: float = DEFAULT_EPSILON
    delta: float = DEFAULT_DELTA
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    ncf_recovery: float = 30.0
    catastrophic_penalty: float = 1000.0
    max_consecutive_ncf: int = 3
    mid_edge_abort: bool = False
    alpha: float = 1.0
    step_cap: int = 1000
    vi_tolerance: float = 1e-8
    vi_max_sweeps: int = 100_000

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon {self.epsilon} outside (0, 0.5)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta {self.delta} outside (0, 1)")
        if not self.ncf_recovery > 0:
            raise ValueError("ncf_recovery must be positive")
        if self.catastrophic_penalty < self.ncf_recovery:
            raise ValueError("catastrophic_penalty below ncf_recovery")
        if self.max_consecutive_ncf < 1 or self.step_cap < 1:
            raise ValueError("max_consecutive_ncf and step_cap must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.vi_tolerance > 0 or self.vi_max_sweeps < 1:
            raise ValueError("invalid value-iteration settings")

    def cost_params(self, taxonomy: FailureTaxonomy) -> CostParams:
        return CostParams(
            recovery_cost={
                c.index: self.ncf_recovery
                for c in taxonomy.failure_classes
                if c.kind is FailureKind.NON_CATASTROPHIC
            },
            catastrophic_penalty=self.catastrophic_penalty,
        )

    def to_json_dict(self) -> dict:
        p = self.predictor
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "predictor": {
                "window": p.window,
                "min_hits": p.min_hits,
                "max_gap": p.max_gap,
                "radius": p.radius,
                "trigger_threshold": p.trigger_threshold,
            },
            "ncf_recovery": self.ncf_recovery,
            "catastrophic_penalty": self.catastrophic_penalty,
            "max_consecutive_ncf": self.max_consecutive_ncf,
            "mid_edge_abort": self.mid_edge_abort,
            "alpha": self.alpha,
            "step_cap": self.step_cap,
            "vi_tolerance": self.vi_tolerance,
            "vi_max_sweeps": self.vi_max_sweeps,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        pdata = data.pop("predictor", {})
        known_p = {"window", "min_hits", "max_gap", "radius", "trigger_threshold"}
        unknown = set(pdata) - known_p
        if unknown:
            raise ValueError(f"unknown predictor config fields {sorted(unknown)}")
        base = cls()
        known = set(base.to_json_dict()) - {"predictor"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        merged = {**{k: getattr(base, k) for k in known}, **data}
        merged["predictor"] = PredictorConfig(
            **{**base.predictor.__dict__, **pdata}
        )
        merged["max_consecutive_ncf"] = int(merged["max_consecutive_ncf"])
        merged["step_cap"] = int(merged["step_cap"])
        merged["vi_max_sweeps"] = int(merged["vi_max_sweeps"])
        merged["mid_edge_abort"] = bool(merged["mid_edge_abort"])
        return cls(**merged)


def frequentist_estimate(
    fail_counts, traversals: int, alpha: float, num_classes: int
) -> np.ndarray:
    """Laplace-smoothed outcome categorical from observed failure counts.

    P(class c) = (count_c + alpha) / (traversals + alpha * L); the success
    class holds the remaining count mass so the vector sums to 1.
    """
    fail_counts = np.asarray(fail_counts, dtype=float)
    if fail_counts.shape != (num_classes - 1,):
        raise ValueError(f"expected {num_classes - 1} failure counts")
    denom = traversals + alpha * num_classes
    if denom <= 0:
        return np.full(num_classes, 1.0 / num_classes)
    success_count = traversals - fail_counts.sum()
    if success_count < 0:
        raise ValueError("failure counts exceed traversal count")
    probs = np.append(fail_counts, success_count) + alpha
    return probs / denom


class AgentState:
    """Learning state that persists across the tasks of one deployment."""

    def __init__(self, kind: AgentKind, env: SimEnvironment, config: SimConfig):
        self.kind = kind
        self.version = 0
        n_fail = env.taxonomy.num_failure_classes
        self.belief: FailureBelief | None = None
        self.fail_counts: np.ndarray | None = None
        self.traversals: np.ndarray | None = None
        if kind is AgentKind.CPIP:
            self.belief = init_beliefs(env.topo, BeliefPrior(config.epsilon), env.taxonomy)
        elif kind is AgentKind.FREQUENTIST:
            self.fail_counts = np.zeros((env.topo.num_edges, n_fail))
            self.traversals = np.zeros(env.topo.num_edges)
        self.triggered: set[tuple[tuple[int, int], int]] = set()
        self.avoided: set[tuple[tuple[int, int], int]] = set()
        self._edge_row = {e.key: i for i, e in enumerate(env.topo.edges)}
        self._plan_cache: dict[int, tuple[int, np.ndarray, Policy]] = {}

    def snapshot_matrix(self, env: SimEnvironment, config: SimConfig) -> np.ndarray:
        n_classes = env.taxonomy.num_classes
        if self.kind is AgentKind.CPIP:
            return self.belief.snapshot_all()
        if self.kind is AgentKind.FREQUENTIST:
            denom = self.traversals + config.alpha * n_classes
            success = self.traversals - self.fail_counts.sum(axis=1)
            counts = np.column_stack([self.fail_counts, success]) + config.alpha
            out = np.empty_like(counts)
            ok = denom > 0
            out[ok] = counts[ok] / denom[ok, None]
            out[~ok] = 1.0 / n_classes
            return out
        if self.kind is AgentKind.BASELINE:
            snap = np.zeros((env.topo.num_edges, n_classes))
            snap[:, -1] = 1.0
            return snap
        return np.array(env.ground_truth, copy=True)

    def plan(self, env: SimEnvironment, goal: int, config: SimConfig):
        """Policy for ``goal`` under current knowledge; solves only when stale.

        Returns (values, policy, fresh) where ``fresh`` marks an actual solve.
        """
        cached = self._plan_cache.get(goal)
        if cached is not None and cached[0] == self.version:
            return cached[1], cached[2], False
        snapshot = self.snapshot_matrix(env, config)
        model = build_ssp(
            env.topo, snapshot, config.cost_params(env.taxonomy), goal, env.taxonomy
        )
        v0 = cached[1] if cached is not None else None
        values, policy = value_iteration(
            model, config.vi_tolerance, config.vi_max_sweeps, v0=v0
        )
        self._plan_cache[goal] = (self.version, values, policy)
        return values, policy, True

    def observe_failure(self, edge: tuple[int, int], class_index: int, config: SimConfig) -> None:
        """Deliver the post-failure intervention to whoever learns from it."""
        if self.kind is AgentKind.CPIP:
            self.belief.update(intervention_for_failure(edge, class_index), delta=config.delta)
            self.version += 1
        elif self.kind is AgentKind.FREQUENTIST:
            self.fail_counts[self._edge_row[edge], class_index] += 1

    def note_attempt(self, edge: tuple[int, int]) -> None:
        """Count one completed traversal attempt (success or failure)."""
        if self.kind is AgentKind.CPIP:
            self.belief.record_traversal(edge)
        elif self.kind is AgentKind.FREQUENTIST:
            self.traversals[self._edge_row[edge]] += 1
            self.version += 1


@dataclass
class EpisodeLog:
    task: Task
    agent: AgentKind
    outcome: str  # completed | catastrophic_failure | stuck
    duration: float
    events: list[dict]

    def to_json_dict(self, index: int) -> dict:
        return {
            "v": LOG_VERSION,
            "kind": "episode",
            "index": index,
            "start": self.task.start,
            "goal": self.task.goal,
            "agent": self.agent.value,
            "outcome": self.outcome,
            "duration": self.duration,
            "events": self.events,
        }


@dataclass
class DeploymentLog:
    agent: AgentKind
    seed: int
    tasks: list[Task]
    episodes: list[EpisodeLog]
    config: dict
    env_fingerprint: str

    def header_dict(self) -> dict:
        return {
            "v": LOG_VERSION,
            "kind": "header",
            "agent": self.agent.value,
            "seed": self.seed,
            "n_tasks": len(self.tasks),
            "tasks": [[t.start, t.goal] for t in self.tasks],
            "env_fingerprint": self.env_fingerprint,
            "config": self.config,
        }

    def save(self, path: str | Path) -> None:
        lines = [json.dumps(self.header_dict(), sort_keys=True)]
        lines.extend(
            json.dumps(ep.to_json_dict(i), sort_keys=True)
            for i, ep in enumerate(self.episodes)
        )
        Path(path).write_text("\n".join(lines) + "\n")


def load_deployment_log(path: str | Path) -> DeploymentLog:
    lines = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ValueError(f"{path}: missing header line")
    head = lines[0]
    if head.get("v") != LOG_VERSION:
        raise ValueError(f"{path}: unsupported log version {head.get('v')}")
    tasks = [Task(s, g) for s, g in head["tasks"]]
    episodes = []
    for row in lines[1:]:
        if row.get("kind") != "episode":
            continue
        episodes.append(
            EpisodeLog(
                task=Task(row["start"], row["goal"]),
                agent=AgentKind(row["agent"]),
                outcome=row["outcome"],
                duration=row["duration"],
                events=row["events"],
            )
        )
    return DeploymentLog(
        agent=AgentKind(head["agent"]),
        seed=head["seed"],
        tasks=tasks,
        episodes=episodes,
        config=head["config"],
        env_fingerprint=head["env_fingerprint"],
    )


def environment_fingerprint(env: SimEnvironment) -> str:
    blob = json.dumps(env.to_json_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _route_edges(route: list[int]) -> set[tuple[int, int]]:
    return set(zip(route, route[1:]))


def _choose_class(probs: np.ndarray, gen: np.random.Generator) -> int:
    return int(np.searchsorted(np.cumsum(probs), gen.random(), side="right").clip(0, len(probs) - 1))


def run_task(
    env: SimEnvironment,
    agent: AgentKind,
    task: Task,
    state: AgentState,
    rng: RngStream,
    config: SimConfig,
) -> tuple[EpisodeLog, AgentState]:
    """Execute one navigation task; returns its log and the evolved state."""
    topo = env.topo
    taxonomy = env.taxonomy
    n_fail = taxonomy.num_failure_classes
    edge_row = {e.key: i for i, e in enumerate(topo.edges)}

    current = task.start
    clock = 0.0
    events: list[dict] = []
    outcome: str | None = None
    ncf_edge: tuple[int, int] | None = None
    ncf_run = 0
    attempt_counter: dict[tuple[int, int], int] = {}

    def note_replan(policy: Policy) -> None:
        route = policy.success_route(current)
        events.append({"type": "replan", "t": clock, "at": current, "route": route})

    def note_avoidances(chosen: tuple[int, int] | None) -> None:
        # A trigger on edge e counts as an avoided failure once the agent,
        # standing at e's source after re-planning, picks a different edge.
        for (e, c) in sorted(state.triggered):
            if e[0] == current and e != chosen and (e, c) not in state.avoided:
                state.avoided.add((e, c))
                events.append(
                    {"type": "avoided", "t": clock, "edge": list(e), "class": c}
                )

    for _ in range(config.step_cap):
        if current == task.goal:
            outcome = "completed"
            break
        values, policy, fresh = state.plan(env, task.goal, config)
        action = policy.action(NodeState(current))
        if not isinstance(action, Traverse):
            outcome = "stuck"
            events.append({"type": "unreachable", "t": clock, "at": current})
            break
        if fresh:
            note_replan(policy)
        edge = topo.edge(*action.edge)
        ek = edge.key
        note_avoidances(chosen=ek)
        attempt = attempt_counter.get(ek, 0)
        attempt_counter[ek] = attempt + 1
        stream = rng.substream(ek[0], ek[1], attempt)

        # Perception runs only for the belief-driven agent; the stream stops
        # at the first consensus trigger (one belief update per traversal).
        aborted = False
        if agent is AgentKind.CPIP:
            frames = frames_for_traversal(
                env.hazards_on(ek),
                env.fidelity,
                edge,
                stream.substream(_CH_FRAMES),
                taxonomy,
                base_prob=config.epsilon,
            )
            pstate = pred.new_state(n_fail)
            hit = None
            for frame in frames:
                pstate, est = pred.ingest_frame(pstate, frame, config.predictor)
                if est.triggered:
                    hit = (frame, est)
                    break
            if hit is not None:
                frame, est = hit
                u_trig = (frame.frame_index + 0.5) / len(frames)
                trig_classes = [
                    c for c, p in enumerate(est.probs)
                    if p > config.predictor.trigger_threshold
                ]
                # Gated-out classes carry no information; feeding the prior
                # for them leaves their beliefs untouched.
                state.belief.update(
                    Perception(
                        ek,
                        tuple(p if p > 0.0 else config.epsilon for p in est.probs),
                    ),
                )
                state.version += 1
                state.triggered.update((ek, c) for c in trig_classes)
                events.append(
                    {
                        "type": "trigger",
                        "t": clock + u_trig * edge.traversal_time,
                        "edge": list(ek),
                        "classes": trig_classes,
                        "probs": list(est.probs),
                        "u": u_trig,
                    }
                )
                if config.mid_edge_abort:
                    new_values, new_policy, fresh = state.plan(env, task.goal, config)
                    snap = state.belief.transition_snapshot(ek)
                    src = new_policy.model.state_index[NodeState(ek[0])]
                    tgt = new_policy.model.state_index[NodeState(ek[1])]
                    costs = config.cost_params(taxonomy)
                    continue_cost = (1.0 - u_trig) * edge.traversal_time
                    continue_cost += snap[n_fail] * new_values[tgt]
                    for c in range(n_fail):
                        continue_cost += snap[c] * (
                            costs.cost_for(taxonomy, c) + new_values[src]
                        )
                    abort_cost = u_trig * edge.traversal_time + new_values[src]
                    if abort_cost < continue_cost:
                        aborted = True
                        clock += 2.0 * u_trig * edge.traversal_time
                        events.append(
                            {"type": "abort", "t": clock, "edge": list(ek), "u": u_trig}
                        )
                        ncf_edge, ncf_run = None, 0
                        if fresh:
                            note_replan(new_policy)

        if aborted:
            continue

        fail_gen = stream.substream(_CH_FAILURE).generator
        u_fail = float(fail_gen.random())
        gt = env.ground_truth[edge_row[ek]]
        drawn = _choose_class(gt, fail_gen)
        state.note_attempt(ek)

        if drawn == n_fail:  # success
            clock += edge.traversal_time
            events.append({"type": "traverse", "t": clock, "edge": list(ek)})
            current = edge.target
            ncf_edge, ncf_run = None, 0
            continue

        kind = taxonomy.classes[drawn].kind
        clock += u_fail * edge.traversal_time
        events.append(
            {
                "type": "failure",
                "t": clock,
                "edge": list(ek),
                "class": drawn,
                "u": u_fail,
            }
        )
        state.observe_failure(ek, drawn, config)
        if kind is FailureKind.CATASTROPHIC:
            outcome = "catastrophic_failure"
            break
        clock += config.ncf_recovery
        events.append({"type": "recovery", "t": clock, "edge": list(ek), "class": drawn})
        if ncf_edge == ek:
            ncf_run += 1
        else:
            ncf_edge, ncf_run = ek, 1
        if ncf_run >= config.max_consecutive_ncf:
            outcome = "stuck"
            break
    else:
        outcome = "stuck"
        events.append({"type": "step_cap", "t": clock})

    if outcome is None:
        outcome = "stuck"
    return EpisodeLog(task=task, agent=agent, outcome=outcome, duration=clock, events=events), state


def run_deployment(
    env: SimEnvironment,
    agent: AgentKind | str,
    tasks: list[Task],
    seed: int,
    config: SimConfig | None = None,
) -> DeploymentLog:
    """Run ``tasks`` in order with persistent agent state; seeded and
    bit-reproducible."""
    agent = AgentKind(agent)
    config = config or SimConfig()
    for i, task in enumerate(tasks):
        if not env.topo.reachable(task.start, task.goal):
            raise ValueError(f"task {i}: goal {task.goal} unreachable from {task.start}")
    state = AgentState(agent, env, config)
    rng = RngStream(seed)
    episodes = []
    for i, task in enumerate(tasks):
        log, state = run_task(env, agent, task, state, rng.substream(i), config)
        episodes.append(log)
    return DeploymentLog(
        agent=agent,
        seed=seed,
        tasks=list(tasks),
        episodes=episodes,
        config=config.to_json_dict(),
        env_fingerprint=environment_fingerprint(env),
    )


def generate_tasks(topo: TopoMap, count: int, rng: RngStream) -> list[Task]:
    """Uniform random reachable (start, goal) pairs, start != goal."""
    gen = rng.generator
    nodes = topo.nodes
    tasks: list[Task] = []
    guard = 0
    while len(tasks) < count:
        guard += 1
        if guard > 1000 * (count + 10):
            raise ValueError("could not sample enough reachable tasks")
        s = int(nodes[gen.integers(len(nodes))])
        g = int(nodes[gen.integers(len(nodes))])
        if s != g and topo.reachable(s, g):
            tasks.append(Task(s, g))
    return tasks
