"""Synthetic stand-in for introspective perception.

Environments place hazards on edges; each hazard has a class, a position
along the edge (normalized progress), a contribution to the edge's true
failure probability, and a visibility window over which an approaching
agent can perceive it. `frames_for_traversal` turns an edge's hazards
into the per-frame stream a learned perception stack would produce:
noisy global class probabilities centered on the belief prior, true
detections of visible hazards with a per-frame hit rate, and Poisson
false detections.

Hazard positions live in [0, 1] edge progress; detection coordinates
embed that scalar as (progress, class index) so the tracklet machinery
has 2-D points to associate. All randomness flows through keyed,
counter-based substreams so identical seeds reproduce identical streams
regardless of execution order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .belief import DEFAULT_EPSILON, Intervention
from .failures import FailureTaxonomy, default_taxonomy
from .predictor import Detection, FrameEstimate
from .topo_map import TopoMap, map_from_json_dict

SUCCESS_FLOOR = 1e-3  # minimum ground-truth success probability per edge


@dataclass(frozen=True)
class Hazard:
    edge: tuple[int, int]
    class_index: int
    position: float           # along-edge location in [0, 1]
    contribution: float       # added failure probability in (0, 1]
    visibility: float         # perceivable over [position - visibility, position]

    def __post_init__(self) -> None:
        if not 0.0 <= self.position <= 1.0:
            raise ValueError(f"hazard position {self.position} outside [0, 1]")
        if not 0.0 < self.contribution <= 1.0:
            raise ValueError(f"hazard contribution {self.contribution} outside (0, 1]")
        if not 0.0 < self.visibility <= 1.0:
            raise ValueError(f"hazard visibility {self.visibility} outside (0, 1]")


@dataclass(frozen=True)
class SensorFidelity:
    tpr: float = 0.95            # per-frame true-detection probability
    fpr: float = 0.05            # expected false detections per frame
    global_noise_sd: float = 0.05
    frame_rate: float = 5.0      # Hz

    def __post_init__(self) -> None:
        if not 0.0 <= self.tpr <= 1.0:
            raise ValueError(f"tpr {self.tpr} outside [0, 1]")
        if self.fpr < 0.0:
            raise ValueError(f"fpr {self.fpr} negative")
        if self.global_noise_sd < 0.0:
            raise ValueError("global_noise_sd negative")
        if not self.frame_rate > 0.0:
            raise ValueError("frame_rate must be positive")


class RngStream:
    """Deterministic random stream addressed by a key path.

    Streams are backed by the counter-based Philox generator keyed through
    a SeedSequence on (seed, *key), so any substream can be regenerated
    independently of draw order elsewhere.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen: np.random.Generator | None = None

    def substream(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(k) for k in key))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            seq = np.random.SeedSequence([self.seed & 0xFFFFFFFF, *(k & 0xFFFFFFFF for k in self.key)])
            self._gen = np.random.Generator(np.random.Philox(seq))
        return self._gen


def frames_for_traversal(
    hazards: list[Hazard],
    fidelity: SensorFidelity,
    edge,
    rng: RngStream,
    taxonomy: FailureTaxonomy | None = None,
    base_prob: float = DEFAULT_EPSILON,
) -> list[FrameEstimate]:
    """Generate the full frame stream for one traversal of ``edge``.

    Frames sit at progress midpoints (k + 0.5) / n with
    n = ceil(t_e * frame_rate). A hazard is perceivable at progress u when
    position - visibility <= u <= position; while perceivable it raises its
    class's global probability by its contribution and yields a detection
    at (position, class index) with probability tpr per frame.
    """
    taxonomy = taxonomy or default_taxonomy()
    for h in hazards:
        if h.edge != edge.key:
            raise ValueError(f"hazard on {h.edge} does not belong to edge {edge.key}")
        if not 0 <= h.class_index < taxonomy.num_failure_classes:
            raise ValueError(f"hazard class {h.class_index} out of range")

    n_frames = math.ceil(edge.traversal_time * fidelity.frame_rate)
    n_fail = taxonomy.num_failure_classes
    gen = rng.generator
    u = (np.arange(n_frames) + 0.5) / n_frames

    hazards = sorted(hazards, key=lambda h: (h.position, h.class_index, h.contribution))
    visible = np.zeros((len(hazards), n_frames), dtype=bool)
    contrib = np.zeros((n_fail, n_frames))
    for i, h in enumerate(hazards):
        visible[i] = (u >= h.position - h.visibility) & (u <= h.position)
        contrib[h.class_index] += np.where(visible[i], h.contribution, 0.0)

    hits = gen.random((len(hazards), n_frames)) < fidelity.tpr if hazards else np.zeros((0, n_frames), bool)
    n_false = gen.poisson(fidelity.fpr, n_frames) if fidelity.fpr > 0 else np.zeros(n_frames, dtype=np.int64)
    noise = (
        gen.normal(0.0, fidelity.global_noise_sd, (n_fail, n_frames))
        if fidelity.global_noise_sd > 0
        else np.zeros((n_fail, n_frames))
    )
    global_probs = np.clip(base_prob + contrib + noise, 0.0, 1.0)
    # failure-class mass cannot exceed 1 (no room left for the success class)
    mass = global_probs.sum(axis=0)
    over = mass > 1.0
    if np.any(over):
        global_probs[:, over] /= mass[over]

    frames = []
    for k in range(n_frames):
        detections = [
            Detection(
                class_index=h.class_index,
                position=(h.position, float(h.class_index)),
                score=1.0,
            )
            for i, h in enumerate(hazards)
            if visible[i, k] and hits[i, k]
        ]
        for _ in range(int(n_false[k])):
            detections.append(
                Detection(
                    class_index=int(gen.integers(n_fail)),
                    position=(float(gen.random()), float(gen.random())),
                    score=float(gen.uniform(0.1, 0.9)),
                )
            )
        frames.append(
            FrameEstimate(
                frame_index=k,
                global_probs=tuple(float(p) for p in global_probs[:, k]),
                detections=tuple(detections),
            )
        )
    return frames


def intervention_for_failure(edge: tuple[int, int], class_index: int, taxonomy: FailureTaxonomy | None = None) -> Intervention:
    """Wrap an observed failure as the supervisory intervention signal."""
    taxonomy = taxonomy or default_taxonomy()
    if not 0 <= class_index < taxonomy.num_failure_classes:
        raise ValueError(f"class {class_index} is not a failure class")
    return Intervention(edge=edge, class_index=class_index)


def ground_truth_matrix(
    topo: TopoMap, hazards: list[Hazard], taxonomy: FailureTaxonomy | None = None
) -> np.ndarray:
    """True outcome categorical per edge (map edge order, success last).

    Per class: P = 1 - prod(1 - contribution) over that class's hazards.
    If the combined failure mass exceeds 1 - SUCCESS_FLOOR it is rescaled
    proportionally, mirroring the belief snapshot rule.
    """
    taxonomy = taxonomy or default_taxonomy()
    n_fail = taxonomy.num_failure_classes
    edge_row = {e.key: i for i, e in enumerate(topo.edges)}
    survive = np.ones((topo.num_edges, n_fail))
    for h in hazards:
        if h.edge not in edge_row:
            raise ValueError(f"hazard on unknown edge {h.edge}")
        survive[edge_row[h.edge], h.class_index] *= 1.0 - h.contribution
    fail = 1.0 - survive
    total = fail.sum(axis=1)
    over = total > 1.0 - SUCCESS_FLOOR
    if np.any(over):
        fail[over] *= ((1.0 - SUCCESS_FLOOR) / total[over])[:, None]
    return np.column_stack([fail, 1.0 - fail.sum(axis=1)])


@dataclass(frozen=True)
class SimEnvironment:
    """A map plus hidden hazards and the sensing fidelity used to reveal them."""

    topo: TopoMap
    hazards: tuple[Hazard, ...]
    fidelity: SensorFidelity
    taxonomy: FailureTaxonomy

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_ground_truth", ground_truth_matrix(self.topo, list(self.hazards), self.taxonomy)
        )

    @property
    def ground_truth(self) -> np.ndarray:
        return self._ground_truth  # type: ignore[attr-defined]

    def hazards_on(self, edge: tuple[int, int]) -> list[Hazard]:
        return [h for h in self.hazards if h.edge == edge]

    def to_json_dict(self) -> dict:
        data = self.topo.to_json_dict()
        data["hazards"] = [
            {
                "src": h.edge[0],
                "dst": h.edge[1],
                "class": self.taxonomy.classes[h.class_index].name,
                "pos": h.position,
                "p": h.contribution,
                "vis": h.visibility,
            }
            for h in self.hazards
        ]
        data["fidelity"] = {
            "tpr": self.fidelity.tpr,
            "fpr": self.fidelity.fpr,
            "global_noise_sd": self.fidelity.global_noise_sd,
            "frame_rate": self.fidelity.frame_rate,
        }
        return data


def environment_from_json_dict(data: dict, where: str = "environment") -> SimEnvironment:
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected an object")
    unknown = set(data) - {"nodes", "edges", "hazards", "fidelity"}
    if unknown:
        raise ValueError(f"{where}: unknown fields {sorted(unknown)}")
    topo = map_from_json_dict(
        {"nodes": data.get("nodes", []), "edges": data.get("edges", [])}, where=where
    )
    taxonomy = default_taxonomy()

    hazards = []
    for i, entry in enumerate(data.get("hazards", [])):
        loc = f"{where}.hazards[{i}]"
        extra = set(entry) - {"src", "dst", "class", "pos", "p", "vis"}
        if extra:
            raise ValueError(f"{loc}: unknown fields {sorted(extra)}")
        try:
            cls = taxonomy.by_name(str(entry["class"]))
        except KeyError:
            raise ValueError(f"{loc}: unknown class {entry['class']!r}") from None
        if not cls.is_failure:
            raise ValueError(f"{loc}: hazards cannot have the success class")
        if not topo.has_edge(int(entry["src"]), int(entry["dst"])):
            raise ValueError(f"{loc}: no edge ({entry['src']}, {entry['dst']})")
        try:
            hazards.append(
                Hazard(
                    edge=(int(entry["src"]), int(entry["dst"])),
                    class_index=cls.index,
                    position=float(entry["pos"]),
                    contribution=float(entry["p"]),
                    visibility=float(entry["vis"]),
                )
            )
        except ValueError as exc:
            raise ValueError(f"{loc}: {exc}") from None

    fid = data.get("fidelity", {})
    extra = set(fid) - {"tpr", "fpr", "global_noise_sd", "frame_rate"}
    if extra:
        raise ValueError(f"{where}.fidelity: unknown fields {sorted(extra)}")
    try:
        fidelity = SensorFidelity(
            tpr=float(fid.get("tpr", 0.95)),
            fpr=float(fid.get("fpr", 0.05)),
            global_noise_sd=float(fid.get("global_noise_sd", 0.05)),
            frame_rate=float(fid.get("frame_rate", 5.0)),
        )
    except ValueError as exc:
        raise ValueError(f"{where}.fidelity: {exc}") from None
    return SimEnvironment(topo, tuple(hazards), fidelity, taxonomy)


def load_environment(path: str | Path) -> SimEnvironment:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: parse failure: {exc}") from None
    return environment_from_json_dict(data, where=str(path))


def save_environment(env: SimEnvironment, path: str | Path) -> None:
    Path(path).write_text(json.dumps(env.to_json_dict(), sort_keys=True) + "\n")
