"""Consensus gating of perception outputs before they touch beliefs.

Two streams arrive per frame: a global per-failure-class probability
vector and a list of localized detections. The global stream is smoothed
with a sliding mean filter; detections are associated into tracklets by
greedy nearest-neighbor matching (same class only, within a radius). A
tracklet is *active* once it has accumulated enough hits and was seen
recently. The published probability for a class is the filtered global
value if that class has an active tracklet, and exactly zero otherwise;
the estimate is *triggered* when any published probability exceeds the
trigger threshold. Triggered estimates are what deployment code feeds
into the belief filter.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Detection:
    class_index: int
    position: tuple[float, float]
    score: float


@dataclass(frozen=True)
class FrameEstimate:
    """Raw per-frame perception output, one probability per failure class."""

    frame_index: int
    global_probs: tuple[float, ...]
    detections: tuple[Detection, ...] = ()


@dataclass
class Tracklet:
    class_index: int
    last_position: tuple[float, float]
    consecutive_hits: int = 1
    frames_since_hit: int = 0
    tracklet_id: int = 0

    def is_active(self, min_hits: int, max_gap: int) -> bool:
        return self.consecutive_hits >= min_hits and self.frames_since_hit <= max_gap


@dataclass(frozen=True)
class PredictorConfig:
    window: int = 5           # mean-filter length, frames
    min_hits: int = 3         # hits before a tracklet activates
    max_gap: int = 2          # frames a tracklet survives unmatched
    radius: float = 0.1       # association radius, normalized units
    trigger_threshold: float = 0.3

    def __post_init__(self) -> None:
        if self.window < 1 or self.min_hits < 1 or self.max_gap < 0:
            raise ValueError("window/min_hits must be >= 1 and max_gap >= 0")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not 0.0 < self.trigger_threshold < 1.0:
            raise ValueError("trigger_threshold must be in (0, 1)")


@dataclass
class PredictorState:
    """Per-stream filter state; one instance per edge traversal stream."""

    num_failure_classes: int
    window: deque = field(default_factory=deque)
    tracklets: list[Tracklet] = field(default_factory=list)
    last_frame_index: int | None = None
    next_tracklet_id: int = 0


@dataclass(frozen=True)
class CompetenceEstimate:
    """Gated output for one frame.

    ``probs[i]`` is the mean-filtered global probability when class i has
    an active tracklet and exactly 0.0 otherwise; ``filtered_probs`` keeps
    the ungated filter output for diagnostics.
    """

    probs: tuple[float, ...]
    filtered_probs: tuple[float, ...]
    triggered: bool


def new_state(num_failure_classes: int) -> PredictorState:
    return PredictorState(num_failure_classes=num_failure_classes)


def reset(state: PredictorState) -> PredictorState:
    """Fresh state for a new stream (idempotent)."""
    return new_state(state.num_failure_classes)


def ingest_frame(
    state: PredictorState, frame: FrameEstimate, config: PredictorConfig
) -> tuple[PredictorState, CompetenceEstimate]:
    """Advance the filter by one frame and return the gated estimate.

    The state is updated in place and returned for convenience. Frame
    indices must be strictly increasing within a stream.
    """
    if state.last_frame_index is not None and frame.frame_index <= state.last_frame_index:
        raise ValueError(
            f"frame index {frame.frame_index} not after {state.last_frame_index}"
        )
    state.last_frame_index = frame.frame_index

    probs = np.asarray(frame.global_probs, dtype=float)
    if probs.shape != (state.num_failure_classes,):
        raise ValueError(
            f"expected {state.num_failure_classes} global probabilities, got {probs.shape}"
        )
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValueError(f"global probabilities out of [0, 1]: {frame.global_probs}")

    state.window.append(probs)
    if len(state.window) > config.window:
        state.window.popleft()
    filtered = np.mean(state.window, axis=0)

    _associate(state, frame.detections, config)

    active = np.zeros(state.num_failure_classes, dtype=bool)
    for t in state.tracklets:
        if t.is_active(config.min_hits, config.max_gap):
            active[t.class_index] = True
    gated = np.where(active, filtered, 0.0)
    triggered = bool(np.any(gated > config.trigger_threshold))
    return state, CompetenceEstimate(
        probs=tuple(float(p) for p in gated),
        filtered_probs=tuple(float(p) for p in filtered),
        triggered=triggered,
    )


def _associate(
    state: PredictorState, detections: tuple[Detection, ...], config: PredictorConfig
) -> None:
    """Greedy nearest-neighbor update of the tracklet set for one frame.

    Detections are processed in (score desc, position, class) order; each
    may claim the nearest unmatched same-class tracklet within the
    association radius, with ties going to the oldest tracklet. Unmatched
    detections spawn new tracklets; tracklets unmatched for more than
    ``max_gap`` frames are dropped.
    """
    for d in detections:
        if not 0 <= d.class_index < state.num_failure_classes:
            raise ValueError(f"detection class {d.class_index} out of range")

    ordered = sorted(
        detections, key=lambda d: (-d.score, d.position[0], d.position[1], d.class_index)
    )
    matched: set[int] = set()
    spawned: list[Tracklet] = []
    for det in ordered:
        best: Tracklet | None = None
        best_key: tuple[float, int] | None = None
        for t in state.tracklets:
            if t.tracklet_id in matched or t.class_index != det.class_index:
                continue
            dx = t.last_position[0] - det.position[0]
            dy = t.last_position[1] - det.position[1]
            dist = (dx * dx + dy * dy) ** 0.5
            if dist > config.radius:
                continue
            key = (dist, t.tracklet_id)
            if best_key is None or key < best_key:
                best, best_key = t, key
        if best is not None:
            matched.add(best.tracklet_id)
            best.last_position = det.position
            best.consecutive_hits += 1
            best.frames_since_hit = 0
        else:
            spawned.append(
                Tracklet(
                    class_index=det.class_index,
                    last_position=det.position,
                    tracklet_id=state.next_tracklet_id,
                )
            )
            state.next_tracklet_id += 1

    survivors: list[Tracklet] = []
    for t in state.tracklets:
        if t.tracklet_id not in matched:
            t.frames_since_hit += 1
        if t.frames_since_hit <= config.max_gap:
            survivors.append(t)
    state.tracklets = survivors + spawned


def load_frames_jsonl(path) -> list[FrameEstimate]:
    """Read a recorded frame stream (one JSON object per line)."""
    import json
    from pathlib import Path

    frames = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        frames.append(
            FrameEstimate(
                frame_index=int(row["frame"]),
                global_probs=tuple(float(p) for p in row["global_probs"]),
                detections=tuple(
                    Detection(
                        class_index=int(d["class"]),
                        position=(float(d["pos"][0]), float(d["pos"][1])),
                        score=float(d["score"]),
                    )
                    for d in row.get("detections", ())
                ),
            )
        )
    return frames


def save_frames_jsonl(frames, path) -> None:
    import json
    from pathlib import Path

    lines = []
    for f in frames:
        lines.append(
            json.dumps(
                {
                    "frame": f.frame_index,
                    "global_probs": list(f.global_probs),
                    "detections": [
                        {"class": d.class_index, "pos": list(d.position), "score": d.score}
                        for d in f.detections
                    ],
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")
