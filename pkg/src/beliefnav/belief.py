"""Per-edge failure beliefs as Bayesian log-odds filters.

Each (edge, failure class) pair carries an independent binary belief
stored in log-odds form. An observation with inverse likelihood
p = p(class | observation) updates it additively:

    l_t = log(p / (1 - p)) + l_{t-1} - l_0

where l_0 = log(eps / (1 - eps)) is the prior in log-odds form. An
observation at the prior (p = eps) is therefore neutral and leaves the
belief unchanged. Two observation types feed the filter: intervention
signals, which name the failure class that occurred and are expanded to
per-class likelihoods via a confidence coefficient delta, and perception
outputs, which supply per-class probabilities directly.

Planning reads beliefs through `transition_snapshot`, which converts the
per-class one-vs-rest beliefs into a normalized categorical over outcomes.
Because per-class beliefs can jointly exceed 1, snapshots rescale failure
mass proportionally when needed, keeping a small success floor; the stored
log-odds are never touched by normalization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .failures import FailureTaxonomy, default_taxonomy
from .topo_map import TopoMap

DEFAULT_EPSILON = 0.05
DEFAULT_DELTA = 0.9
LOG_ODDS_CLAMP = 50.0
SUCCESS_FLOOR = 1e-3


@dataclass(frozen=True)
class BeliefPrior:
    """Prior failure probability per failure class."""

    epsilon: float = DEFAULT_EPSILON

    def validate(self, num_failure_classes: int) -> None:
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must be in (0, 0.5), got {self.epsilon}")
        if num_failure_classes * self.epsilon >= 1.0:
            raise ValueError(
                f"prior failure mass {num_failure_classes} * {self.epsilon} >= 1"
            )

    @property
    def log_odds(self) -> float:
        return math.log(self.epsilon / (1.0 - self.epsilon))


@dataclass(frozen=True)
class Intervention:
    """External signal that a specific failure class occurred on an edge."""

    edge: tuple[int, int]
    class_index: int


@dataclass(frozen=True)
class Perception:
    """Perception-derived per-failure-class probabilities for one edge.

    ``class_probs`` has one entry per failure class (success excluded),
    each in [0, 1]. An entry equal to the prior is a no-op for that class.
    """

    edge: tuple[int, int]
    class_probs: tuple[float, ...]


ObservationEvent = Intervention | Perception


class FailureBelief:
    """Log-odds failure beliefs for every (edge, failure class) of a map.

    Updates mutate in place: one writer per deployment episode; snapshots
    are fresh arrays and safe to hand to concurrent readers.
    """

    def __init__(self, topo: TopoMap, prior: BeliefPrior, taxonomy: FailureTaxonomy):
        prior.validate(taxonomy.num_failure_classes)
        self.taxonomy = taxonomy
        self.prior = prior
        self._edge_index = {e.key: i for i, e in enumerate(topo.edges)}
        self._edges = tuple(e.key for e in topo.edges)
        self._log_odds = np.full(
            (len(self._edges), taxonomy.num_failure_classes), prior.log_odds
        )
        self._traversals = np.zeros(len(self._edges), dtype=np.int64)

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return self._edges

    def _row(self, edge: tuple[int, int]) -> int:
        try:
            return self._edge_index[edge]
        except KeyError:
            raise KeyError(f"unknown edge {edge}") from None

    def log_odds(self, edge: tuple[int, int], class_index: int) -> float:
        self._check_class(class_index)
        return float(self._log_odds[self._row(edge), class_index])

    def belief_prob(self, edge: tuple[int, int], class_index: int) -> float:
        """Belief that a traversal of ``edge`` fails with the given class."""
        return float(_sigmoid(self.log_odds(edge, class_index)))

    def traversal_count(self, edge: tuple[int, int]) -> int:
        return int(self._traversals[self._row(edge)])

    def record_traversal(self, edge: tuple[int, int]) -> None:
        self._traversals[self._row(edge)] += 1

    def _check_class(self, class_index: int) -> None:
        if not 0 <= class_index < self.taxonomy.num_failure_classes:
            raise KeyError(f"class index {class_index} is not a failure class")

    def update(self, obs: ObservationEvent, delta: float = DEFAULT_DELTA) -> None:
        """Apply one observation to the observed edge's failure classes.

        ``delta`` in (1/L, 1) is the intervention confidence: the named
        class gets inverse likelihood delta, every other failure class
        gets (1 - delta) / (L - 1).
        """
        n_fail = self.taxonomy.num_failure_classes
        num_classes = self.taxonomy.num_classes
        if isinstance(obs, Intervention):
            if not 1.0 / num_classes < delta < 1.0:
                raise ValueError(f"delta must be in (1/{num_classes}, 1), got {delta}")
            self._check_class(obs.class_index)
            probs = np.full(n_fail, (1.0 - delta) / (num_classes - 1))
            probs[obs.class_index] = delta
            row = self._row(obs.edge)
        elif isinstance(obs, Perception):
            probs = np.asarray(obs.class_probs, dtype=float)
            if probs.shape != (n_fail,):
                raise ValueError(
                    f"expected {n_fail} class probabilities, got {probs.shape}"
                )
            if np.any(probs < 0.0) or np.any(probs > 1.0):
                raise ValueError(f"class probabilities out of [0, 1]: {obs.class_probs}")
            row = self._row(obs.edge)
        else:
            raise TypeError(f"unsupported observation {obs!r}")

        with np.errstate(divide="ignore"):
            evidence = np.log(probs) - np.log1p(-probs)
        updated = evidence + self._log_odds[row] - self.prior.log_odds
        self._log_odds[row] = np.clip(updated, -LOG_ODDS_CLAMP, LOG_ODDS_CLAMP)

    def transition_snapshot(self, edge: tuple[int, int]) -> np.ndarray:
        """Normalized outcome categorical for one edge (success last)."""
        return self.snapshot_all()[self._row(edge)]

    def snapshot_all(self) -> np.ndarray:
        """Outcome categorical for every edge, rows in map edge order.

        Per-class failure probabilities come straight from the beliefs;
        success is the complement. If the failure mass exceeds
        1 - SUCCESS_FLOOR it is rescaled proportionally so success stays
        at the floor. Rows sum to 1 within 1e-12.
        """
        fail = _sigmoid(self._log_odds)
        total = fail.sum(axis=1)
        over = total > 1.0 - SUCCESS_FLOOR
        if np.any(over):
            scale = (1.0 - SUCCESS_FLOOR) / total[over]
            fail = fail.copy()
            fail[over] *= scale[:, None]
        success = 1.0 - fail.sum(axis=1)
        return np.column_stack([fail, success])

    def to_json_rows(self) -> list[dict]:
        """Serializable checkpoint rows, one per (edge, failure class)."""
        rows = []
        for (src, dst), i in sorted(self._edge_index.items()):
            for c in range(self.taxonomy.num_failure_classes):
                rows.append(
                    {"edge": [src, dst], "class": c, "log_odds": float(self._log_odds[i, c])}
                )
        return rows

    def load_json_rows(self, rows: list[dict]) -> None:
        for row in rows:
            src, dst = row["edge"]
            i = self._row((src, dst))
            c = int(row["class"])
            self._check_class(c)
            self._log_odds[i, c] = float(row["log_odds"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "\n".join(json.dumps(r, sort_keys=True) for r in self.to_json_rows()) + "\n"
        )

    def load(self, path: str | Path) -> None:
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
        self.load_json_rows(rows)


def init_beliefs(
    topo: TopoMap,
    prior: BeliefPrior | None = None,
    taxonomy: FailureTaxonomy | None = None,
) -> FailureBelief:
    """Fresh beliefs at the prior for every edge and failure class."""
    return FailureBelief(
        topo, prior or BeliefPrior(), taxonomy or default_taxonomy()
    )


def _sigmoid(log_odds):
    return 1.0 - 1.0 / (1.0 + np.exp(log_odds))
