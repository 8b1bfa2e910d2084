"""Failure-class taxonomy shared by planning, beliefs, and simulation.

A taxonomy is an ordered list of classes where every class except the last
is a failure outcome (catastrophic or recoverable) and the last one is the
success / no-failure outcome. Probability vectors over *failure* classes
(beliefs, perception outputs, hazard contributions) are indexed by
``FailureClass.index`` and have length ``num_failure_classes``; full
categorical vectors over outcomes append success last.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class FailureKind(Enum):
    CATASTROPHIC = "catastrophic"
    NON_CATASTROPHIC = "non_catastrophic"
    SUCCESS = "success"


@dataclass(frozen=True)
class FailureClass:
    """One outcome class of an edge traversal."""

    index: int
    kind: FailureKind
    name: str

    @property
    def is_failure(self) -> bool:
        return self.kind is not FailureKind.SUCCESS


@dataclass(frozen=True)
class FailureTaxonomy:
    """Ordered outcome classes; success is always the last index."""

    classes: tuple[FailureClass, ...]

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise ValueError("taxonomy needs at least one failure class plus success")
        for i, cls in enumerate(self.classes):
            if cls.index != i:
                raise ValueError(f"class {cls.name!r} has index {cls.index}, expected {i}")
        n_success = sum(1 for c in self.classes if c.kind is FailureKind.SUCCESS)
        if n_success != 1:
            raise ValueError(f"exactly one success class required, got {n_success}")
        if self.classes[-1].kind is not FailureKind.SUCCESS:
            raise ValueError("success class must be the last index")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_failure_classes(self) -> int:
        return len(self.classes) - 1

    @property
    def success(self) -> FailureClass:
        return self.classes[-1]

    @property
    def failure_classes(self) -> tuple[FailureClass, ...]:
        return self.classes[:-1]

    def by_name(self, name: str) -> FailureClass:
        for cls in self.classes:
            if cls.name == name:
                return cls
        raise KeyError(f"unknown failure class {name!r}")


def default_taxonomy() -> FailureTaxonomy:
    """Catastrophic / non-catastrophic / success, the standard 3-class setup."""
    return FailureTaxonomy(
        (
            FailureClass(0, FailureKind.CATASTROPHIC, "CF"),
            FailureClass(1, FailureKind.NON_CATASTROPHIC, "NCF"),
            FailureClass(2, FailureKind.SUCCESS, "success"),
        )
    )
