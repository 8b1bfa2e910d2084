"""Aggregate deployment logs into the evaluation quantities.

Reported per agent: task completion rate, task completion duration
relative to the oracle planner (only over tasks both completed), the
time-indexed cumulative failure counts per class, and the number of
avoided failures (distinct (edge, class) pairs where a consensus trigger
preceded rerouting).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .failures import FailureKind, FailureTaxonomy, default_taxonomy
from .simulate import AgentKind, DeploymentLog


@dataclass
class Metrics:
    agent: str
    n_tasks: int
    tcr: float
    relative_tcd: list[tuple[int, float]]  # (task index, duration / oracle duration)
    tcd_mean: float | None
    tcd_std: float | None
    cumulative_failures: dict[str, list[float]]  # class name -> event times
    avoided: dict[str, int]    # class name -> distinct (edge, class) count
    failures: dict[str, int]   # class name -> total failure events

    def failure_series(self, class_name: str) -> list[tuple[float, int]]:
        """Nondecreasing (time, cumulative count) steps for one class."""
        times = self.cumulative_failures.get(class_name, [])
        series: list[tuple[float, int]] = []
        for i, t in enumerate(times, start=1):
            if series and series[-1][0] == t:
                series[-1] = (t, i)
            else:
                series.append((t, i))
        return series


def compute_metrics(
    logs: dict[str, DeploymentLog] | list[DeploymentLog],
    taxonomy: FailureTaxonomy | None = None,
) -> dict[str, Metrics]:
    """Metrics per agent; requires an oracle log and a shared task list."""
    taxonomy = taxonomy or default_taxonomy()
    if isinstance(logs, list):
        logs = {log.agent.value: log for log in logs}
    if AgentKind.ORACLE.value not in logs:
        raise ValueError("oracle log required for relative TCD")
    oracle = logs[AgentKind.ORACLE.value]
    ref_tasks = [(t.start, t.goal) for t in oracle.tasks]
    for name, log in logs.items():
        if [(t.start, t.goal) for t in log.tasks] != ref_tasks:
            raise ValueError(f"task-list mismatch between oracle and {name!r}")
        if log.env_fingerprint != oracle.env_fingerprint:
            raise ValueError(f"environment mismatch between oracle and {name!r}")

    oracle_completed = {
        i: ep.duration
        for i, ep in enumerate(oracle.episodes)
        if ep.outcome == "completed"
    }

    out: dict[str, Metrics] = {}
    for name in sorted(logs):
        log = logs[name]
        n = len(log.episodes)
        completed = [i for i, ep in enumerate(log.episodes) if ep.outcome == "completed"]
        tcr = len(completed) / n if n else 0.0

        rel = [
            (i, log.episodes[i].duration / oracle_completed[i])
            for i in completed
            if i in oracle_completed and oracle_completed[i] > 0
        ]
        ratios = [r for _, r in rel]
        mean = sum(ratios) / len(ratios) if ratios else None
        std = (
            math.sqrt(sum((r - mean) ** 2 for r in ratios) / len(ratios))
            if ratios
            else None
        )

        cum: dict[str, list[float]] = {c.name: [] for c in taxonomy.failure_classes}
        fail_counts = {c.name: 0 for c in taxonomy.failure_classes}
        avoided_pairs: dict[str, set[tuple[int, int, int]]] = {
            c.name: set() for c in taxonomy.failure_classes
        }
        offset = 0.0
        for ep in log.episodes:
            for ev in ep.events:
                if ev["type"] == "failure":
                    cname = taxonomy.classes[ev["class"]].name
                    cum[cname].append(offset + ev["t"])
                    fail_counts[cname] += 1
                elif ev["type"] == "avoided":
                    cname = taxonomy.classes[ev["class"]].name
                    src, dst = ev["edge"]
                    avoided_pairs[cname].add((src, dst, ev["class"]))
            offset += ep.duration
        for times in cum.values():
            times.sort()

        out[name] = Metrics(
            agent=name,
            n_tasks=n,
            tcr=tcr,
            relative_tcd=rel,
            tcd_mean=mean,
            tcd_std=std,
            cumulative_failures=cum,
            avoided={k: len(v) for k, v in avoided_pairs.items()},
            failures=fail_counts,
        )
    return out


CSV_COLUMNS = [
    "agent",
    "n_tasks",
    "tcr",
    "tcd_mean",
    "tcd_std",
    "avoided_cf",
    "avoided_ncf",
    "failures_cf",
    "failures_ncf",
]


def _sum_by_kind(per_class: dict[str, int], taxonomy: FailureTaxonomy, kind: FailureKind) -> int:
    return sum(
        per_class.get(c.name, 0) for c in taxonomy.failure_classes if c.kind is kind
    )


def _sig6(x: float | None):
    if x is None:
        return None
    return float(f"{x:.6g}")


def summary_rows(
    metrics: dict[str, Metrics], taxonomy: FailureTaxonomy | None = None
) -> list[dict]:
    """Report rows (sorted by agent) with floats at 6 significant digits."""
    taxonomy = taxonomy or default_taxonomy()
    rows = []
    for name in sorted(metrics):
        m = metrics[name]
        rows.append(
            {
                "agent": m.agent,
                "n_tasks": m.n_tasks,
                "tcr": _sig6(m.tcr),
                "tcd_mean": _sig6(m.tcd_mean),
                "tcd_std": _sig6(m.tcd_std),
                "avoided_cf": _sum_by_kind(m.avoided, taxonomy, FailureKind.CATASTROPHIC),
                "avoided_ncf": _sum_by_kind(m.avoided, taxonomy, FailureKind.NON_CATASTROPHIC),
                "failures_cf": _sum_by_kind(m.failures, taxonomy, FailureKind.CATASTROPHIC),
                "failures_ncf": _sum_by_kind(m.failures, taxonomy, FailureKind.NON_CATASTROPHIC),
            }
        )
    return rows


def emit_report(
    metrics: dict[str, Metrics],
    fmt: str,
    path: str | Path,
    config: dict | None = None,
    taxonomy: FailureTaxonomy | None = None,
) -> None:
    """Write the summary as CSV or JSON (same values either way)."""
    rows = summary_rows(metrics, taxonomy)
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            if config is not None:
                fh.write("# config " + json.dumps(config, sort_keys=True) + "\n")
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ("" if row[k] is None else row[k]) for k in CSV_COLUMNS})
    elif fmt == "json":
        doc: dict = {"v": 1, "rows": rows}
        if config is not None:
            doc["config"] = config
        doc["cumulative_failures"] = {
            name: m.cumulative_failures for name, m in sorted(metrics.items())
        }
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def parse_report(path: str | Path) -> list[dict]:
    """Read back a report (either format) as the list of summary rows."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        return json.loads(text)["rows"]
    rows = []
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    for raw in csv.DictReader(lines):
        row: dict = {}
        for key, val in raw.items():
            if key == "agent":
                row[key] = val
            elif val == "":
                row[key] = None
            elif key in ("n_tasks", "avoided_cf", "avoided_ncf", "failures_cf", "failures_ncf"):
                row[key] = int(val)
            else:
                row[key] = float(val)
        rows.append(row)
    return rows
