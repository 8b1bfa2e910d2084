"""Command-line experiment harness.

Subcommands: ``generate-env`` writes a seeded environment file, ``run``
executes a deployment for one agent and writes a JSON-lines log plus a
summary, ``report`` aggregates logs (one of which must be the oracle's)
into a CSV or JSON summary. Values resolve as flags over config file
over module defaults, and every log and report embeds the resolved
configuration. Identical seeds give byte-identical outputs end to end.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .envgen import EnvParams, generate_environment
from .metrics import compute_metrics, emit_report
from .sensor_sim import RngStream, SensorFidelity, load_environment, save_environment
from .simulate import (
    AgentKind,
    SimConfig,
    Task,
    generate_tasks,
    load_deployment_log,
    run_deployment,
)

_TASKGEN_NS = 2**31 - 1  # rng namespace for task sampling, clear of task indices


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}")
    if not isinstance(data, dict):
        raise CliError(f"config {path} must be a JSON object")
    return data


def _section(cfg: dict, name: str) -> dict:
    section = cfg.get(name, {})
    if not isinstance(section, dict):
        raise CliError(f"config section {name!r} must be an object")
    return section


def _merge_flags(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _build_env_params(cfg: dict, args: argparse.Namespace) -> EnvParams:
    flags = {
        "nodes": args.nodes,
        "density": args.density,
        "hazards": args.hazards,
        "cf_fraction": args.cf_fraction,
        "placement": args.placement,
    }
    values = _merge_flags(_section(cfg, "env"), flags)
    try:
        return EnvParams(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid env parameters: {exc}")


def _build_fidelity(cfg: dict, args: argparse.Namespace) -> SensorFidelity:
    flags = {
        "tpr": getattr(args, "tpr", None),
        "fpr": getattr(args, "fpr", None),
        "global_noise_sd": getattr(args, "noise", None),
        "frame_rate": getattr(args, "frame_rate", None),
    }
    values = _merge_flags(_section(cfg, "fidelity"), flags)
    try:
        return SensorFidelity(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid fidelity parameters: {exc}")


def _build_sim_config(cfg: dict, args: argparse.Namespace) -> SimConfig:
    values = dict(_section(cfg, "sim"))
    if getattr(args, "abort", None) is not None:
        values["mid_edge_abort"] = args.abort
    if getattr(args, "alpha", None) is not None:
        values["alpha"] = args.alpha
    try:
        return SimConfig.from_json_dict(values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid sim config: {exc}")


def cmd_generate_env(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    params = _build_env_params(cfg, args)
    fidelity = _build_fidelity(cfg, args)
    env = generate_environment(params, fidelity, args.seed)
    save_environment(env, args.out)
    print(
        f"wrote {args.out}: {env.topo.num_nodes} nodes, "
        f"{env.topo.num_edges} edges, {len(env.hazards)} hazards"
    )
    return 0


def _resolve_tasks(args: argparse.Namespace, env) -> list[Task]:
    if args.task_file:
        try:
            pairs = json.loads(Path(args.task_file).read_text())
            tasks = [Task(int(s), int(g)) for s, g in pairs]
        except (OSError, ValueError, TypeError) as exc:
            raise CliError(f"cannot read task file {args.task_file}: {exc}")
        return tasks
    rng = RngStream(args.seed).substream(_TASKGEN_NS)
    return generate_tasks(env.topo, args.tasks, rng)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    config = _build_sim_config(cfg, args)
    env = load_environment(args.env)
    tasks = _resolve_tasks(args, env)
    log = run_deployment(env, AgentKind(args.agent), tasks, args.seed, config)
    log.save(args.out)

    completed = sum(1 for ep in log.episodes if ep.outcome == "completed")
    summary = {
        "agent": args.agent,
        "seed": args.seed,
        "n_tasks": len(tasks),
        "completed": completed,
        "total_duration": sum(ep.duration for ep in log.episodes),
        "config": log.config,
        "env_fingerprint": log.env_fingerprint,
    }
    summary_path = Path(args.out).with_suffix(Path(args.out).suffix + ".summary.json")
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"wrote {args.out}: {completed}/{len(tasks)} tasks completed")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    logs = {}
    for path in args.logs:
        log = load_deployment_log(path)
        if log.agent.value in logs:
            raise CliError(f"duplicate log for agent {log.agent.value!r}")
        logs[log.agent.value] = log
    if AgentKind.ORACLE.value not in logs:
        raise CliError("oracle log required for relative TCD")
    try:
        metrics = compute_metrics(logs)
    except ValueError as exc:
        raise CliError(str(exc))
    config_echo = {
        "logs": {name: logs[name].config for name in sorted(logs)},
        "env_fingerprint": logs[AgentKind.ORACLE.value].env_fingerprint,
    }
    emit_report(metrics, args.format, args.out, config=config_echo)
    print(f"wrote {args.out} ({len(metrics)} agents)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beliefnav",
        description="Competence-aware path planning experiments on synthetic deployments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate-env", help="write a seeded environment file")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--config", help="JSON config file with env/fidelity sections")
    p_gen.add_argument("--nodes", type=int)
    p_gen.add_argument("--density", type=float)
    p_gen.add_argument("--hazards", type=int)
    p_gen.add_argument("--cf-fraction", dest="cf_fraction", type=float)
    p_gen.add_argument("--placement", choices=["uniform", "trafficked"])
    p_gen.add_argument("--tpr", type=float)
    p_gen.add_argument("--fpr", type=float)
    p_gen.add_argument("--noise", type=float)
    p_gen.add_argument("--frame-rate", dest="frame_rate", type=float)
    p_gen.set_defaults(func=cmd_generate_env)

    p_run = sub.add_parser("run", help="run one agent's deployment on an environment")
    p_run.add_argument("--env", required=True)
    p_run.add_argument(
        "--agent", required=True, choices=[k.value for k in AgentKind]
    )
    p_run.add_argument("--tasks", type=int, default=100)
    p_run.add_argument("--task-file", dest="task_file")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--config", help="JSON config file with a sim section")
    p_run.add_argument("--alpha", type=float)
    abort = p_run.add_mutually_exclusive_group()
    abort.add_argument("--abort", dest="abort", action="store_true", default=None)
    abort.add_argument("--no-abort", dest="abort", action="store_false")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="aggregate deployment logs into a summary")
    p_rep.add_argument("logs", nargs="+")
    p_rep.add_argument("--format", choices=["csv", "json"], default="csv")
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures -> exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
