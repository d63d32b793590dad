"""Command line front end.

Subcommands:
  generate-dataset  run the live system under uniform random actions and log
                    every arrival's per-action projections to dataset.csv
  train             fit the neural bandit (or log a random baseline) and write
                    metrics.csv plus a model.json checkpoint
  evaluate          run a frozen policy and write test metrics plus summary.json
  sweep             evaluate one policy across scenario variants of a workload
                    knob, writing per-scenario metrics and sweep_summary.json

Every command writes a manifest.json with the fully resolved configuration,
the effective seed, and a sha256 per output file, so runs can be reproduced
and compared byte for byte.  Exit codes: 0 ok, 2 configuration error, 3 I/O
error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import List, Optional, Tuple

from . import __version__
from .bandit import E2daAgent, RewardParams
from .config import (
    MODES,
    SWEEP_AXES,
    ExperimentConfig,
    config_to_dict,
    load_config,
    with_sweep_value,
)
from .errors import ConfigError
from .experiment import (
    Dataset,
    MetricsRow,
    calibrate_efficiency_scale,
    calibrate_efficiency_scale_live,
    dataset_policy,
    generate_dataset,
    run_evaluation,
    run_live_evaluation,
    run_live_training,
    run_training,
    run_training_per_user,
    summarize,
    write_metrics,
)
from .ioutil import sha256_file, write_json
from .rng import substream
from .workload import WorkloadConfig

TRAIN_AGENTS = ("e2da", "random")
EVAL_AGENTS = ("e2da", "eel", "ee", "r", "random")


# ------------------------------------------------------------------- helpers


def _effective_seed(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    return args.seed if args.seed is not None else cfg.seed


def _write_manifest(
    out_dir: str,
    command: str,
    cfg: ExperimentConfig,
    seed: int,
    outputs: List[str],
    extra: Optional[dict] = None,
) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config": config_to_dict(cfg),
        "outputs": {name: sha256_file(os.path.join(out_dir, name)) for name in outputs},
    }
    if extra:
        manifest.update(extra)
    write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _load_dataset(path: Optional[str], n_actions: int) -> Dataset:
    if not path:
        raise ConfigError("dataset mode requires --dataset PATH")
    dataset = Dataset.from_csv(path)
    if dataset.n_actions != n_actions:
        raise ConfigError(
            f"dataset has {dataset.n_actions} actions but the config implies {n_actions}"
        )
    return dataset


def _resolve_scale(
    cfg: ExperimentConfig, seed: int, dataset: Optional[Dataset]
) -> Tuple[float, str]:
    """Efficiency normalizer and where it came from."""
    if cfg.efficiency_scale is not None:
        return cfg.efficiency_scale, "configured"
    if dataset is not None:
        return (
            calibrate_efficiency_scale(dataset, cfg.calibration_percentile),
            "dataset_percentile",
        )
    scale = calibrate_efficiency_scale_live(
        cfg.node, cfg.channels, cfg.workload, seed, percentile=cfg.calibration_percentile
    )
    return scale, "live_percentile"


def _write_checkpoint(path: str, agent: E2daAgent, workload: WorkloadConfig) -> None:
    payload = {
        "format": "e2da-agent",
        "tool_version": __version__,
        "n_actions": int(agent.model.layer_sizes[-1]),
        "context_bounds": [list(b) for b in workload.resolved_context_bounds()],
        "agent": agent.to_state(),
    }
    write_json(path, payload)


def _write_checkpoint_set(path: str, agents: List[E2daAgent], workload: WorkloadConfig) -> None:
    """Checkpoint for per-user training: agents[u] decides for user u."""
    payload = {
        "format": "e2da-agent-set",
        "tool_version": __version__,
        "n_actions": int(agents[0].model.layer_sizes[-1]),
        "context_bounds": [list(b) for b in workload.resolved_context_bounds()],
        "agents": [agent.to_state() for agent in agents],
    }
    write_json(path, payload)


def _read_checkpoint(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not a valid checkpoint: {exc}") from exc
    if payload.get("format") not in ("e2da-agent", "e2da-agent-set"):
        raise ConfigError(f"{path} is not an agent checkpoint (format field missing or wrong)")
    return payload


def _agent_from_checkpoint(payload: dict, seed: int) -> E2daAgent:
    if payload["format"] != "e2da-agent":
        raise ConfigError(
            "checkpoint holds a per-user agent set; this command path needs a "
            "single shared agent (run.agent_scope 'shared')"
        )
    # Salt the fresh action/minibatch streams with the episode count so a
    # resumed run does not replay the original run's draws from the start.
    ep = int(payload["agent"]["episodes_trained"])
    return E2daAgent.from_state(
        payload["agent"],
        explore_rng=substream(seed, "explore", ep),
        minibatch_rng=substream(seed, "minibatch", ep),
    )


def _agents_from_checkpoint_set(payload: dict, seed: int) -> List[E2daAgent]:
    if payload["format"] != "e2da-agent-set":
        raise ConfigError(
            "checkpoint holds a single shared agent; run.agent_scope 'per_user' "
            "needs a per-user agent set"
        )
    agents = []
    for u, state in enumerate(payload["agents"]):
        ep = int(state["episodes_trained"])
        agents.append(
            E2daAgent.from_state(
                state,
                explore_rng=substream(seed, "explore", ep, "user", u),
                minibatch_rng=substream(seed, "minibatch", ep, "user", u),
            )
        )
    return agents


def _workload_with_bounds(workload: WorkloadConfig, bounds) -> WorkloadConfig:
    fixed = tuple((float(lo), float(hi)) for lo, hi in bounds)
    return dataclasses.replace(workload, context_bounds=fixed)


def _retag(rows: List[MetricsRow], phase: str) -> List[MetricsRow]:
    return [
        MetricsRow(r.episode, phase, r.reward, r.deadline_frac, r.energy_j, r.response_s)
        for r in rows
    ]


# ------------------------------------------------------------------ commands


def cmd_generate_dataset(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = _effective_seed(cfg, args)
    os.makedirs(args.out, exist_ok=True)
    dataset = generate_dataset(cfg.node, cfg.channels, cfg.workload, cfg.n_records, seed)
    dataset.write_csv(os.path.join(args.out, "dataset.csv"))
    _write_manifest(
        args.out,
        "generate-dataset",
        cfg,
        seed,
        ["dataset.csv"],
        extra={"n_records": len(dataset)},
    )
    print(f"wrote {len(dataset)} records to {os.path.join(args.out, 'dataset.csv')}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    mode = args.mode or cfg.mode
    seed = _effective_seed(cfg, args)
    n_actions = cfg.node.n_channels + 1
    os.makedirs(args.out, exist_ok=True)

    dataset = _load_dataset(args.dataset, n_actions) if mode == "dataset" else None
    outputs = ["metrics.csv"]
    extra: dict = {"agent": args.agent, "mode": mode}

    if args.agent == "random":
        if args.resume:
            raise ConfigError("--resume only applies to the learned agent")
        scale, origin = _resolve_scale(cfg, seed, dataset)
        params = RewardParams(cfg.agent.penalty, scale)
        if mode == "dataset":
            policy = dataset_policy(
                "random", rng=substream(seed, "logging-policy"), n_actions=n_actions
            )
            rows = run_evaluation(
                policy,
                dataset,
                cfg.workload,
                params,
                cfg.n_train_episodes,
                cfg.tasks_per_episode,
                seed,
                phase="train",
                stream="train",
            )
        else:
            rows = _retag(
                run_live_evaluation(
                    "random",
                    cfg.node,
                    cfg.channels,
                    cfg.workload,
                    params,
                    cfg.n_train_episodes,
                    cfg.tasks_per_episode,
                    seed,
                ),
                "train",
            )
        extra.update({"efficiency_scale": params.efficiency_scale, "scale_origin": origin})
    else:
        per_user = cfg.agent_scope == "per_user"
        if per_user and mode != "dataset":
            raise ConfigError("run.agent_scope 'per_user' requires dataset mode")
        workload = cfg.workload
        agent: Optional[E2daAgent] = None
        agents: List[E2daAgent] = []
        if args.resume:
            payload = _read_checkpoint(args.resume)
            if int(payload["n_actions"]) != n_actions:
                raise ConfigError(
                    f"checkpoint has {payload['n_actions']} actions, config implies {n_actions}"
                )
            if per_user:
                agents = _agents_from_checkpoint_set(payload, seed)
                if len(agents) != cfg.node.n_users:
                    raise ConfigError(
                        f"checkpoint set holds {len(agents)} agents, "
                        f"system.n_users is {cfg.node.n_users}"
                    )
            else:
                agent = _agent_from_checkpoint(payload, seed)
            workload = _workload_with_bounds(cfg.workload, payload["context_bounds"])
            # inputs go into the manifest by content hash, not path, so two
            # runs of the same experiment stay byte-identical
            extra.update(
                {
                    "resumed_from_sha256": sha256_file(args.resume),
                    "efficiency_scale": (agents[0] if per_user else agent).reward_params.efficiency_scale,
                    "scale_origin": "checkpoint",
                }
            )
        else:
            scale, origin = _resolve_scale(cfg, seed, dataset)
            params = RewardParams(cfg.agent.penalty, scale)
            if per_user:
                agents = [
                    E2daAgent.create(cfg.agent, n_actions, params, seed, stream_salt=("user", u))
                    for u in range(cfg.node.n_users)
                ]
            else:
                agent = E2daAgent.create(cfg.agent, n_actions, params, seed)
            extra.update({"efficiency_scale": scale, "scale_origin": origin})
        if per_user:
            rows, _ = run_training_per_user(
                agents, dataset, workload, cfg.n_train_episodes, cfg.tasks_per_episode, seed
            )
        elif mode == "dataset":
            rows = run_training(
                agent, dataset, workload, cfg.n_train_episodes, cfg.tasks_per_episode, seed
            )
        else:
            rows = run_live_training(
                agent,
                cfg.node,
                cfg.channels,
                workload,
                cfg.n_train_episodes,
                cfg.tasks_per_episode,
                seed,
            )
        if per_user:
            _write_checkpoint_set(os.path.join(args.out, "model.json"), agents, workload)
            extra["episodes_trained"] = agents[0].episodes_trained
        else:
            _write_checkpoint(os.path.join(args.out, "model.json"), agent, workload)
            extra["episodes_trained"] = agent.episodes_trained
        outputs.append("model.json")

    write_metrics(os.path.join(args.out, "metrics.csv"), rows)
    _write_manifest(args.out, "train", cfg, seed, outputs, extra)
    mean_reward = sum(r.reward for r in rows) / len(rows)
    print(
        f"trained {args.agent} for {len(rows)} episodes "
        f"(mean episode reward {mean_reward:.3f}); outputs in {args.out}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    mode = args.mode or cfg.mode
    seed = _effective_seed(cfg, args)
    n_actions = cfg.node.n_channels + 1
    os.makedirs(args.out, exist_ok=True)

    dataset = _load_dataset(args.dataset, n_actions) if mode == "dataset" else None
    agent = None
    agents: List[E2daAgent] = []
    workload = cfg.workload
    extra: dict = {"agent": args.agent, "mode": mode}
    if args.agent == "e2da":
        if not args.model:
            raise ConfigError("evaluating the learned agent requires --model PATH")
        payload = _read_checkpoint(args.model)
        if payload["format"] == "e2da-agent-set":
            if mode != "dataset":
                raise ConfigError(
                    "a per-user checkpoint set evaluates in dataset mode only"
                )
            agents = _agents_from_checkpoint_set(payload, seed)
            if len(agents) != cfg.node.n_users:
                raise ConfigError(
                    f"checkpoint set holds {len(agents)} agents, "
                    f"system.n_users is {cfg.node.n_users}"
                )
            params = agents[0].reward_params
        else:
            agent = _agent_from_checkpoint(payload, seed)
            params = agent.reward_params
        workload = _workload_with_bounds(cfg.workload, payload["context_bounds"])
        extra.update({"model_sha256": sha256_file(args.model), "scale_origin": "checkpoint"})
    else:
        scale, origin = _resolve_scale(cfg, seed, dataset)
        params = RewardParams(cfg.agent.penalty, scale)
        extra["scale_origin"] = origin
    extra["efficiency_scale"] = params.efficiency_scale

    if mode == "dataset":
        if agents:

            def policy(rec, x, _agents=agents):
                return _agents[rec.task.user_id].act(x, 0.0)

        else:
            policy = dataset_policy(
                args.agent,
                agent=agent,
                rng=substream(seed, "logging-policy"),
                n_actions=n_actions,
            )
        rows = run_evaluation(
            policy, dataset, workload, params, cfg.n_test_episodes, cfg.tasks_per_episode, seed
        )
    else:
        rows = run_live_evaluation(
            args.agent,
            cfg.node,
            cfg.channels,
            workload,
            params,
            cfg.n_test_episodes,
            cfg.tasks_per_episode,
            seed,
            agent=agent,
        )

    write_metrics(os.path.join(args.out, "metrics.csv"), rows)
    summary = summarize({args.agent: rows}, cfg.tasks_per_episode)
    summary["efficiency_scale"] = params.efficiency_scale
    write_json(os.path.join(args.out, "summary.json"), summary)
    _write_manifest(args.out, "evaluate", cfg, seed, ["metrics.csv", "summary.json"], extra)
    stats = summary["agents"][args.agent]
    print(
        f"{args.agent}: reward {stats['mean_episode_reward']:.3f}, "
        f"deadline fraction {stats['mean_deadline_fraction']:.3f}, "
        f"task energy {stats['mean_task_energy_j']:.3e} J, "
        f"task response {stats['mean_task_response_s']:.3e} s"
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    mode = args.mode or cfg.mode
    seed = _effective_seed(cfg, args)
    n_actions = cfg.node.n_channels + 1
    os.makedirs(args.out, exist_ok=True)

    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma separated numbers: {exc}") from exc
    if not values:
        raise ConfigError("--values must list at least one mean")

    agent = None
    bounds = None
    params: Optional[RewardParams] = None
    if args.agent == "e2da":
        if not args.model:
            raise ConfigError("sweeping the learned agent requires --model PATH")
        payload = _read_checkpoint(args.model)
        agent = _agent_from_checkpoint(payload, seed)
        bounds = payload["context_bounds"]
        params = agent.reward_params
    elif cfg.efficiency_scale is not None:
        params = RewardParams(cfg.agent.penalty, cfg.efficiency_scale)

    scenarios = []
    outputs: List[str] = []
    for value in values:
        scen_cfg = with_sweep_value(cfg, args.vary, value)
        label = f"{args.vary}-{value:g}"
        scen_dir = os.path.join(args.out, label)
        os.makedirs(scen_dir, exist_ok=True)
        # Identical seeds across scenarios give common random numbers, so
        # scenario differences are the knob's effect rather than noise.
        workload = scen_cfg.workload
        if bounds is not None:
            workload = _workload_with_bounds(workload, bounds)
        if mode == "dataset":
            ds = generate_dataset(
                scen_cfg.node, scen_cfg.channels, scen_cfg.workload, scen_cfg.n_records, seed
            )
            if params is None:
                # One normalizer for the whole sweep keeps rewards comparable.
                params = RewardParams(
                    cfg.agent.penalty,
                    calibrate_efficiency_scale(ds, cfg.calibration_percentile),
                )
            policy = dataset_policy(
                args.agent,
                agent=agent,
                rng=substream(seed, "logging-policy", label),
                n_actions=n_actions,
            )
            rows = run_evaluation(
                policy, ds, workload, params, cfg.n_test_episodes, cfg.tasks_per_episode, seed
            )
        else:
            if params is None:
                params = RewardParams(
                    cfg.agent.penalty,
                    calibrate_efficiency_scale_live(
                        scen_cfg.node,
                        scen_cfg.channels,
                        scen_cfg.workload,
                        seed,
                        percentile=cfg.calibration_percentile,
                    ),
                )
            rows = run_live_evaluation(
                args.agent,
                scen_cfg.node,
                scen_cfg.channels,
                workload,
                params,
                cfg.n_test_episodes,
                cfg.tasks_per_episode,
                seed,
                agent=agent,
            )
        rel_metrics = os.path.join(label, "metrics.csv")
        write_metrics(os.path.join(args.out, rel_metrics), rows)
        outputs.append(rel_metrics)
        stats = summarize({args.agent: rows}, cfg.tasks_per_episode)["agents"][args.agent]
        scenarios.append({"value": value, "label": label, **stats})

    def ratio(key: str) -> Optional[float]:
        first = scenarios[0][key]
        return scenarios[-1][key] / first if first != 0 else None

    sweep_summary = {
        "axis": args.vary,
        "agent": args.agent,
        "mode": mode,
        "values": values,
        "efficiency_scale": params.efficiency_scale,
        "scenarios": scenarios,
        "last_over_first": {
            "energy": ratio("mean_task_energy_j"),
            "response": ratio("mean_task_response_s"),
            "reward": ratio("mean_episode_reward"),
            "deadline_fraction": ratio("mean_deadline_fraction"),
        },
    }
    write_json(os.path.join(args.out, "sweep_summary.json"), sweep_summary)
    outputs.append("sweep_summary.json")
    _write_manifest(args.out, "sweep", cfg, seed, outputs, {"agent": args.agent, "mode": mode})
    lof = sweep_summary["last_over_first"]
    print(
        f"swept {args.vary} over {len(values)} values with {args.agent}: "
        f"energy x{lof['energy']:.2f}, response x{lof['response']:.2f} (last vs first)"
    )
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="e2da",
        description="Train and evaluate task offloading policies on a simulated edge system.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override run.seed")
        sp.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser(
        "generate-dataset",
        help="log per-action projections under a uniform random policy",
    )
    common(g)
    g.set_defaults(func=cmd_generate_dataset)

    t = sub.add_parser("train", help="train the bandit or log a random baseline")
    common(t)
    t.add_argument("--agent", choices=TRAIN_AGENTS, default="e2da")
    t.add_argument("--mode", choices=MODES, default=None, help="override run.mode")
    t.add_argument("--dataset", default=None, help="dataset.csv for dataset mode")
    t.add_argument("--resume", default=None, help="model.json checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="run a frozen policy and summarize test metrics")
    common(e)
    e.add_argument("--agent", choices=EVAL_AGENTS, required=True)
    e.add_argument("--mode", choices=MODES, default=None, help="override run.mode")
    e.add_argument("--dataset", default=None, help="dataset.csv for dataset mode")
    e.add_argument("--model", default=None, help="model.json for the learned agent")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="evaluate one policy across workload scenario variants")
    common(s)
    s.add_argument("--vary", choices=SWEEP_AXES, required=True)
    s.add_argument("--values", required=True, help="comma separated scenario means")
    s.add_argument("--agent", choices=EVAL_AGENTS, required=True)
    s.add_argument("--mode", choices=MODES, default=None, help="override run.mode")
    s.add_argument("--model", default=None, help="model.json for the learned agent")
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # simulator or training faults
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
