"""Command line entry point.

Subcommands: ``train`` (full evolutionary run producing an archive of
policies), ``eval`` (roll archived checkpoints over seeds, emitting per-slot
series), ``trajectory`` (charger path replay), and ``baseline`` (reference
policies). Every run writes a manifest.json and stamps its id into each CSV.

Exit codes: 0 success, 2 config or input error, 3 runtime failure. Errors
are reported as a single JSON record on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BaselineSpec, run_baseline
from .emo import AlgoConfig, emoppo_tml
from .env import BadConfig, MochargeError
from .io import (
    ConfigNotFound,
    RunManifest,
    ScenarioNotFound,
    compute_manifest_id,
    load_algo_config,
    load_scenario,
    utc_stamp,
    write_csv,
    write_manifest,
)
from .momdp import ChargingEnv, assemble_reward, rollout
from .nn import (
    BadCheckpoint,
    CheckpointNotFound,
    CheckpointVersionMismatch,
    ShapeMismatch,
    load_policy,
    save_checkpoint,
)

CONFIG_ERRORS = (
    ScenarioNotFound,
    ConfigNotFound,
    CheckpointNotFound,
    BadConfig,
    BadCheckpoint,
    CheckpointVersionMismatch,
    ShapeMismatch,
    ValueError,
)

TRACE_HEADER = [
    "t", "x", "y", "charger_energy", "docked", "r_surv", "eta",
    "e_move", "e_charge", "e_loss", "n_dead", "r1", "r2",
]

DIAG_HEADER = [
    "iteration", "phase", "task_uid", "w1", "w2",
    "mean_return_1", "mean_return_2", "mean_f1", "mean_f2",
    "ratio", "clip_fraction", "policy_loss", "value_loss", "entropy",
]


def _parse_seed_list(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ValueError(f"--eval-seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise ValueError("--eval-seeds must name at least one seed")
    return seeds


def _parse_weight(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"--weight must be two comma-separated numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


def _weights_cell(weights: list) -> str:
    return ";".join(f"{float(w[0])!r}:{float(w[1])!r}" for w in weights)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mocharge",
        description="Mobile-charger network simulator and multi-objective policy search.",
    )
    parser.add_argument("--version", action="version", version=f"mocharge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run the evolutionary trainer, write an archive")
    train.add_argument("--scenario", required=True, help="scenario TOML file")
    train.add_argument("--algo", default=None, help="algorithm config TOML file (defaults apply if omitted)")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--seed", type=int, default=0, help="master seed")
    train.add_argument("--generations", type=int, default=None, help="override generation count (0 = warm-up only)")
    train.add_argument("--mode", choices=("text", "algorithm"), default=None, help="selection scoring blend")
    train.add_argument("--eval-seeds", type=int, default=None, metavar="COUNT",
                       help="override how many derived seeds score each policy")
    train.add_argument("--jobs", type=int, default=None, help="worker processes for task training")

    ev = sub.add_parser("eval", help="evaluate a checkpoint, write per-slot traces")
    ev.add_argument("--checkpoint", required=True, help="policy checkpoint file")
    ev.add_argument("--scenario", required=True, help="scenario TOML file")
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--eval-seeds", default="0", metavar="S1,S2,...",
                    help="comma-separated episode seeds")
    ev.add_argument("--drain-double-prob", type=float, default=0.0,
                    help="per-slot probability each sensor drains at double rate")

    traj = sub.add_parser("trajectory", help="replay one episode, write the charger path")
    traj.add_argument("--checkpoint", required=True, help="policy checkpoint file")
    traj.add_argument("--scenario", required=True, help="scenario TOML file")
    traj.add_argument("--out", required=True, help="output directory")
    traj.add_argument("--seed", type=int, default=0, help="episode seed")

    base = sub.add_parser("baseline", help="run a reference policy over seeds")
    base.add_argument("--scenario", required=True, help="scenario TOML file")
    base.add_argument("--algo", required=True, choices=("random", "greedy_emergency", "scalar_ppo"),
                      help="baseline kind")
    base.add_argument("--out", required=True, help="output directory")
    base.add_argument("--seed", type=int, default=0, help="baseline seed (init and training)")
    base.add_argument("--eval-seeds", default="0,1,2,3,4", metavar="S1,S2,...",
                      help="comma-separated episode seeds")
    base.add_argument("--weight", default="1,0", metavar="W1,W2",
                      help="objective weights (scalar_ppo only)")
    base.add_argument("--train-iters", type=int, default=60,
                      help="training iterations (scalar_ppo only)")
    return parser


def _start_manifest(command: str, args, scenario_path: str, algo_path: str,
                    manifest_id: str) -> RunManifest:
    return RunManifest(
        manifest_id=manifest_id,
        command=command,
        argv=sys.argv[1:] if sys.argv else [],
        seed=int(getattr(args, "seed", 0)),
        scenario_path=scenario_path,
        algo_path=algo_path,
        out_dir=str(args.out),
        started_at=utc_stamp(),
    )


def _finish(manifest: RunManifest, out_dir: Path, artifacts: list[str]) -> None:
    manifest.artifacts = sorted(artifacts)
    manifest.finished_at = utc_stamp()
    manifest.status = "ok"
    write_manifest(manifest, out_dir)


def cmd_train(args) -> int:
    scenario, rewards = load_scenario(args.scenario)
    algo = load_algo_config(args.algo) if args.algo else AlgoConfig()
    overrides = {}
    if args.generations is not None:
        overrides["generations"] = args.generations
    if args.mode is not None:
        overrides["tppe_mode"] = args.mode
    if args.eval_seeds is not None:
        overrides["eval_seed_count"] = args.eval_seeds
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if overrides:
        algo = dataclasses.replace(algo, **overrides)

    inputs = [args.scenario] + ([args.algo] if args.algo else [])
    manifest_id = compute_manifest_id("train", args.seed, inputs, extras=overrides)
    out = Path(args.out)
    manifest = _start_manifest("train", args, args.scenario, args.algo or "", manifest_id)

    result = emoppo_tml(scenario, rewards, algo, master_seed=args.seed)

    artifacts = []
    archive_rows = []
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for k, entry in enumerate(result.archive.entries):
        rel = f"checkpoints/entry_{k:04d}.ckpt"
        meta = dict(entry.policy_meta)
        meta.update(
            objectives=[float(entry.objectives[0]), float(entry.objectives[1])],
            weight=[float(entry.weight[0]), float(entry.weight[1])],
            generation=entry.generation,
            task_uid=entry.task_uid,
            gamma=algo.gamma,
            eval_seeds=[int(s) for s in result.eval_seeds],
            manifest_id=manifest_id,
        )
        save_checkpoint(out / rel, entry.policy.params(), meta, seed=args.seed)
        artifacts.append(rel)
        archive_rows.append(
            (float(entry.objectives[0]), float(entry.objectives[1]),
             entry.generation, entry.task_uid, rel)
        )
    write_csv(out / "archive.csv", ["f1", "f2", "generation", "task_id", "checkpoint_path"],
              archive_rows, manifest_id)
    artifacts.append("archive.csv")

    gen_rows = [
        (r.generation, r.archive_size, float(r.hypervolume), float(r.mean_diversity),
         _weights_cell(r.selected_weights))
        for r in result.generation_rows
    ]
    write_csv(out / "generation_metrics.csv",
              ["generation", "archive_size", "hypervolume", "mean_diversity", "selected_weights"],
              gen_rows, manifest_id)
    artifacts.append("generation_metrics.csv")

    diag_rows = [[row.get(k, "") for k in DIAG_HEADER] for row in result.diagnostics]
    write_csv(out / "train_diagnostics.csv", DIAG_HEADER, diag_rows, manifest_id)
    artifacts.append("train_diagnostics.csv")

    manifest.extras = {
        "generations": algo.generations,
        "archive_size": len(result.archive),
        "hypervolume": result.archive.hypervolume(),
        "warmup_hypervolume": result.warmup_hypervolume,
        "eval_seeds": [int(s) for s in result.eval_seeds],
    }
    _finish(manifest, out, artifacts)
    return 0


def _trace_rows(policy, scenario, rewards, seed: int, gamma: float,
                drain_double_prob: float = 0.0):
    """Per-slot series for one deterministic episode, starting at t = 0."""
    res = rollout(
        policy, scenario, rewards, seed, gamma,
        stochastic=False, drain_double_prob=drain_double_prob, collect_ledgers=True,
    )
    probe = ChargingEnv(scenario, rewards)
    probe.reset(seed)
    init = probe.state
    track = res.batch.charger_track[:, 0, :]
    ledgers = res.batch.ledgers[0]
    rows = [(
        0, float(track[0, 0]), float(track[0, 1]), float(track[0, 2]), 0,
        float(init.sensor_alive.mean()), 0.0, 0.0, 0.0, 0.0,
        int(scenario.n_sensors - init.sensor_alive.sum()), 0.0, 0.0,
    )]
    for t, led in enumerate(ledgers, start=1):
        rv = assemble_reward(led, rewards)
        rows.append((
            t, float(track[t, 0]), float(track[t, 1]), float(track[t, 2]),
            int(led.docked), float(led.r_surv), float(led.eta),
            float(led.e_move), float(led.e_charge_total), float(led.e_loss_total),
            int(led.n_dead), float(rv.r1), float(rv.r2),
        ))
    return rows, res


def cmd_eval(args) -> int:
    seeds = _parse_seed_list(args.eval_seeds)
    policy, data = load_policy(args.checkpoint)
    scenario, rewards = load_scenario(args.scenario)
    gamma = float(data.meta.get("gamma", 0.98))
    manifest_id = compute_manifest_id(
        "eval", seeds[0], [args.scenario, args.checkpoint],
        extras={"seeds": seeds, "drain_double_prob": args.drain_double_prob},
    )
    out = Path(args.out)
    manifest = _start_manifest("eval", args, args.scenario, "", manifest_id)
    manifest.seed = seeds[0]

    artifacts = []
    summary = []
    for s in seeds:
        rows, res = _trace_rows(policy, scenario, rewards, s, gamma,
                                drain_double_prob=args.drain_double_prob)
        rel = f"trace_{s}.csv"
        write_csv(out / rel, TRACE_HEADER, rows, manifest_id)
        artifacts.append(rel)
        summary.append((s, float(res.objectives[0]), float(res.objectives[1])))
    write_csv(out / "eval_summary.csv", ["seed", "f1", "f2"], summary, manifest_id)
    artifacts.append("eval_summary.csv")

    arr = np.array([[r[1], r[2]] for r in summary])
    manifest.extras = {
        "checkpoint": str(args.checkpoint),
        "mean_f1": float(arr[:, 0].mean()),
        "mean_f2": float(arr[:, 1].mean()),
        "drain_double_prob": args.drain_double_prob,
    }
    _finish(manifest, out, artifacts)
    return 0


def cmd_trajectory(args) -> int:
    policy, data = load_policy(args.checkpoint)
    scenario, rewards = load_scenario(args.scenario)
    gamma = float(data.meta.get("gamma", 0.98))
    manifest_id = compute_manifest_id(
        "trajectory", args.seed, [args.scenario, args.checkpoint]
    )
    out = Path(args.out)
    manifest = _start_manifest("trajectory", args, args.scenario, "", manifest_id)

    res = rollout(policy, scenario, rewards, args.seed, gamma,
                  stochastic=False, collect_ledgers=True)
    track = res.batch.charger_track[:, 0, :]
    ledgers = res.batch.ledgers[0]
    rows = [(0, float(track[0, 0]), float(track[0, 1]), 0)]
    for t, led in enumerate(ledgers, start=1):
        rows.append((t, float(track[t, 0]), float(track[t, 1]), int(led.docked)))
    write_csv(out / "trajectory.csv", ["t", "x", "y", "docked"], rows, manifest_id)

    manifest.extras = {"checkpoint": str(args.checkpoint),
                       "f1": float(res.objectives[0]), "f2": float(res.objectives[1])}
    _finish(manifest, out, ["trajectory.csv"])
    return 0


def cmd_baseline(args) -> int:
    seeds = _parse_seed_list(args.eval_seeds)
    scenario, rewards = load_scenario(args.scenario)
    weight = _parse_weight(args.weight) if args.algo == "scalar_ppo" else None
    spec = BaselineSpec(kind=args.algo, seed=args.seed, weight=weight,
                        train_iters=args.train_iters)
    manifest_id = compute_manifest_id(
        "baseline", args.seed, [args.scenario],
        extras={"kind": args.algo, "seeds": seeds, "weight": list(weight or ()),
                "train_iters": args.train_iters},
    )
    out = Path(args.out)
    manifest = _start_manifest("baseline", args, args.scenario, "", manifest_id)

    result = run_baseline(spec, scenario, rewards, seeds)
    rows = [(int(s), float(result.per_seed[i, 0]), float(result.per_seed[i, 1]))
            for i, s in enumerate(seeds)]
    write_csv(out / "baseline_results.csv", ["seed", "f1", "f2"], rows, manifest_id)
    summary = [(args.algo, len(seeds),
                float(result.mean[0]), float(result.mean[1]),
                float(result.std[0]), float(result.std[1]))]
    write_csv(out / "baseline_summary.csv",
              ["kind", "n_seeds", "mean_f1", "mean_f2", "std_f1", "std_f2"],
              summary, manifest_id)

    manifest.extras = {"kind": args.algo, "mean_f1": float(result.mean[0]),
                       "mean_f2": float(result.mean[1])}
    _finish(manifest, out, ["baseline_results.csv", "baseline_summary.csv"])
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "trajectory": cmd_trajectory,
    "baseline": cmd_baseline,
}


def _error_record(command: str, exc: Exception) -> str:
    return json.dumps(
        {"error": type(exc).__name__, "message": str(exc), "command": command},
        sort_keys=True,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _COMMANDS[args.command]
    try:
        return handler(args)
    except CONFIG_ERRORS as e:
        print(_error_record(args.command, e), file=sys.stderr)
        return 2
    except MochargeError as e:
        print(_error_record(args.command, e), file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - boundary: report, then fail
        print(_error_record(args.command, e), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
