"""Single command-line entry point: serve, demos, filter, replay, train,
evaluate, bench.

Every command except serve is deterministic given its flags and seed; train
and evaluate persist their effective configuration next to their outputs.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .envs import TASK_NAMES, make_env
from .errors import ConfigError, DexhandError
from .hand_model import load_hand_model

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _effective_config(args, extra: dict | None = None) -> dict:
    doc = {k: v for k, v in sorted(vars(args).items()) if k != "func" and not k.startswith("_")}
    for key, value in list(doc.items()):
        if isinstance(value, Path):
            doc[key] = str(value)
    if extra:
        doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args) -> int:
    import logging

    from .retarget import default_calibration, load_calibration
    from .service import ServiceConfig, serve

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    model = load_hand_model(args.model)
    cal = load_calibration(args.calibration) if args.calibration else default_calibration(model)
    cfg = ServiceConfig(
        host=args.host,
        port=args.port,
        static_dir=Path(args.static_dir) if args.static_dir else None,
        out_dir=Path(args.out_dir),
        model=model,
        calibration=cal,
        time_scale=args.time_scale,
    )
    print(f"serving on ws://{cfg.host}:{cfg.port} (out: {cfg.out_dir})", flush=True)
    try:
        serve(cfg)
    except OSError as exc:
        print(f"error: failed to bind {cfg.host}:{cfg.port}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


# ---------------------------------------------------------------------------
# demos / filter / replay


def cmd_demos(args) -> int:
    from .demos import save_demoset, scripted_demoset

    model = load_hand_model(args.model)
    ds = scripted_demoset(args.task, args.count, seed=args.seed, model=model)
    save_demoset(ds, args.out)
    print(f"recorded {len(ds.demonstrations)} scripted demonstrations "
          f"({ds.n_transitions()} transitions) -> {args.out}")
    return 0


def cmd_filter(args) -> int:
    from .demos import filter_demoset, load_demoset, save_demoset

    ds = load_demoset(args.demos)
    before = ds.n_transitions()
    out = filter_demoset(ds, threshold=args.threshold)
    after = out.n_transitions()
    save_demoset(out, args.out)
    print(f"filter threshold {args.threshold} m: retained {after}/{before} transitions "
          f"({before - after} removed) -> {args.out}")
    return 0


def cmd_replay(args) -> int:
    from .demos import DemoSet, save_demoset
    from .retarget import default_calibration, load_calibration
    from .session import replay_session

    model = load_hand_model(args.model)
    cal = load_calibration(args.calibration) if args.calibration else default_calibration(model)
    demos, success = replay_session(args.log, model=model, calibration=cal)
    if not demos:
        print("error: replay produced no valid demonstration (fewer than 2 transitions)", file=sys.stderr)
        return RUNTIME_ERROR
    task = demos[0].task
    save_demoset(DemoSet(task=task, demonstrations=demos), args.out)
    print(f"replayed {args.log}: task={task} success={success} "
          f"demos={len(demos)} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _curve_to_csv(curve) -> str:
    lines = ["iteration,env_steps,mean_return,success_rate"]
    for row in curve:
        lines.append(f"{row.iteration},{row.env_steps},{row.mean_return!r},{row.success_rate!r}")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    from .demos import filter_demoset, load_demoset
    from .imitation import bc_train, build_index, save_index, save_policy
    from .presets import bc_config, inn_params, load_presets, train_config

    if args.algo in ("inn", "bc", "bcrl", "dapg") and not args.demos:
        raise UsageError(f"--algo {args.algo} requires --demos")
    if args.algo == "ppo" and args.demos:
        raise UsageError("--algo ppo is demonstration-free; remove --demos")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_hand_model(args.model)
    presets = load_presets()

    demoset = None
    if args.demos:
        demoset = load_demoset(args.demos)
        if demoset.task != args.task:
            raise UsageError(
                f"demonstrations are for task {demoset.task!r}, not {args.task!r}"
            )
        if not demoset.filter_applied:
            demoset = filter_demoset(demoset)

    manifest = {"algorithm": args.algo, "task": args.task, "seed": args.seed, "outputs": []}

    if args.algo == "inn":
        params = inn_params(presets)
        if args.k is not None:
            params["k"] = args.k
        if args.bandwidth is not None:
            params["bandwidth"] = args.bandwidth
        index = build_index(demoset, **params)
        save_index(index, out_dir / "index.json")
        manifest["outputs"] = ["index.json"]
        _write_json(out_dir / "config.json", _effective_config(args, {"resolved": params}))
        print(f"built neighbor index with {index.points.shape[0]} rows -> {out_dir / 'index.json'}")
    elif args.algo == "bc":
        result = bc_train(demoset, bc_config(presets), seed=args.seed)
        save_policy(result.policy, out_dir / "policy.json")
        losses = "epoch,loss\n" + "\n".join(f"{i},{v!r}" for i, v in enumerate(result.losses)) + "\n"
        (out_dir / "curve.csv").write_text(losses)
        manifest["outputs"] = ["policy.json", "curve.csv"]
        manifest["final_loss"] = result.final_loss
        _write_json(out_dir / "config.json", _effective_config(args))
        print(f"behavior cloning final training loss {result.final_loss:.3e} -> {out_dir / 'policy.json'}")
    else:
        from .imitation import save_policy as _save_policy
        from .rl import train

        cfg = train_config(args.algo, args.task, presets)
        if args.iterations is not None:
            from dataclasses import replace

            cfg = replace(cfg, iterations=args.iterations)
        result = train(args.algo, args.task, demoset, cfg, seed=args.seed, model=model)
        _save_policy(result.policy, out_dir / "policy.json")
        _save_policy(result.final_policy, out_dir / "policy_final.json")
        (out_dir / "curve.csv").write_text(_curve_to_csv(result.curve))
        manifest["outputs"] = ["policy.json", "policy_final.json", "curve.csv"]
        manifest["best_iteration"] = result.best_iteration
        _write_json(out_dir / "config.json", _effective_config(args, {"iterations": cfg.iterations}))
        final = result.curve[-1]
        print(
            f"trained {args.algo} on {args.task}: {final.env_steps} env steps, "
            f"checkpoint from iteration {result.best_iteration} -> {out_dir / 'policy.json'}"
        )
    _write_json(out_dir / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    from .imitation import bc_action, load_index, load_policy, nn_action
    from .rl import evaluate_policy
    from .scripted import run_expert_episode

    if args.episodes <= 0:
        raise UsageError("--episodes must be positive")
    sources = [s for s in (args.policy, args.index) if s] + (["scripted"] if args.scripted else [])
    if len(sources) != 1:
        raise UsageError("exactly one of --policy, --index, --scripted is required")

    model = load_hand_model(args.model)
    angles = None
    if args.angles:
        try:
            angles = [float(a) for a in args.angles.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --angles: {exc}") from exc
        if args.task != "rotating":
            raise UsageError("--angles sweeps are defined for the rotating task")

    def run_once(env):
        if args.scripted:
            outcomes = []
            for ep in range(args.episodes):
                seed = args.seed_base + ep
                success, _rows = run_expert_episode(env, seed)
                outcomes.append({"seed": seed, "success": success})
            rate = sum(o["success"] for o in outcomes) / len(outcomes)
            return rate, outcomes
        if args.policy:
            policy = load_policy(args.policy)
            return evaluate_policy(env, lambda obs: bc_action(policy, obs, model), args.episodes, args.seed_base)
        index = load_index(args.index)
        return evaluate_policy(env, lambda obs: nn_action(index, obs), args.episodes, args.seed_base)

    rows = []
    if angles:
        for angle in angles:
            env = make_env(args.task, model=model, success_threshold=math.radians(angle))
            rate, outcomes = run_once(env)
            rows.append((f"{angle:g} deg", rate, outcomes))
    else:
        env = make_env(args.task, model=model)
        rate, outcomes = run_once(env)
        rows.append(("success", rate, outcomes))

    print(f"task: {args.task}  episodes: {args.episodes}  seeds: "
          f"{args.seed_base}..{args.seed_base + args.episodes - 1}")
    for label, rate, outcomes in rows:
        marks = " ".join("S" if o["success"] else "F" for o in outcomes)
        print(f"  {label:>10}: {sum(o['success'] for o in outcomes)}/{len(outcomes)} ({rate:.0%})  [{marks}]")
    if args.out:
        doc = {
            "task": args.task,
            "episodes": args.episodes,
            "seed_base": args.seed_base,
            "results": [
                {"label": label, "success_rate": rate, "outcomes": outcomes}
                for label, rate, outcomes in rows
            ],
        }
        _write_json(Path(args.out), doc)
    return 0


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    from .benchmark import run_benchmarks

    run_benchmarks(args.steps)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dexhand",
        description="Desk-scale dexterous hand teleoperation and imitation learning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the teleoperation service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--static-dir", default=None, help="directory with the browser client bundle")
    p.add_argument("--out-dir", default="runs/teleop", help="demonstrations and session logs land here")
    p.add_argument("--model", default=None, help="hand model file (default: packaged)")
    p.add_argument("--calibration", default=None, help="calibration file (default: synthetic)")
    p.add_argument("--time-scale", type=float, default=1.0, help="virtual-time multiplier (testing)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("demos", help="record scripted demonstrations")
    p.add_argument("--task", required=True, choices=TASK_NAMES)
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_demos)

    p = sub.add_parser("filter", help="apply the displacement filter to a demo file")
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.02)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("replay", help="re-execute a session log into a demo file")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--calibration", default=None)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("train", help="train a policy or build an imitation index")
    p.add_argument("--algo", required=True, choices=("bc", "inn", "ppo", "bcrl", "dapg"))
    p.add_argument("--task", required=True, choices=TASK_NAMES)
    p.add_argument("--demos", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--iterations", type=int, default=None, help="override the preset budget")
    p.add_argument("--k", type=int, default=None, help="neighbor count (inn)")
    p.add_argument("--bandwidth", type=float, default=None, help="kernel bandwidth (inn)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run seeded evaluation episodes")
    p.add_argument("--task", required=True, choices=TASK_NAMES)
    p.add_argument("--policy", default=None, help="policy artifact to evaluate")
    p.add_argument("--index", default=None, help="neighbor index artifact to evaluate")
    p.add_argument("--scripted", action="store_true", help="evaluate the scripted expert")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed-base", type=int, default=10_000)
    p.add_argument("--angles", default=None, help="comma-separated rotation thresholds in degrees")
    p.add_argument("--model", default=None)
    p.add_argument("--out", default=None, help="write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="compare the compiled and pure-Python kernel backends")
    p.add_argument("--steps", type=int, default=2000)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except DexhandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
