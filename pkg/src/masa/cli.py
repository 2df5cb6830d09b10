"""Command-line entry point.

Exit codes: 0 success, 1 property violation or failed run, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_expert_checkpoint
from .config import ConfigError, RunConfig
from .envs import UnknownEnvError, make_env
from .metrics import MetricsError, MetricsWriter, aggregate_run_dir
from .nn import CheckpointError
from .offline import DatasetError, augment_symmetric, evaluate_policy, generate_dataset, load_dataset, save_dataset
from .symmetry import DimensionError, LayoutError

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2
EVAL_SEED_OFFSET = 7

log = logging.getLogger("masa")


class UsageError(Exception):
    pass


def _load_config(args) -> RunConfig:
    path = args.config or args.config_pos
    if not path:
        raise UsageError("a config file is required (--config PATH or positional)")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    return RunConfig.from_json(text)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    root = cfg.output_root()
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(cfg.to_json() + "\n")
    failed = []
    for seed in cfg.seeds:
        out = root / f"seed_{seed}"
        try:
            if cfg.algorithm == "ppo":
                from .ppo import train_online

                res = train_online(cfg, seed, out)
            else:
                from .offline import train_offline

                res = train_offline(cfg, seed, out_dir=out)
        except (FloatingPointError, ValueError) as exc:
            log.error("seed %d failed: %s", seed, exc)
            failed.append(seed)
            continue
        ev = res["eval"]
        print(f"seed {seed}: success {ev['success_rate']:.3f} return {ev['episodic_return_mean']:.3f} -> {out}")
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_eval(args) -> int:
    if args.expert:
        if not args.env:
            raise UsageError("--expert needs --env")
        env = make_env(args.env, **json.loads(args.env_params or "{}"))
        path = Path(args.checkpoint or "expert.bin")
        save_expert_checkpoint(path, env)
    elif not args.checkpoint:
        raise UsageError("eval needs a checkpoint path")
    path = Path(args.checkpoint or "expert.bin")
    ckpt = load_checkpoint(path)
    env = ckpt.env
    if args.env and not args.expert:
        env = make_env(args.env, **json.loads(args.env_params or "{}"))
        if env.spec.to_dict() != ckpt.env.spec.to_dict():
            raise UsageError(f"checkpoint was trained on {ckpt.env.env_id}; env {args.env} has a different layout")
        ckpt.env = env
    seed = args.seed * 1_000_003 + EVAL_SEED_OFFSET
    success, mean_return = evaluate_policy(ckpt.act, env, args.episodes, seed)
    out = Path(args.out) if args.out else path.with_name(path.stem + ".eval.csv")
    with MetricsWriter(out) as w:
        w.write(dict(run_id=path.stem, variant=ckpt.meta.get("variant", ckpt.kind), seed=args.seed, phase="eval",
                     step=0, episodic_return_mean=mean_return, success_rate=success, episodes=args.episodes))
    print(json.dumps(dict(checkpoint=str(path), success_rate=success, mean_return=mean_return,
                          episodes=args.episodes)))
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    cfg = _load_config(args)
    env = make_env(cfg.env_id, **cfg.env_params)
    ds = generate_dataset(env, cfg.dataset.policy_kind, cfg.dataset.episodes, cfg.seeds[0])
    out = Path(args.out or cfg.dataset.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(json.dumps(dict(path=str(out), transitions=len(ds), mean_success=ds.meta["mean_success"],
                          mean_return=ds.meta["mean_return"])))
    return EXIT_OK


def cmd_augment(args) -> int:
    src = Path(args.dataset)
    ds = load_dataset(src)
    aug = augment_symmetric(ds)
    out = Path(args.out) if args.out else src.with_name(src.stem + ".aug" + src.suffix)
    save_dataset(aug, out)
    print(json.dumps(dict(path=str(out), transitions=len(aug), source_transitions=len(ds))))
    return EXIT_OK


def cmd_check_symmetry(args) -> int:
    from .checks import symmetry_report

    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if args.config or args.config_pos:
        cfg = _load_config(args)
        env = make_env(cfg.env_id, **cfg.env_params)
        if ckpt is not None and ckpt.env.spec.to_dict() != env.spec.to_dict():
            raise UsageError("checkpoint and config describe different environments")
    elif ckpt is not None:
        env = ckpt.env
    elif args.env:
        env = make_env(args.env, **json.loads(args.env_params or "{}"))
    else:
        raise UsageError("check-symmetry needs a config, --checkpoint or --env")
    results = symmetry_report(env, ckpt, probes=args.probes, seed=args.seed)
    report = dict(env_id=env.env_id, env_params=env.params(), checkpoint=args.checkpoint,
                  passed=all(r.ok for r in results), results=[r.to_dict() for r in results])
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:36s} {r.residual:.3e} (tol {r.tolerance:.0e})")
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def cmd_aggregate(args) -> int:
    out = aggregate_run_dir(args.run_dir, args.out)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="masa", description="Symmetric multi-agent RL experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config_pos", nargs="?", metavar="CONFIG")
        sp.add_argument("--config")

    sp = sub.add_parser("train", help="train every seed of a run config")
    with_config(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    sp.add_argument("checkpoint", nargs="?")
    sp.add_argument("--env")
    sp.add_argument("--env-params")
    sp.add_argument("--episodes", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--expert", action="store_true", help="write and score the scripted-expert checkpoint")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("make-dataset", help="generate a scripted dataset")
    with_config(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_make_dataset)

    sp = sub.add_parser("augment", help="add symmetric copies of every transition")
    sp.add_argument("dataset")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("check-symmetry", help="group axioms, MDP commutation and network residuals")
    with_config(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--env")
    sp.add_argument("--env-params")
    sp.add_argument("--probes", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_check_symmetry)

    sp = sub.add_parser("aggregate", help="median / quartile curves across seeds")
    sp.add_argument("run_dir")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_aggregate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, UnknownEnvError, LayoutError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, MetricsError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
