"""Command-line entry points: gen-data, train-diffuser, eval-diffuser, run, plot.

Every failure exits nonzero with a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bank import BankTrainConfig, bank_from_bytes, bank_to_bytes, train_bank
from .envs import collect_offline, load_dataset, make_env, make_policy, save_dataset
from .harness import load_config, measure_expected_length, plot_learning_curves, run_experiment


def _env_from_args(args):
    kwargs = {}
    if getattr(args, "goal", None):
        kwargs["goal"] = tuple(float(v) for v in args.goal.split(","))
    if getattr(args, "noise", None) is not None:
        kwargs["noise"] = args.noise
    if getattr(args, "horizon", None) is not None:
        kwargs["horizon"] = args.horizon
    return make_env(args.env, **kwargs)


def _cmd_gen_data(args) -> int:
    env = _env_from_args(args)
    policy = make_policy(env, args.tier, args.flip_prob)
    trajs = collect_offline(env, policy, args.episodes, args.seed)
    save_dataset(trajs, args.out)
    print(json.dumps({"episodes": len(trajs), "mean_length": float(np.mean([len(t) for t in trajs])), "out": args.out}))
    return 0


def _cmd_train_diffuser(args) -> int:
    env = _env_from_args(args)
    trajs = load_dataset(args.data)
    cfg = BankTrainConfig(
        train_steps=args.steps,
        batch=args.batch,
        hidden=tuple(int(h) for h in args.hidden.split(",")),
        diffusion_steps=args.n_steps,
        n_actions=env.spec.n_actions,
    )
    lengths = [int(k) for k in args.lengths.split(",")]
    bank = train_bank(trajs, lengths, cfg, np.random.default_rng(args.seed))
    Path(args.out).write_bytes(bank_to_bytes(bank))
    print(json.dumps({"models": len(bank.models), "presets": bank.presets, "out": args.out}))
    return 0


def _cmd_eval_diffuser(args) -> int:
    env = _env_from_args(args)
    bank = bank_from_bytes(Path(args.bank).read_bytes())
    rng = np.random.default_rng(args.seed)
    lengths, k_stars, exact, onehot_ok, reward_ok = [], [], 0, 0, 0
    for _ in range(args.n):
        state = env.reset(rng)
        for _ in range(int(rng.integers(0, 11))):
            nxt, _, done = env.step(int(rng.integers(env.spec.n_actions)))
            if done:
                break
            state = nxt
        k_stars.append(bank.estimate_length(state))
        traj = bank.generate(state, 0, rng)
        lengths.append(len(traj))
        exact += bool(np.array_equal(traj.states[0], state))
        onehot_ok += bool(np.all((traj.actions >= 0) & (traj.actions < env.spec.n_actions)))
        reward_ok += bool(np.all((traj.rewards >= 0.0) & (traj.rewards <= 1.0)))
    expected_l = measure_expected_length(bank, env, args.n, np.random.default_rng(args.seed + 1))
    report = {
        "n": args.n,
        "mean_length": float(np.mean(lengths)),
        "min_length": int(np.min(lengths)),
        "max_length": int(np.max(lengths)),
        "expected_length": expected_l,
        "first_state_exact_rate": exact / args.n,
        "valid_action_rate": onehot_ok / args.n,
        "reward_in_range_rate": reward_ok / args.n,
        "k_star_counts": {str(k): int(c) for k, c in zip(*np.unique(k_stars, return_counts=True))},
    }
    print(json.dumps(report))
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = run_experiment(cfg)
    print(
        json.dumps(
            {
                "output_dir": result["output_dir"],
                "aggregate_csv": result["aggregate_csv"],
                "seeds_completed": sorted(result["per_seed_rows"]),
                "failures": result["failures"],
            }
        )
    )
    return 0


def _cmd_plot(args) -> int:
    labels = args.labels.split(",") if args.labels else None
    plot_learning_curves(args.csv, args.out, labels)
    print(json.dumps({"out": args.out, "curves": len(args.csv)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="roll a behavior policy and write a JSONL dataset")
    p.add_argument("--env", choices=("pointgoal", "chain"), default="pointgoal")
    p.add_argument("--tier", choices=("random", "noisy-expert", "expert"), default="expert")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--goal", help="comma-separated goal override, e.g. 0.9,0.9")
    p.add_argument("--noise", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--flip-prob", dest="flip_prob", type=float, default=0.3)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-diffuser", help="pretrain the diffuser bank on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--env", choices=("pointgoal", "chain"), default="pointgoal")
    p.add_argument("--lengths", default="5,10,15,20,25")
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--hidden", default="256,256,256")
    p.add_argument("--n-steps", dest="n_steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--goal")
    p.add_argument("--noise", type=float)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=_cmd_train_diffuser)

    p = sub.add_parser("eval-diffuser", help="report generation-quality statistics for a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--env", choices=("pointgoal", "chain"), default="pointgoal")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--goal")
    p.add_argument("--noise", type=float)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=_cmd_eval_diffuser)

    p = sub.add_parser("run", help="execute an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("plot", help="draw median/quartile learning curves from aggregate CSVs")
    p.add_argument("--csv", action="append", required=True, help="aggregate CSV; repeat to overlay runs")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="comma-separated legend labels")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
