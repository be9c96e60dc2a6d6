"""Command-line entry point: ``mfirl <command> ...``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 when a
numeric failure (non-finite values, non-converged expert) stops the run.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .core import ConfigurationError, DemoSet, InvalidArgumentError, NumericError, expected_return, generate_demos
from .envs import ENV_NAMES, VARIANTS, make_env
from .harness import (
    ALGORITHMS,
    TABLE1_BASELINE,
    TABLE1_IRL,
    ExperimentConfig,
    evaluate_reward,
    expert_equilibrium,
    reproduce_table1,
    run_experiment,
    train,
)
from .irl import TrainingLog, load_reward_model, save_reward_model

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from None


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_experts(args) -> None:
    spec = make_env(args.env, args.variant, horizon=args.horizon)
    eq = expert_equilibrium(spec)
    demos = generate_demos(spec, eq.policy, args.agents, args.plays, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(demos.to_json(), fh)
    if args.equilibrium:
        _write_json(args.equilibrium, eq.to_json())


def _load_demos(path) -> DemoSet:
    try:
        return DemoSet.from_json(_read_json(path))
    except (KeyError, TypeError, InvalidArgumentError) as exc:
        raise ConfigurationError(f"malformed demo file {path}: {exc}") from None


def cmd_train(args) -> None:
    demos = _load_demos(args.demos)
    if demos.env != args.env:
        raise ConfigurationError(f"demos were generated on {demos.env!r}, not {args.env!r}")
    doc = _read_json(args.config) if args.config else {}
    doc.setdefault("env", args.env)
    if doc["env"] != args.env:
        raise ConfigurationError(f"config names env {doc['env']!r} but --env is {args.env!r}")
    doc.setdefault("variant", demos.variant)
    doc.setdefault("horizon", demos.T)
    doc.setdefault("algorithm", args.algo)
    cfg = ExperimentConfig.from_dict(doc)
    spec = cfg.spec(demos.variant)
    if abs(spec.gamma - demos.gamma) > 1e-12:
        raise ConfigurationError(f"demo discount {demos.gamma} != environment discount {spec.gamma}")
    model, log = train(args.algo, spec, demos, cfg.irl, cfg.baseline)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_reward_model(args.out, model)
    if args.log:
        if isinstance(log, TrainingLog):
            log.write_csv(args.log)
        else:
            with open(args.log, "w") as fh:
                fh.write("epoch,L_hat,grad_norm_omega\n")
                for epoch, value, norm in log:
                    fh.write(f"{epoch},{value!r},{norm!r}\n")


def cmd_eval(args) -> None:
    try:
        model = load_reward_model(args.reward)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot load reward model {args.reward}: {exc}") from None
    spec = make_env(args.env, args.variant, horizon=args.horizon)
    ev = evaluate_reward(model, spec)
    expert = expert_equilibrium(spec)
    _write_json(args.out, {
        "env": args.env,
        "variant": args.variant,
        "horizon": args.horizon,
        "expected_return": ev.expected_return,
        "expert_expected_return": expected_return(expert.flow, expert.policy, spec),
        "dev_mf": ev.dev_mf,
        "dev_policy": ev.dev_policy,
        "dev_mf_raw": ev.dev_mf_raw,
        "dev_policy_raw": ev.dev_policy_raw,
        "converged": ev.converged,
    })


def cmd_run(args) -> None:
    doc = _read_json(args.config)
    if args.out:
        doc["out_dir"] = args.out
    run_experiment(ExperimentConfig.from_dict(doc))


def cmd_reproduce(args) -> None:
    if args.suite != "table1":
        raise ConfigurationError(f"unknown suite {args.suite!r}")
    irl, baseline = TABLE1_IRL, TABLE1_BASELINE
    if args.epochs:
        irl, baseline = replace(irl, epochs=args.epochs), replace(baseline, epochs=args.epochs)
    reproduce_table1(args.out, seeds=tuple(args.seeds), plays=tuple(args.plays), algorithms=tuple(args.algos),
                     envs=tuple(args.envs), irl=irl, baseline=baseline)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfirl", description="Mean-field game equilibria and inverse RL.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-experts", help="sample expert demonstrations from the ground-truth equilibrium")
    g.add_argument("--env", required=True, choices=ENV_NAMES)
    g.add_argument("--variant", default="original", choices=VARIANTS)
    g.add_argument("--agents", type=int, default=100)
    g.add_argument("--plays", type=int, default=10)
    g.add_argument("--horizon", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--equilibrium", help="also write the expert equilibrium as JSON")
    g.set_defaults(func=cmd_gen_experts)

    t = sub.add_parser("train", help="learn a reward model from demonstrations")
    t.add_argument("--algo", required=True, choices=ALGORITHMS)
    t.add_argument("--demos", required=True)
    t.add_argument("--env", required=True, choices=ENV_NAMES)
    t.add_argument("--config", help="JSON mirroring ExperimentConfig; its irl/baseline blocks are used")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="training log CSV")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a learned reward against the ground truth")
    e.add_argument("--reward", required=True)
    e.add_argument("--env", required=True, choices=ENV_NAMES)
    e.add_argument("--variant", default="original", choices=VARIANTS)
    e.add_argument("--horizon", type=int, default=50)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="run one experiment grid from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="overrides out_dir")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("reproduce", help="desk-scale reproduction suites")
    s.add_argument("--suite", required=True, choices=["table1"])
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    s.add_argument("--plays", type=int, nargs="+", default=[10])
    s.add_argument("--algos", nargs="+", default=list(ALGORITHMS), choices=ALGORITHMS)
    s.add_argument("--envs", nargs="+", default=list(ENV_NAMES), choices=ENV_NAMES)
    s.add_argument("--epochs", type=int, help="override the training epochs of both algorithms")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, InvalidArgumentError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
