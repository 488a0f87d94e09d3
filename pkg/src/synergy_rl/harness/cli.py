"""Command-line entry point.

Subcommands: pretrain, train, sweep-lambda, eval, plot.  Exit codes:
0 success, 2 unusable configuration or arguments, 3 numeric failure
inside an optimizer.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import dynamics as dyn
from ..envs import make_env, single_agent_variant
from ..envs.base import EnvConfig
from ..errors import ConfigurationError, NumericError
from . import experiments as ex
from . import plotting
from .evaluate import evaluate as run_rollouts
from .evaluate import load_policies


def _env_config(args) -> EnvConfig:
    return EnvConfig(name=args.env, n_agents=args.agents, horizon=args.horizon)


def _cmd_pretrain(args) -> int:
    if args.samples < 1:
        raise ConfigurationError("--samples must be >= 1")
    base = _env_config(args)
    try:
        make_env(base)
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    if not 0 <= args.agent < base.n_agents:
        raise ConfigurationError(f"--agent must be in [0, {base.n_agents})")
    variant = single_agent_variant(base, args.agent)

    env = make_env(variant)
    rng = np.random.default_rng(args.seed)
    xs, ys = dyn.collect_single_agent_dataset(env, args.agent, args.samples, rng)
    spec = dyn.single_model_spec(env.schema, args.agent)
    model, report = dyn.fit_forward_model(spec, xs, ys, rng)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dyn.save_model(out, model)
    dataset_path = out.with_suffix(out.suffix + ".dataset.tsv")
    _write_dataset(dataset_path, xs, ys)
    summary = {
        "env": base.name,
        "n_agents": base.n_agents,
        "agent": args.agent,
        "n_samples": args.samples,
        "seed": args.seed,
        "n_train": report.n_train,
        "n_val": report.n_val,
        "val_mse": report.val_mse,
        "target_variance": report.target_variance,
        "val_indices": [int(i) for i in report.val_indices],
        "dataset": dataset_path.name,
    }
    out.with_suffix(out.suffix + ".summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {out} (val mse {report.val_mse:.6g} on {report.n_val} held-out samples)")
    return 0


def _write_dataset(path: Path, xs: np.ndarray, ys: np.ndarray) -> None:
    """Columnar text, one flattened transition per record: x columns then y."""
    header = "\t".join(
        [f"x{i}" for i in range(xs.shape[1])] + [f"y{i}" for i in range(ys.shape[1])]
    )
    rows = np.concatenate([xs, ys], axis=1)
    lines = [header] + ["\t".join(repr(float(v)) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def read_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    names = lines[0].split("\t")
    n_x = sum(1 for n in names if n.startswith("x"))
    data = np.array([[float(v) for v in ln.split("\t")] for ln in lines[1:]])
    return data[:, :n_x], data[:, n_x:]


def _cmd_train(args) -> int:
    spec = ex.parse_spec(args.spec)
    records = ex.run_experiment(spec)
    for r in records:
        c = r.config
        print(
            f"{c['method']:16s} lam={c['lam']:g} seed={c['seed']}: "
            f"final success {r.final_success_rate:.3f} "
            f"({r.env_steps} steps, {r.episodes} episodes, {r.wall_clock_s:.0f}s)"
        )
    return 0


def _cmd_sweep_lambda(args) -> int:
    spec = ex.parse_spec(args.spec)
    records = ex.run_experiment(spec)
    table = ex.lambda_sweep_table(spec, records)
    out = Path(spec.out_dir) / "lambda_sweep.csv"
    ex.write_sweep_table(table, out)
    print(f"{'method':16s} {'lambda':>8s} {'final':>8s} {'std':>8s}")
    for row in table:
        print(
            f"{row['method']:16s} {row['lambda']:8g} "
            f"{row['mean_final_success']:8.3f} {row['std_final_success']:8.3f}"
        )
    print(f"wrote {out}")
    return 0


def _cmd_eval(args) -> int:
    env = make_env(_env_config(args))
    policies = load_policies(args.checkpoint, env)
    rate = run_rollouts(policies, env, args.episodes, args.seed, stochastic=args.stochastic)
    print(f"success rate: {rate:.4f} over {args.episodes} episodes")
    return 0


def _cmd_plot(args) -> int:
    spec = ex.parse_spec(args.spec)
    groups: dict[str, list[Path]] = {}
    for method in spec.methods:
        for lam in spec.lambdas:
            paths = [
                ex.run_dir(spec, method, lam, seed) / "metrics.csv" for seed in spec.seeds
            ]
            paths = [p for p in paths if p.is_file()]
            if not paths:
                raise ConfigurationError(
                    f"no metrics found under {ex.run_dir(spec, method, lam, spec.seeds[0]).parent}"
                )
            label = method if len(spec.lambdas) == 1 else f"{method} lam={lam:g}"
            groups[label] = paths
    out_svg = Path(args.out) if args.out else Path(spec.out_dir) / "curves.svg"
    out_csv = out_svg.with_suffix(".csv")
    plotting.plot_learning_curves(groups, out_svg, out_csv, title=spec.env.name)
    print(f"wrote {out_svg} and {out_csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synergy-rl")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="fit one agent's forward model from random interaction")
    p.add_argument("--env", required=True)
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--agent", type=int, required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("train", help="run the experiment matrix of a spec file")
    p.add_argument("--spec", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("sweep-lambda", help="run the matrix and tabulate final success per lambda")
    p.add_argument("--spec", required=True)
    p.set_defaults(fn=_cmd_sweep_lambda)

    p = sub.add_parser("eval", help="roll out a policy checkpoint")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("plot", help="aggregate a finished spec's curves into an SVG + CSV")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
