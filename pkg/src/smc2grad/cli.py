"""Command-line entry points: generate-data, run, bench."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiment import (
    MODEL_DEFAULT_TIMESTEPS,
    bench_scaling,
    load_config_file,
    make_config,
    run_experiment,
)
from .models import MODEL_NAMES, simulate, true_parameters
from .sampler import PROPOSALS
from .ssm import save_observations


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file; flags override it")
    parser.add_argument("--model", choices=MODEL_NAMES)
    parser.add_argument("--proposal", choices=PROPOSALS)
    parser.add_argument("--n-samples", type=int, dest="n_samples")
    parser.add_argument("--n-particles", type=int, dest="n_particles")
    parser.add_argument("--iterations", type=int, dest="n_iterations")
    parser.add_argument("--timesteps", type=int, dest="n_timesteps")
    parser.add_argument("--step-size", type=float, dest="step_size")
    parser.add_argument("--seed", type=int, dest="master_seed")
    parser.add_argument("--workers", type=int, dest="n_workers")
    parser.add_argument("--mc-runs", type=int, dest="mc_runs")
    parser.add_argument("--data", dest="data_path", help="observation CSV (t,y)")
    parser.add_argument("--data-seed", type=int, dest="data_seed")
    parser.add_argument("--true-theta", dest="true_theta", help="comma-separated values")
    parser.add_argument("--obs-noise-std", type=float, dest="obs_noise_std")
    parser.add_argument("--out", help="output directory")


_CONFIG_OPTION_KEYS = (
    "model",
    "proposal",
    "n_samples",
    "n_particles",
    "n_iterations",
    "n_timesteps",
    "step_size",
    "master_seed",
    "n_workers",
    "mc_runs",
    "data_path",
    "data_seed",
    "true_theta",
    "obs_noise_std",
)


def _config_from_args(args: argparse.Namespace):
    options = load_config_file(args.config) if args.config else {}
    for key in _CONFIG_OPTION_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    if isinstance(options.get("true_theta"), str):
        options["true_theta"] = tuple(
            float(v) for v in options["true_theta"].split(",") if v.strip()
        )
    if "model" not in options:
        raise SystemExit("error: --model (or a config file with one) is required")
    if "proposal" not in options:
        raise SystemExit("error: --proposal (or a config file with one) is required")
    try:
        return make_config(**options)
    except ValueError as exc:
        raise SystemExit(f"error: {exc}") from exc


def _cmd_generate_data(args: argparse.Namespace) -> int:
    theta = (
        tuple(float(v) for v in args.true_theta.split(","))
        if args.true_theta
        else tuple(true_parameters(args.model))
    )
    n_steps = args.timesteps or MODEL_DEFAULT_TIMESTEPS[args.model]
    y = simulate(args.model, theta, n_steps, args.data_seed, args.obs_noise_std)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_observations(out, y)
    meta = {
        "model": args.model,
        "true_theta": list(theta),
        "data_seed": args.data_seed,
        "n_timesteps": n_steps,
        "obs_noise_std": args.obs_noise_std,
    }
    out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {n_steps} observations to {out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    summary = run_experiment(config, out_dir=args.out)
    agg = summary["aggregate"]
    print(f"model={config.model} proposal={config.proposal} mc_runs={config.mc_runs}")
    print(f"recycled estimate (mean over runs): {agg['recycled_estimate_mean']}")
    if agg["mse_mean"] is not None:
        print(f"mse (mean over runs): {agg['mse_mean']:.6g}")
    print(f"normalized ESS (mean over runs): {agg['ess_norm_mean']:.4f}")
    if args.out:
        print(f"artifacts in {args.out}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    counts = [int(v) for v in args.p_list.split(",") if v.strip()]
    out_path = Path(args.out) / "scaling.csv" if args.out else None
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = bench_scaling(config, counts, out_path)
    for row in rows:
        print(f"P={row['workers']}: {row['runtime_s']:.3f}s speedup={row['speedup']:.2f}x")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smc2grad",
        description="Gradient-guided SMC^2 parameter estimation for state-space models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-data", help="simulate observations and write a t,y CSV")
    gen.add_argument("--model", choices=MODEL_NAMES, required=True)
    gen.add_argument("--timesteps", type=int, default=0)
    gen.add_argument("--true-theta", help="comma-separated values (defaults to benchmark truth)")
    gen.add_argument("--data-seed", type=int, default=20240915)
    gen.add_argument("--obs-noise-std", type=float, default=1.0)
    gen.add_argument("--out", required=True, help="output CSV path")
    gen.set_defaults(func=_cmd_generate_data)

    run = sub.add_parser("run", help="run an experiment and write summary/trace artifacts")
    _add_run_options(run)
    run.set_defaults(func=_cmd_run)

    bench = sub.add_parser("bench", help="time the experiment across worker counts")
    _add_run_options(bench)
    bench.add_argument("--p-list", default="1,2,4,8", help="comma-separated worker counts")
    bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
