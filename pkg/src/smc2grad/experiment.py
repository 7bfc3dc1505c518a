"""Experiment orchestration: configs, Monte Carlo repetition, artifacts.

A RunConfig describes one experiment end to end.  Each Monte Carlo
repetition derives its own master seed, shares the single synthetic (or
loaded) dataset, and runs the sampler on the configured worker count.
Everything written to disk -- summary JSON and per-run CSV traces -- is a
pure function of the config, except wall-clock timings, which live under
dedicated 'timing' keys so they can be stripped for comparisons.
"""

from __future__ import annotations

import copy
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .models import MODEL_NAMES, build_model, simulate, true_parameters
from .parallel import physical_worker_limit, run_spmd
from .sampler import (
    PROPOSALS,
    RunReport,
    SamplerSettings,
    recycling_constants,
    run_sampler,
)
from .ssm import TAG_MC_RUN, derive_seed, load_observations, save_observations

__all__ = [
    "RunConfig",
    "DEFAULT_STEP_SIZES",
    "MODEL_DEFAULT_TIMESTEPS",
    "load_config_file",
    "make_config",
    "run_experiment",
    "bench_scaling",
    "strip_timing",
    "generate_dataset",
]

DEFAULT_STEP_SIZES = {
    ("lgssm", "rw"): 0.175,
    ("lgssm", "first-order"): 0.085,
    ("sir", "rw"): 0.01,
    ("sir", "first-order"): 0.006,
}
MODEL_DEFAULT_TIMESTEPS = {"lgssm": 500, "sir": 35}


@dataclass(frozen=True)
class RunConfig:
    model: str
    proposal: str
    n_samples: int = 64
    n_particles: int = 250
    n_iterations: int = 15
    n_timesteps: int = 0  # 0 means the model's benchmark length
    step_size: float = 0.0  # 0 means the tuned default for (model, proposal)
    master_seed: int = 1
    n_workers: int = 1
    mc_runs: int = 1
    data_path: str | None = None
    data_seed: int = 20240915
    true_theta: tuple | None = None
    obs_noise_std: float = 1.0

    def resolved(self) -> "RunConfig":
        """Fill model-dependent defaults and validate."""
        if self.model not in MODEL_NAMES:
            raise ValueError(f"model must be one of {MODEL_NAMES}, got {self.model!r}")
        if self.proposal not in PROPOSALS:
            raise ValueError(f"proposal must be one of {PROPOSALS}, got {self.proposal!r}")
        updates = {}
        if self.n_timesteps == 0:
            updates["n_timesteps"] = MODEL_DEFAULT_TIMESTEPS[self.model]
        if self.step_size == 0.0:
            updates["step_size"] = DEFAULT_STEP_SIZES[(self.model, self.proposal)]
        if self.true_theta is None and self.data_path is None:
            updates["true_theta"] = tuple(float(v) for v in true_parameters(self.model))
        cfg = self if not updates else RunConfig(**{**asdict(self), **updates})
        n, p = cfg.n_samples, cfg.n_workers
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_samples must be a power of two >= 2, got {n}")
        if p < 1 or p & (p - 1):
            raise ValueError(f"n_workers must be a power of two >= 1, got {p}")
        if n % p:
            raise ValueError(f"n_workers={p} must divide n_samples={n}")
        if cfg.n_particles < 2:
            raise ValueError(f"n_particles must be >= 2, got {cfg.n_particles}")
        if cfg.n_iterations < 1:
            raise ValueError(f"n_iterations must be >= 1, got {cfg.n_iterations}")
        if not cfg.step_size > 0.0:
            raise ValueError(f"step_size must be positive, got {cfg.step_size}")
        if cfg.mc_runs < 1:
            raise ValueError(f"mc_runs must be >= 1, got {cfg.mc_runs}")
        if cfg.data_path is None and cfg.n_timesteps < 1:
            raise ValueError(f"n_timesteps must be >= 1, got {cfg.n_timesteps}")
        if cfg.true_theta is not None and len(cfg.true_theta) != len(
            true_parameters(cfg.model)
        ):
            raise ValueError(
                f"true_theta needs {len(true_parameters(cfg.model))} components "
                f"for {cfg.model}, got {len(cfg.true_theta)}"
            )
        return cfg


_CONFIG_KEYS = {f.strip() for f in RunConfig.__dataclass_fields__}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "true_theta":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if key in ("model", "proposal", "data_path"):
        return raw
    if key in ("step_size", "obs_noise_std"):
        return float(raw)
    return int(raw)


def load_config_file(path) -> dict:
    """Parse a 'key = value' config document into RunConfig keyword arguments."""
    options = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        options[key] = _parse_value(key, raw)
    return options


def make_config(**kwargs) -> RunConfig:
    return RunConfig(**kwargs).resolved()


def generate_dataset(config: RunConfig) -> np.ndarray:
    theta = np.asarray(config.true_theta, dtype=np.float64)
    return simulate(
        config.model, theta, config.n_timesteps, config.data_seed, config.obs_noise_std
    )


def _observations(config: RunConfig) -> tuple[np.ndarray, str]:
    if config.data_path is not None:
        return load_observations(config.data_path), config.data_path
    return generate_dataset(config), "generated"


def run_experiment(config: RunConfig, out_dir=None) -> dict:
    """Run mc_runs independent sampler repetitions and aggregate the metrics."""
    config = config.resolved()
    started = time.perf_counter()
    observations, source = _observations(config)
    model = build_model(config.model, observations, config.obs_noise_std)
    truth = None if config.true_theta is None else np.asarray(config.true_theta)

    reports: list[RunReport] = []
    for r in range(config.mc_runs):
        settings = SamplerSettings(
            proposal=config.proposal,
            n_samples=config.n_samples,
            n_particles=config.n_particles,
            n_iterations=config.n_iterations,
            step_size=config.step_size,
            master_seed=derive_seed(config.master_seed, TAG_MC_RUN, r),
        )
        reports.append(run_spmd(run_sampler, config.n_workers, settings, model, truth))

    mse_values = [rep.mse for rep in reports]
    summary = {
        "config": asdict(config),
        "data": {
            "source": source,
            "n_timesteps": int(observations.shape[0]),
            "true_theta": None if truth is None else [float(v) for v in truth],
        },
        "runs": [rep.to_dict() for rep in reports],
        "aggregate": {
            "recycled_estimate_mean": [
                float(v) for v in np.mean([rep.recycled_estimate for rep in reports], axis=0)
            ],
            "mse_per_run": [None if v is None else float(v) for v in mse_values],
            "mse_mean": None
            if any(v is None for v in mse_values)
            else float(np.mean(mse_values)),
            "ess_norm_per_run": [float(rep.ess_norm_mean) for rep in reports],
            "ess_norm_mean": float(np.mean([rep.ess_norm_mean for rep in reports])),
        },
        "timing": {"total_wall_s": time.perf_counter() - started},
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_summary(out / "summary.json", summary)
        for r, rep in enumerate(reports):
            write_trace_csv(out / f"trace_run{r}.csv", rep, truth)
    return summary


def strip_timing(summary: dict) -> dict:
    """A copy of a summary with every 'timing' subtree removed."""
    out = copy.deepcopy(summary)

    def scrub(node):
        if isinstance(node, dict):
            node.pop("timing", None)
            for v in node.values():
                scrub(v)
        elif isinstance(node, list):
            for v in node:
                scrub(v)

    scrub(out)
    return out


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_trace_csv(path, report: RunReport, true_theta=None) -> None:
    """Per-iteration trace: estimates, normalized ESS, resampling, running MSE.

    The running MSE scores the recycled estimate formed from iterations
    1..k; its recycling constants renormalize as k grows.
    """
    dim = report.recycled_estimate.shape[0]
    estimates = np.stack([rec.estimate for rec in report.iterations])
    l_values = np.array([rec.ess_norm * report.n_samples for rec in report.iterations])
    header = (
        ["k"]
        + [f"theta_hat_{d + 1}" for d in range(dim)]
        + ["ess_norm", "resampled", "mse_running"]
    )
    lines = [",".join(header)]
    for k_idx, rec in enumerate(report.iterations):
        constants = recycling_constants(l_values[: k_idx + 1])
        running = constants @ estimates[: k_idx + 1]
        mse = (
            "" if true_theta is None else repr(float(np.mean((running - true_theta) ** 2)))
        )
        cells = [str(rec.k)]
        cells += [repr(float(v)) for v in rec.estimate]
        cells += [repr(float(rec.ess_norm)), str(int(rec.resampled)), mse]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def bench_scaling(config: RunConfig, worker_counts, out_path=None) -> list[dict]:
    """Time the experiment at each worker count and report speedups.

    Counts beyond the host's usable parallelism are dropped with a warning;
    speedup is runtime(1)/runtime(P), so the list must include 1 (it is
    prepended if missing).
    """
    config = config.resolved()
    limit = physical_worker_limit()
    counts = sorted(set(int(p) for p in worker_counts))
    usable = [p for p in counts if p <= limit]
    if len(usable) < len(counts):
        dropped = [p for p in counts if p > limit]
        print(
            f"warning: dropping worker counts {dropped} beyond {limit} usable cores",
            file=sys.stderr,
        )
    if not usable or usable[0] != 1:
        usable = [1] + usable

    rows = []
    base_runtime = None
    for p in usable:
        cfg = RunConfig(**{**asdict(config), "n_workers": p})
        start = time.perf_counter()
        run_experiment(cfg)
        runtime = time.perf_counter() - start
        if base_runtime is None:
            base_runtime = runtime
        rows.append({"workers": p, "runtime_s": runtime, "speedup": base_runtime / runtime})
    if out_path is not None:
        lines = ["P,runtime_s,speedup"]
        lines += [
            f"{row['workers']},{row['runtime_s']:.6f},{row['speedup']:.6f}" for row in rows
        ]
        Path(out_path).write_text("\n".join(lines) + "\n")
    return rows
