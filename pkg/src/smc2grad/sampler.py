"""SMC^2 sampler over model parameters.

Each of N samples carries a parameter vector, an importance log-weight, and
a cached log-posterior/gradient pair evaluated by the particle filter under
that sample's own per-iteration seed.  Proposals are either random walk or
a single Langevin step whose drift uses the filter gradient; the Langevin
L-kernel is the reverse-momentum density, so the weight update needs only
the two momentum norms.

The whole loop is written SPMD: per-sample work touches only the local
shard, and every shared quantity (normalization, ESS, estimates, recycling,
resampling decisions) goes through the deterministic tree collectives, which
makes the run bitwise independent of the worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .filtering import parent_indices, run_filter
from .parallel import pairwise_tree_sum, tree_cumsum
from .ssm import (
    StateSpaceModel,
    derive_seed,
    keyed_generator,
    TAG_FILTER_SEED,
    TAG_SAMPLER_INIT,
    TAG_SAMPLER_PROPOSAL,
    TAG_SAMPLER_RESAMPLE,
)

__all__ = [
    "DegeneratePopulationError",
    "SamplerSettings",
    "IterationRecord",
    "RunReport",
    "propose_rw",
    "propose_langevin",
    "langevin_flow",
    "reverse_momentum",
    "updated_log_weight",
    "recycling_constants",
    "resample_samples",
    "run_sampler",
]

RW = "rw"
FIRST_ORDER = "first-order"
PROPOSALS = (RW, FIRST_ORDER)


class DegeneratePopulationError(RuntimeError):
    """Every sample weight is zero; no estimate can be formed."""


@dataclass(frozen=True)
class SamplerSettings:
    """Everything one sampler run needs besides the model itself."""

    proposal: str
    n_samples: int
    n_particles: int
    n_iterations: int
    step_size: float
    master_seed: int

    def __post_init__(self):
        if self.proposal not in PROPOSALS:
            raise ValueError(f"proposal must be one of {PROPOSALS}, got {self.proposal!r}")
        n = self.n_samples
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_samples must be a power of two >= 2, got {n}")
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be at least 1")
        if not self.step_size > 0.0:
            raise ValueError("step_size must be positive")


@dataclass
class IterationRecord:
    k: int
    estimate: np.ndarray
    ess_norm: float
    resampled: bool


@dataclass
class RunReport:
    proposal: str
    n_samples: int
    n_particles: int
    n_iterations: int
    step_size: float
    master_seed: int
    iterations: list[IterationRecord]
    recycled_estimate: np.ndarray
    final_estimate: np.ndarray
    ess_norm_mean: float
    resample_count: int
    langevin_fallbacks: int
    mse: float | None
    wall_time_s: float = field(default=0.0)

    def to_dict(self) -> dict:
        """JSON-ready dict; wall time lives under 'timing' so it can be stripped."""
        return {
            "proposal": self.proposal,
            "n_samples": self.n_samples,
            "n_particles": self.n_particles,
            "n_iterations": self.n_iterations,
            "step_size": self.step_size,
            "master_seed": self.master_seed,
            "iterations": [
                {
                    "k": r.k,
                    "estimate": [float(v) for v in r.estimate],
                    "ess_norm": float(r.ess_norm),
                    "resampled": bool(r.resampled),
                }
                for r in self.iterations
            ],
            "recycled_estimate": [float(v) for v in self.recycled_estimate],
            "final_estimate": [float(v) for v in self.final_estimate],
            "ess_norm_mean": float(self.ess_norm_mean),
            "resample_count": self.resample_count,
            "langevin_fallbacks": self.langevin_fallbacks,
            "mse": None if self.mse is None else float(self.mse),
            "timing": {"wall_time_s": float(self.wall_time_s)},
        }


# -- proposal moves -----------------------------------------------------------


def propose_rw(theta: np.ndarray, step_size: float, rng: np.random.Generator):
    """Symmetric Gaussian step theta + step_size * z."""
    return theta + step_size * rng.standard_normal(theta.shape[0])


def propose_langevin(
    theta: np.ndarray, grad: np.ndarray, step_size: float, rng: np.random.Generator
):
    """One Langevin step: drift half a step-covariance along the gradient.

    Returns (theta_new, p_prev); the momentum draw must be kept for the
    L-kernel weight.  With a zero gradient this is exactly propose_rw.
    """
    p_prev = step_size * rng.standard_normal(theta.shape[0])
    return theta + 0.5 * step_size**2 * grad + p_prev, p_prev


def langevin_flow(theta: np.ndarray, grad: np.ndarray, p: np.ndarray, step_size: float):
    """The deterministic map theta -> theta + (1/2) Gamma grad + p."""
    return theta + 0.5 * step_size**2 * grad + p


def reverse_momentum(
    p_prev: np.ndarray, grad_prev: np.ndarray, grad_new: np.ndarray, step_size: float
):
    """Leapfrog-closed momentum: flowing from (theta_new, -p_new) recovers theta_prev."""
    return p_prev + 0.5 * step_size**2 * (grad_prev + grad_new)


def updated_log_weight(
    log_w: float,
    log_post_prev: float,
    log_post_new: float,
    *,
    p_prev: np.ndarray | None = None,
    p_new: np.ndarray | None = None,
    step_size: float | None = None,
) -> float:
    """Importance-weight update for one move.

    Random walk uses the symmetric L-kernel, leaving the posterior ratio.
    For Langevin, pass the forward and reverse momenta: the Gaussian momentum
    densities contribute (|p_prev|^2 - |p_new|^2) / (2 gamma^2) and the two
    flow Jacobians cancel.  Dead samples (zero weight, or a previous
    evaluation outside the support) stay dead.
    """
    if not np.isfinite(log_w) or not np.isfinite(log_post_prev):
        return -np.inf
    if not np.isfinite(log_post_new):
        return -np.inf
    out = log_w + log_post_new - log_post_prev
    if p_prev is not None:
        out += (np.dot(p_prev, p_prev) - np.dot(p_new, p_new)) / (2.0 * step_size**2)
    return float(out)


def recycling_constants(l_values: np.ndarray) -> np.ndarray:
    """Normalize the per-iteration ESS figures into convex recycling weights."""
    l_values = np.asarray(l_values, dtype=np.float64)
    return l_values / np.sum(l_values)


# -- the SPMD sampler body ------------------------------------------------------


def _collective_normalize(log_w_local: np.ndarray, comm):
    """Normalized weights, ESS, and log total mass, identical on every rank."""
    m = comm.tree_max(log_w_local)
    if not np.isfinite(m):
        raise DegeneratePopulationError("all sample weights are zero")
    shifted = np.exp(log_w_local - m)
    total = comm.tree_sum(shifted)
    weights_local = shifted / total
    sum_sq = comm.tree_sum(weights_local * weights_local)
    return weights_local, float(1.0 / sum_sq), float(m + np.log(total))


def resample_samples(
    comm,
    weights_local: np.ndarray,
    payload_local: np.ndarray,
    uniforms: np.ndarray,
    shard_start: int,
):
    """Multinomial resampling of the sample population across workers.

    Every rank derives the identical parent map from the full cumulative
    weights and the shared uniforms, then picks up its own shard's new rows
    from the gathered payload -- the resulting multiset matches the serial
    resampler for any worker count.
    """
    n_local = weights_local.shape[0]
    weights_full = comm.allgather(weights_local)
    cumulative = tree_cumsum(weights_full)
    cumulative[-1] = 1.0
    parents = parent_indices(cumulative, uniforms)[shard_start : shard_start + n_local]
    return comm.allgather(payload_local)[parents]


def run_sampler(
    comm,
    settings: SamplerSettings,
    model: StateSpaceModel,
    true_theta: np.ndarray | None = None,
) -> RunReport | None:
    """Run K iterations of propose / filter-evaluate / weight / resample.

    Must be called collectively by every worker of ``comm``; returns the
    report on rank 0 and None elsewhere.
    """
    started = time.perf_counter()
    n_total = settings.n_samples
    n_workers = comm.n_workers
    if n_total % n_workers:
        raise ValueError(f"{n_workers} workers cannot shard {n_total} samples evenly")
    n_local = n_total // n_workers
    lo = comm.rank * n_local
    dim = model.dim
    master = settings.master_seed
    gamma = settings.step_size
    langevin = settings.proposal == FIRST_ORDER

    theta = np.empty((n_local, dim))
    log_post = np.empty(n_local)
    grad = np.empty((n_local, dim))
    log_w = np.empty(n_local)
    fallbacks = 0

    def evaluate(theta_i: np.ndarray, k: int, i: int):
        """Filter evaluation under the (i, k) seed; -inf outside the prior box."""
        if not model.prior.contains(theta_i):
            return -np.inf, np.zeros(dim)
        seed = derive_seed(master, TAG_FILTER_SEED, k, i)
        result = run_filter(model, theta_i, seed, settings.n_particles)
        log_posterior = model.prior_logpdf(theta_i) + result.log_likelihood
        return log_posterior, result.gradient + model.prior_gradient(theta_i)

    for j, i in enumerate(range(lo, lo + n_local)):
        rng = keyed_generator(master, TAG_SAMPLER_INIT, i)
        theta[j] = model.prior_sample(rng)
        log_post[j], grad[j] = evaluate(theta[j], 1, i)
        # First-iteration weight pi/q1 with q1 = prior: the prior cancels.
        log_w[j] = log_post[j] - model.prior_logpdf(theta[j])

    records: list[IterationRecord] = []
    estimates: list[np.ndarray] = []
    l_values: list[float] = []
    resample_count = 0

    def close_iteration(k: int):
        nonlocal theta, log_post, grad, log_w, resample_count
        weights_local, ess, log_total = _collective_normalize(log_w, comm)
        estimate = comm.tree_sum(weights_local[:, None] * theta)
        estimates.append(estimate)
        l_values.append(ess)
        resampled = ess < n_total / 2.0
        if resampled:
            resample_count += 1
            uniforms = 1.0 - keyed_generator(master, TAG_SAMPLER_RESAMPLE, k).random(n_total)
            payload = np.concatenate([theta, log_post[:, None], grad], axis=1)
            payload = resample_samples(comm, weights_local, payload, uniforms, lo)
            theta = payload[:, :dim].copy()
            log_post = payload[:, dim].copy()
            grad = payload[:, dim + 1 :].copy()
            log_w = np.full(n_local, log_total - np.log(n_total))
        records.append(IterationRecord(k, estimate, ess / n_total, resampled))

    close_iteration(1)

    for k in range(2, settings.n_iterations + 1):
        for j, i in enumerate(range(lo, lo + n_local)):
            rng = keyed_generator(master, TAG_SAMPLER_PROPOSAL, k, i)
            grad_ok = bool(np.all(np.isfinite(grad[j])))
            use_drift = langevin and grad_ok
            if langevin and not grad_ok:
                fallbacks += 1
            if use_drift:
                theta_new, p_prev = propose_langevin(theta[j], grad[j], gamma, rng)
            else:
                theta_new = propose_rw(theta[j], gamma, rng)
            log_post_new, grad_new = evaluate(theta_new, k, i)
            if use_drift:
                p_new = reverse_momentum(p_prev, grad[j], grad_new, gamma)
                log_w[j] = updated_log_weight(
                    log_w[j], log_post[j], log_post_new,
                    p_prev=p_prev, p_new=p_new, step_size=gamma,
                )
            else:
                log_w[j] = updated_log_weight(log_w[j], log_post[j], log_post_new)
            theta[j] = theta_new
            log_post[j] = log_post_new
            grad[j] = grad_new
        close_iteration(k)

    constants = recycling_constants(np.array(l_values))
    recycled = pairwise_tree_sum(constants[:, None] * np.stack(estimates))
    mse = None
    if true_theta is not None:
        mse = float(np.mean((recycled - np.asarray(true_theta)) ** 2))
    total_fallbacks = int(comm.tree_sum(np.array([float(fallbacks)])))

    if comm.rank != 0:
        return None
    return RunReport(
        proposal=settings.proposal,
        n_samples=n_total,
        n_particles=settings.n_particles,
        n_iterations=settings.n_iterations,
        step_size=gamma,
        master_seed=master,
        iterations=records,
        recycled_estimate=recycled,
        final_estimate=estimates[-1],
        ess_norm_mean=float(np.mean([r.ess_norm for r in records])),
        resample_count=resample_count,
        langevin_fallbacks=total_fallbacks,
        mse=mse,
        wall_time_s=time.perf_counter() - started,
    )
