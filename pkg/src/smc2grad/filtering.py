"""Common-random-numbers particle filter with gradient-consistent resampling.

One filter run is a deterministic function of (model, theta, seed): every
noise draw comes from the seed-keyed bundle, so repeated runs are identical
bit for bit and the log-likelihood is differentiable in theta almost
everywhere.  States and log-weights carry tangents; the returned gradient is
the tangent of the log-likelihood estimate itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tangent as tg
from .parallel import tree_cumsum
from .ssm import NoiseBundle, StateSpaceModel
from .tangent import TangentValue

__all__ = [
    "ParticleEnsemble",
    "LikelihoodResult",
    "ess_particles",
    "parent_indices",
    "crn_multinomial_resample",
    "run_filter",
]


@dataclass
class ParticleEnsemble:
    """N_x particles: states and log-weights, both carrying tangents."""

    states: TangentValue
    log_weights: TangentValue
    t: int

    @property
    def n_particles(self) -> int:
        return self.log_weights.value.shape[0]


@dataclass
class LikelihoodResult:
    """Log-likelihood estimate, its theta-gradient, and the per-step ESS trace."""

    log_likelihood: float
    gradient: np.ndarray
    ess_trace: np.ndarray


def ess_particles(normalized_weights: np.ndarray) -> float:
    """Effective particle count 1 / sum(w^2) of already-normalized weights."""
    w = np.asarray(normalized_weights)
    return float(1.0 / np.sum(w * w))


def parent_indices(cumulative_weights: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Multinomial parent choice: the smallest index m with u <= c_m.

    Uniforms must lie in (0, 1] and the final cumulative weight must be
    exactly 1, which together make every lookup well-defined.
    """
    return np.searchsorted(cumulative_weights, uniforms, side="left")


def _normalized(log_weights: np.ndarray):
    """Max-shifted normalized weights; returns (weights, max, log total)."""
    m = np.max(log_weights)
    if not np.isfinite(m):
        return None, m, -np.inf
    shifted = np.exp(log_weights - m)
    total = np.sum(shifted)
    return shifted / total, m, m + np.log(total)

def crn_multinomial_resample(
    ensemble: ParticleEnsemble, uniforms: np.ndarray
) -> ParticleEnsemble:
    """Resample with pre-drawn uniforms, keeping weight and gradient books consistent.

    Each new particle adopts its parent's state and state tangent.  All new
    log-weights equal log((1/N) sum w) -- the total mass is preserved -- and
    their common tangent is the weight-mixture of the old log-weight
    tangents, which is exactly the tangent of that shared value.
    """
    logw = ensemble.log_weights
    weights, _, log_total = _normalized(logw.value)
    if weights is None:
        raise ValueError("cannot resample: all particle weights are zero")
    n = ensemble.n_particles
    cumulative = tree_cumsum(weights)
    cumulative[-1] = 1.0
    parents = parent_indices(cumulative, uniforms)

    new_value = np.full(n, log_total - np.log(n))
    mixture = np.sum(logw.tangent * weights[:, None], axis=0)
    new_logw = TangentValue(new_value, np.broadcast_to(mixture, (n,) + mixture.shape))
    return ParticleEnsemble(
        states=ensemble.states[parents], log_weights=new_logw, t=ensemble.t
    )


def _floor_bad_increments(inc: TangentValue) -> TangentValue:
    """Replace non-finite increments by -inf with zero tangent.

    Keeps the weight recursion well-defined when a stray particle produces
    an overflowing density; such particles simply carry zero weight.
    """
    bad = ~np.isfinite(inc.value)
    if not np.any(bad):
        return inc
    ok = ~bad
    return TangentValue(
        np.where(ok, inc.value, -np.inf), inc.tangent * ok.astype(np.float64)[:, None]
    )


def run_filter(
    model: StateSpaceModel, theta: np.ndarray, seed: int, n_particles: int
) -> LikelihoodResult:
    """Run the filter for the model's full observation record.

    The log-likelihood is accumulated in log space as
    log((1/N_x) sum_j w_T^j); weight-preserving resampling keeps that
    quantity an estimate of the likelihood at every step.  Its tangent
    realizes the weighted-mixture gradient estimator as a byproduct.

    If every particle's weight underflows to zero the run reports a
    log-likelihood of -inf with a zero gradient instead of raising.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if n_particles < 2:
        raise ValueError("need at least two particles")
    dim = model.dim
    params = model.lift_params(theta)
    bundle = NoiseBundle(seed, n_particles, model.noise_dim)
    threshold = n_particles / 2.0

    states = model.initial_state(n_particles, params)
    log_weights = tg.lift_const(np.zeros(n_particles), dim)
    ess_trace = np.zeros(model.n_steps)

    for t, y_t in enumerate(model.observations):
        proposed = model.propose_state(states, params, float(y_t), bundle.proposal_noise(t))
        increment = _floor_bad_increments(
            model.log_increment(proposed, states, params, float(y_t))
        )
        log_weights = log_weights + increment
        states = proposed

        weights, _, _ = _normalized(log_weights.value)
        if weights is None:
            return LikelihoodResult(-np.inf, np.zeros(dim), ess_trace)
        ess = ess_particles(weights)
        ess_trace[t] = ess
        if ess < threshold:
            ensemble = crn_multinomial_resample(
                ParticleEnsemble(states, log_weights, t), bundle.resample_uniforms(t)
            )
            states, log_weights = ensemble.states, ensemble.log_weights

    total = tg.logsumexp(log_weights)
    return LikelihoodResult(
        float(total.value) - np.log(n_particles), total.tangent.copy(), ess_trace
    )
