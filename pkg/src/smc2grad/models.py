"""The two benchmark models: a linear-Gaussian SSM and a stochastic SIR model.

The linear-Gaussian model uses the closed-form ("optimal") proposal inside
the particle filter and ships with an exact Kalman-filter likelihood oracle.
The SIR model uses its transition as the proposal, so the incremental weight
is the observation density alone.
"""

from __future__ import annotations

import numpy as np

from . import tangent as tg
from .ssm import BoxPrior, StateSpaceModel, keyed_generator, TAG_DATA
from .tangent import NumericDomainError, TangentValue

__all__ = [
    "LgssmModel",
    "SirModel",
    "kalman_loglik",
    "sir_step",
    "simulate_lgssm",
    "simulate_sir",
    "build_model",
    "true_parameters",
    "MODEL_NAMES",
]

LGSSM_TRUE = np.array([0.75, 1.0, 1.0])
SIR_TRUE = np.array([0.6, 0.3])
MODEL_NAMES = ("lgssm", "sir")

SIR_POPULATION = 763.0
SIR_INITIAL_INFECTED = 1.0
SIR_FLOW_NOISE_STD = 0.5


class _LgssmLifted:
    """Per-run lifted parameters and the derived proposal constants."""

    __slots__ = ("mu", "coef_x", "coef_y", "rho", "obs_var")

    def __init__(self, theta: np.ndarray):
        if theta[1] <= 0.0 or theta[2] <= 0.0:
            raise NumericDomainError("transition/observation noise scales must be positive")
        mu, phi, sigma = tg.lift_params(theta)
        phi2 = phi * phi
        sigma2 = sigma * sigma
        inv_phi2 = 1.0 / phi2
        inv_sigma2 = 1.0 / sigma2
        rho2 = 1.0 / (inv_phi2 + inv_sigma2)
        self.mu = mu
        self.coef_x = rho2 * inv_phi2 * mu
        self.coef_y = rho2 * inv_sigma2
        self.rho = tg.sqrt(rho2)
        self.obs_var = phi2 + sigma2


class LgssmModel(StateSpaceModel):
    """x_t = mu x_{t-1} + phi w_t,  y_t = x_t + sigma v_t.

    theta = (mu, phi, sigma) with uniform priors on (-1,1) x (0,5) x (0,5).
    The first state is x_1 ~ N(0, phi^2), realized by starting the recursion
    from the constant x_0 = 0.

    The filter proposal is the exact conditional
    q(x_t | x_{t-1}, y_t) = N(rho^2 [y_t/sigma^2 + mu x_{t-1}/phi^2], rho^2),
    rho^-2 = phi^-2 + sigma^-2, which makes the incremental weight the
    predictive density N(y_t; mu x_{t-1}, phi^2 + sigma^2).
    """

    param_names = ("mu", "phi", "sigma")
    noise_dim = 1
    proposal_kind = "optimal"

    def __init__(self, observations):
        super().__init__(observations, BoxPrior([-1.0, 0.0, 0.0], [1.0, 5.0, 5.0]))

    def lift_params(self, theta):
        return _LgssmLifted(np.asarray(theta, dtype=np.float64))

    def initial_state(self, n_particles, params):
        return tg.lift_const(np.zeros(n_particles), self.dim)

    def propose_state(self, x_prev, params, y_t, eps):
        mean = params.coef_x * x_prev + params.coef_y * y_t
        return mean + params.rho * eps[:, 0]

    def log_increment(self, x_t, x_prev, params, y_t):
        return tg.gaussian_logpdf(y_t, params.mu * x_prev, params.obs_var)


def kalman_loglik(theta: np.ndarray, observations: np.ndarray) -> float:
    """Exact log p(y_{1:T} | theta) for the linear-Gaussian model.

    Standard predict/update recursion started at the deterministic x_0 = 0,
    matching the particle filter's initialization.
    """
    mu, phi, sigma = np.asarray(theta, dtype=np.float64)
    if phi <= 0.0 or sigma <= 0.0:
        raise NumericDomainError("transition/observation noise scales must be positive")
    m, p = 0.0, 0.0
    loglik = 0.0
    for y in np.asarray(observations, dtype=np.float64):
        m_pred = mu * m
        p_pred = mu * mu * p + phi * phi
        s = p_pred + sigma * sigma
        loglik += -0.5 * np.log(2.0 * np.pi * s) - (y - m_pred) ** 2 / (2.0 * s)
        gain = p_pred / s
        m = m_pred + gain * (y - m_pred)
        p = (1.0 - gain) * p_pred
    return float(loglik)


def simulate_lgssm(theta, n_steps: int, seed: int) -> np.ndarray:
    """Draw y_{1:T} from the linear-Gaussian model under a dedicated data seed."""
    mu, phi, sigma = np.asarray(theta, dtype=np.float64)
    rng = keyed_generator(seed, TAG_DATA)
    x = 0.0
    y = np.empty(n_steps)
    for t in range(n_steps):
        x = mu * x + phi * rng.standard_normal()
        y[t] = x + sigma * rng.standard_normal()
    return y


def sir_step(s, i, beta, gamma_rec, eps_beta, eps_gamma):
    """One day of the discretized stochastic SIR dynamics.

    New infections flow beta*I*S/N_pop (frequency-dependent transmission),
    recoveries flow gamma_rec*I; each flow is perturbed by its pre-drawn
    noise scaled to std 0.5.  Returns (S', I', R') with R' derived from the
    population constraint, so conservation holds by construction.
    """
    flow_inf = beta * (i * s) * (1.0 / SIR_POPULATION)
    shock_inf = SIR_FLOW_NOISE_STD * eps_beta
    shock_rec = SIR_FLOW_NOISE_STD * eps_gamma
    s_new = s - flow_inf + shock_inf
    i_new = i + flow_inf - gamma_rec * i - shock_inf + shock_rec
    r_new = (SIR_POPULATION - s_new) - i_new
    return s_new, i_new, r_new


class SirModel(StateSpaceModel):
    """Stochastic SIR compartment model observed through noisy infected counts.

    theta = (beta, gamma_rec) with uniform priors on (0,1)^2.  The filter
    state carries (S, I); R is always the population remainder.  The
    transition doubles as the proposal, so the weight increment is
    log N(y_t; max(I_t, 0), obs_noise_std^2).
    """

    param_names = ("beta", "gamma")
    noise_dim = 2
    proposal_kind = "transition"

    def __init__(self, observations, obs_noise_std: float = 1.0):
        super().__init__(observations, BoxPrior([0.0, 0.0], [1.0, 1.0]))
        if obs_noise_std <= 0.0:
            raise NumericDomainError("observation noise std must be positive")
        self.obs_noise_std = float(obs_noise_std)

    def lift_params(self, theta):
        beta, gamma_rec = tg.lift_params(np.asarray(theta, dtype=np.float64))
        return beta, gamma_rec

    def initial_state(self, n_particles, params):
        s0 = np.full(n_particles, SIR_POPULATION - SIR_INITIAL_INFECTED)
        i0 = np.full(n_particles, SIR_INITIAL_INFECTED)
        return tg.stack([tg.lift_const(s0, self.dim), tg.lift_const(i0, self.dim)], axis=1)

    def propose_state(self, x_prev, params, y_t, eps):
        beta, gamma_rec = params
        s_new, i_new, _ = sir_step(
            x_prev[:, 0], x_prev[:, 1], beta, gamma_rec, eps[:, 0], eps[:, 1]
        )
        return tg.stack([s_new, i_new], axis=1)

    def log_increment(self, x_t, x_prev, params, y_t):
        mean = tg.clip_nonnegative(x_t[:, 1])
        return tg.gaussian_logpdf(y_t, mean, self.obs_noise_std**2)


def simulate_sir(theta, n_steps: int, seed: int, obs_noise_std: float = 1.0) -> np.ndarray:
    """Draw infected-count observations from the SIR model under a data seed."""
    beta, gamma_rec = np.asarray(theta, dtype=np.float64)
    rng = keyed_generator(seed, TAG_DATA)
    s = SIR_POPULATION - SIR_INITIAL_INFECTED
    i = SIR_INITIAL_INFECTED
    y = np.empty(n_steps)
    for t in range(n_steps):
        eps_beta, eps_gamma = rng.standard_normal(2)
        s, i, _ = sir_step(s, i, beta, gamma_rec, eps_beta, eps_gamma)
        y[t] = i + obs_noise_std * rng.standard_normal()
    return y


def true_parameters(model_name: str) -> np.ndarray:
    if model_name == "lgssm":
        return LGSSM_TRUE.copy()
    if model_name == "sir":
        return SIR_TRUE.copy()
    raise ValueError(f"unknown model {model_name!r}; expected one of {MODEL_NAMES}")


def simulate(model_name: str, theta, n_steps: int, seed: int, obs_noise_std: float = 1.0):
    if model_name == "lgssm":
        return simulate_lgssm(theta, n_steps, seed)
    if model_name == "sir":
        return simulate_sir(theta, n_steps, seed, obs_noise_std)
    raise ValueError(f"unknown model {model_name!r}; expected one of {MODEL_NAMES}")


def build_model(model_name: str, observations, obs_noise_std: float = 1.0) -> StateSpaceModel:
    if model_name == "lgssm":
        return LgssmModel(observations)
    if model_name == "sir":
        return SirModel(observations, obs_noise_std)
    raise ValueError(f"unknown model {model_name!r}; expected one of {MODEL_NAMES}")
