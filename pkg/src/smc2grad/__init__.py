"""Gradient-guided SMC^2 for state-space models.

Static parameters of a non-linear state-space model are inferred by an SMC
sampler whose proposals can use the log-likelihood gradient of a
common-random-numbers particle filter, computed exactly (for the realized
noise) by forward-mode tangent propagation.
"""

from .experiment import RunConfig, bench_scaling, make_config, run_experiment
from .filtering import LikelihoodResult, crn_multinomial_resample, ess_particles, run_filter
from .models import LgssmModel, SirModel, build_model, kalman_loglik
from .parallel import SerialComm, run_spmd
from .sampler import RunReport, SamplerSettings, run_sampler
from .ssm import BoxPrior, NoiseBundle, StateSpaceModel
from .tangent import NumericDomainError, TangentValue, lift_const, lift_param

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "bench_scaling",
    "make_config",
    "run_experiment",
    "LikelihoodResult",
    "crn_multinomial_resample",
    "ess_particles",
    "run_filter",
    "LgssmModel",
    "SirModel",
    "build_model",
    "kalman_loglik",
    "SerialComm",
    "run_spmd",
    "RunReport",
    "SamplerSettings",
    "run_sampler",
    "BoxPrior",
    "NoiseBundle",
    "StateSpaceModel",
    "NumericDomainError",
    "TangentValue",
    "lift_const",
    "lift_param",
]
