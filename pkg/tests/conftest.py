import numpy as np
import pytest

from smc2grad import BoxPrior, StateSpaceModel, build_model
from smc2grad import tangent as _  # noqa: F401  (import check)
from smc2grad.models import LGSSM_TRUE, SIR_TRUE, simulate_lgssm, simulate_sir
import smc2grad.tangent as tg


class DriftlessModel(StateSpaceModel):
    """Gaussian random walk whose dynamics and likelihood ignore theta.

    Useful as a zero-gradient oracle: every tangent in the filter stays
    exactly zero, and the Langevin machinery must collapse onto the
    random walk.
    """

    param_names = ("a", "b")
    noise_dim = 1
    proposal_kind = "transition"

    def __init__(self, observations):
        super().__init__(observations, BoxPrior([-1.0, -1.0], [1.0, 1.0]))

    def lift_params(self, theta):
        return None

    def initial_state(self, n_particles, params):
        return tg.lift_const(np.zeros(n_particles), self.dim)

    def propose_state(self, x_prev, params, y_t, eps):
        return x_prev + eps[:, 0]

    def log_increment(self, x_t, x_prev, params, y_t):
        return tg.gaussian_logpdf(y_t, x_t, 1.0)


class UnderflowModel(DriftlessModel):
    """Every increment is -inf: forces the all-weights-zero path."""

    def log_increment(self, x_t, x_prev, params, y_t):
        n = x_t.value.shape[0]
        return tg.TangentValue(np.full(n, -np.inf), np.zeros((n, self.dim)))


@pytest.fixture(scope="session")
def lgssm_small():
    y = simulate_lgssm(LGSSM_TRUE, 25, seed=42)
    return build_model("lgssm", y)


@pytest.fixture(scope="session")
def sir_small():
    y = simulate_sir(SIR_TRUE, 8, seed=3)
    return build_model("sir", y)


@pytest.fixture(scope="session")
def driftless_small():
    rng = np.random.default_rng(0)
    return DriftlessModel(rng.standard_normal(12))
