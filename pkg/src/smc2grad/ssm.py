"""State-space model abstraction: priors, reparameterized proposals, noise streams.

A model supplies everything the particle filter consumes, expressed in
TangentValue arithmetic so that state and weight tangents emerge from the
ordinary evaluation.  All randomness is drawn from counter-based keyed
streams: a draw is a pure function of (seed, purpose, step), never of
iteration order or worker placement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tangent import TangentValue

__all__ = [
    "keyed_generator",
    "derive_seed",
    "NoiseBundle",
    "BoxPrior",
    "StateSpaceModel",
    "load_observations",
    "save_observations",
]

# Purpose tags for keyed streams.  Each purpose owns a disjoint counter
# section, so adding draws to one stream never shifts another.
TAG_PROPOSAL_NOISE = 1
TAG_RESAMPLE_PF = 2
TAG_SAMPLER_INIT = 3
TAG_FILTER_SEED = 4
TAG_SAMPLER_PROPOSAL = 5
TAG_SAMPLER_RESAMPLE = 6
TAG_DATA = 7
TAG_MC_RUN = 8

_MASK64 = (1 << 64) - 1


def keyed_generator(seed: int, *path: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by seed and up to three path indices.

    Each path component occupies its own 64-bit word of the 256-bit counter,
    leaving the low word free for the stream position.
    """
    if len(path) > 3:
        raise ValueError("at most three path components fit in the counter")
    counter = 0
    for i, p in enumerate(path):
        counter += (int(p) & _MASK64) << (64 * (3 - i))
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64, counter=counter))


def derive_seed(seed: int, *path: int) -> int:
    """A fresh 63-bit seed deterministically derived from (seed, path)."""
    return int(keyed_generator(seed, *path).integers(0, 1 << 63))


class NoiseBundle:
    """All stochastic inputs of one filter run, regenerable bit for bit.

    Proposal noise and resampling uniforms are keyed by (seed, purpose, t);
    the j-th entry of a step's block belongs to particle j.
    """

    def __init__(self, seed: int, n_particles: int, noise_dim: int):
        self.seed = int(seed)
        self.n_particles = n_particles
        self.noise_dim = noise_dim

    def proposal_noise(self, t: int) -> np.ndarray:
        gen = keyed_generator(self.seed, TAG_PROPOSAL_NOISE, t)
        return gen.standard_normal((self.n_particles, self.noise_dim))

    def resample_uniforms(self, t: int) -> np.ndarray:
        # 1 - U[0,1) lies in (0, 1], which the parent-counting rule requires.
        gen = keyed_generator(self.seed, TAG_RESAMPLE_PF, t)
        return 1.0 - gen.random(self.n_particles)


@dataclass(frozen=True)
class BoxPrior:
    """Independent uniform prior over an axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=np.float64))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=np.float64))
        if np.any(self.lower >= self.upper):
            raise ValueError("prior box requires lower < upper in every dimension")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random(self.dim)

    def contains(self, theta: np.ndarray) -> bool:
        return bool(np.all(theta > self.lower) and np.all(theta < self.upper))

    def logpdf(self, theta: np.ndarray) -> float:
        if not self.contains(theta):
            return -np.inf
        return -float(np.sum(np.log(self.upper - self.lower)))


class StateSpaceModel:
    """Base class binding a model definition to an observation sequence.

    Subclasses define the lifted-parameter pack, the reparameterized state
    proposal and the incremental log-weight; the generic filter never looks
    inside states beyond gathering along axis 0.
    """

    param_names: tuple = ()
    noise_dim: int = 1

    def __init__(self, observations: np.ndarray, prior: BoxPrior):
        self.observations = np.asarray(observations, dtype=np.float64)
        if self.observations.ndim != 1 or self.observations.shape[0] < 1:
            raise ValueError("observations must be a non-empty 1-D sequence")
        self.prior = prior

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def n_steps(self) -> int:
        return self.observations.shape[0]

    # Uniform box prior: flat in the interior, so the log-posterior gradient
    # reduces to the filter's likelihood gradient.
    def prior_sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.prior.sample(rng)

    def prior_logpdf(self, theta: np.ndarray) -> float:
        return self.prior.logpdf(theta)

    def prior_gradient(self, theta: np.ndarray) -> np.ndarray:
        return np.zeros(self.dim)

    # -- hooks a concrete model must provide --------------------------------

    def lift_params(self, theta: np.ndarray):
        """Lift theta and precompute derived quantities shared by all steps."""
        raise NotImplementedError

    def initial_state(self, n_particles: int, params) -> TangentValue:
        raise NotImplementedError

    def propose_state(
        self, x_prev: TangentValue, params, y_t: float, eps: np.ndarray
    ) -> TangentValue:
        """Draw x_t as a deterministic function of (x_prev, theta, y_t, eps)."""
        raise NotImplementedError

    def log_increment(
        self, x_t: TangentValue, x_prev: TangentValue, params, y_t: float
    ) -> TangentValue:
        """Per-particle log incremental weight (log g, or log(g f / q))."""
        raise NotImplementedError


def save_observations(path, y: np.ndarray) -> None:
    """Write a t,y observation CSV (one row per timestep, t starting at 1)."""
    y = np.asarray(y, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("t,y\n")
        for t, val in enumerate(y, start=1):
            fh.write(f"{t},{val!r}\n")


def load_observations(path) -> np.ndarray:
    """Read a t,y observation CSV produced by save_observations."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "t,y":
            raise ValueError(f"expected header 't,y' in {path}, got {header!r}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"no observations in {path}")
    order = np.argsort([int(r[0]) for r in rows])
    return np.array([float(rows[i][1]) for i in order])
