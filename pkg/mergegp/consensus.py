"""
Consensus Monte Carlo baseline and the Student-t proposal built from it
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from common.errors import ConfigurationError
from hmcsampler.hmcsampler import ChainRecord

logger = logging.getLogger(__name__)

RIDGE = 1e-8


@dataclass(frozen=True, eq=False)
class ConsensusApprox:
    """
    Gaussian implied by consensus Monte Carlo

    covariance is (sum_c W_c)^-1; empirical_covariance is the covariance of
    the combined draws.
    """

    mean: np.ndarray
    covariance: np.ndarray
    empirical_covariance: np.ndarray
    batch_means: list[np.ndarray] = field(default_factory=list)
    batch_covariances: list[np.ndarray] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, points: np.ndarray) -> np.ndarray:
        """Log-density of N(mean, covariance) at the rows of points"""
        points = np.atleast_2d(points)
        density = stats.multivariate_normal(self.mean, self.covariance)
        return np.atleast_1d(density.logpdf(points)).reshape(points.shape[0])


def _draws_of(chain) -> np.ndarray:
    if isinstance(chain, ChainRecord):
        return chain.sampled_draws()
    draws = np.asarray(chain, dtype=float)
    return draws[:, None] if draws.ndim == 1 else draws


def _precision(covariance: np.ndarray, batch_id: int) -> np.ndarray:
    dim = covariance.shape[0]
    try:
        np.linalg.cholesky(covariance)
    except np.linalg.LinAlgError:
        ridge = RIDGE * max(np.trace(covariance) / dim, 1e-12)
        logger.warning(f"Batch {batch_id} covariance is singular; adding ridge {ridge:.3g}")
        covariance = covariance + ridge * np.eye(dim)
    return np.linalg.inv(covariance)


def consensus_merge(chains: Sequence[ChainRecord | np.ndarray]) -> tuple[np.ndarray, ConsensusApprox]:
    """
    Combine C equal-length chains draw by draw with precision weights

    theta_j = (sum_c W_c)^-1 sum_c W_c theta_{c,j}, W_c the inverse of
    chain c's empirical covariance.

    Raises:
        ConfigurationError: no chains, or chains of unequal length/dimension
    """
    draws = [_draws_of(chain) for chain in chains]
    if not draws:
        raise ConfigurationError("consensus_merge needs at least one chain")
    shapes = {d.shape for d in draws}
    if len(shapes) != 1:
        raise ConfigurationError(f"Consensus chains must share length and dimension, got {sorted(shapes)}")
    n_draws, dim = draws[0].shape
    if n_draws < 2:
        raise ConfigurationError("Consensus chains need at least two draws each")

    batch_means, batch_covariances = [], []
    precision_sum = np.zeros((dim, dim))
    weighted = np.zeros((n_draws, dim))
    for batch_id, chain_draws in enumerate(draws, start=1):
        covariance = np.atleast_2d(np.cov(chain_draws, rowvar=False))
        precision = _precision(covariance, batch_id)
        precision_sum += precision
        weighted += chain_draws @ precision
        batch_means.append(chain_draws.mean(axis=0))
        batch_covariances.append(covariance)

    combined = np.linalg.solve(precision_sum, weighted.T).T
    covariance = np.linalg.inv(precision_sum)
    approx = ConsensusApprox(
        mean=combined.mean(axis=0),
        covariance=0.5 * (covariance + covariance.T),
        empirical_covariance=np.atleast_2d(np.cov(combined, rowvar=False)),
        batch_means=batch_means,
        batch_covariances=batch_covariances,
    )
    logger.info(f"Consensus merged {len(draws)} chains of {n_draws} draws; mean {np.round(approx.mean, 4).tolist()}")
    return combined, approx


@dataclass(frozen=True, eq=False)
class StudentTProposal:
    """Multivariate t with covariance dof/(dof-2) * scale"""

    location: np.ndarray
    covariance: np.ndarray
    dof: float = 5.0

    def __post_init__(self):
        if not self.dof > 2:
            raise ConfigurationError(f"Student-t proposal needs dof > 2 for a finite covariance, got {self.dof}")
        object.__setattr__(self, "location", np.atleast_1d(np.asarray(self.location, dtype=float)))
        object.__setattr__(self, "covariance", np.atleast_2d(np.asarray(self.covariance, dtype=float)))

    @property
    def dim(self) -> int:
        return self.location.size

    @property
    def scale(self) -> np.ndarray:
        return self.covariance * (self.dof - 2.0) / self.dof

    @property
    def distribution(self):
        return stats.multivariate_t(loc=self.location, shape=self.scale, df=self.dof)

    def sample(self, n: int, seed: int | np.random.Generator) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return np.asarray(self.distribution.rvs(size=n, random_state=rng), dtype=float).reshape(n, self.dim)

    def logpdf(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.atleast_1d(self.distribution.logpdf(points)).reshape(points.shape[0])

    @classmethod
    def from_sample(cls, points: np.ndarray, dof: float = 5.0) -> "StudentTProposal":
        """Moment-matched proposal from any sample (e.g. GP-HMC output)"""
        points = np.atleast_2d(points)
        return cls(points.mean(axis=0), np.atleast_2d(np.cov(points, rowvar=False)), dof)


def student_t_proposal(approx: ConsensusApprox, dof: float = 5.0) -> StudentTProposal:
    """t proposal with the consensus mean and covariance"""
    return StudentTProposal(approx.mean, approx.covariance, dof)
