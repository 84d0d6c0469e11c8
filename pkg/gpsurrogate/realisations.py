"""
Draws of the latent log-density field at N points

A realisation is mu + A z with A A' = Sigma and z ~ N(0, I_r).
"""

import logging

import numpy as np
from scipy.linalg import cholesky, eigh

from common.errors import ConfigurationError, DecompositionError

logger = logging.getLogger(__name__)

EIGEN_CUTOFF = 1e-10


def realisation_factor(sigma: np.ndarray, method: str = "spectral", max_rank: int | None = None) -> np.ndarray:
    """
    Factor A with A A' ~= Sigma

    spectral keeps eigenpairs with eigenvalue >= 1e-10 * largest (at most
    max_rank of them); cholesky adds escalating diagonal jitter.

    Returns:
        (N, r) array; r = 0 when Sigma is numerically zero
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    sigma = 0.5 * (sigma + sigma.T)
    n_points = sigma.shape[0]
    if method == "spectral":
        eigvals, eigvecs = eigh(sigma)
        top = eigvals[-1] if n_points else 0.0
        if top <= 0:
            return np.zeros((n_points, 0))
        if eigvals[0] < -1e-6 * top:
            logger.warning(f"Covariance has a negative eigenvalue {eigvals[0]:.3g} (largest {top:.3g}); clipped")
        keep = np.flatnonzero(eigvals >= EIGEN_CUTOFF * top)[::-1]
        if max_rank is not None:
            keep = keep[:max_rank]
        return eigvecs[:, keep] * np.sqrt(eigvals[keep])
    if method == "cholesky":
        scale = float(np.mean(np.diag(sigma))) if n_points else 0.0
        if scale <= 0:
            return np.zeros((n_points, 0))
        relative = EIGEN_CUTOFF
        while relative <= 1e-4 * (1.0 + 1e-9):
            try:
                return cholesky(sigma + relative * scale * np.eye(n_points), lower=True)
            except np.linalg.LinAlgError:
                relative *= 10.0
        raise DecompositionError("Predictive covariance could not be Cholesky-factored")
    raise ConfigurationError(f"Unknown realisation method '{method}'")


def sample_realisations(
    mu: np.ndarray,
    sigma: np.ndarray,
    m_count: int,
    seed: int,
    method: str = "spectral",
    max_rank: int | None = None,
) -> np.ndarray:
    """
    M independent draws from N(mu, Sigma)

    Returns:
        (M, N) array; every row equals mu when Sigma is zero
    """
    if m_count < 1:
        raise ConfigurationError(f"m_count must be >= 1, got {m_count}")
    mu = np.asarray(mu, dtype=float).ravel()
    factor = realisation_factor(sigma, method=method, max_rank=max_rank)
    if factor.shape[0] != mu.size:
        raise ConfigurationError(f"mu has {mu.size} entries but Sigma is {factor.shape[0]} x {factor.shape[0]}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((m_count, factor.shape[1]))
    return mu[None, :] + z @ factor.T
