"""
Sum-of-GPs approximation to the full log-posterior

The C surrogates are independent a priori, so the merged log-posterior is
Gaussian with mean sum(mu_c) and covariance sum(Sigma_c). Its log-normal
expectation gives the expected density log pi_E = sum(mu_c) + 1/2 sum(sigma_c^2).
"""

import logging
from typing import Sequence

import numpy as np

from common.errors import ConfigurationError
from common.workers import parallel_iter
from gpsurrogate.gpsurrogate import GpSurrogate, gp_posterior

logger = logging.getLogger(__name__)


class MergedGp:
    """Immutable collection of C fitted surrogates sharing one parameter space"""

    def __init__(self, surrogates: Sequence[GpSurrogate], n_jobs: int | None = 1):
        surrogates = tuple(surrogates)
        if not surrogates:
            raise ConfigurationError("A merged GP needs at least one surrogate")
        dims = {s.dim for s in surrogates}
        if len(dims) != 1:
            raise ConfigurationError(f"Surrogates disagree on dimension: {sorted(dims)}")
        self._surrogates = surrogates
        self._dim = dims.pop()
        self.n_jobs = n_jobs

    @property
    def surrogates(self) -> tuple[GpSurrogate, ...]:
        return self._surrogates

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def n_batches(self) -> int:
        return len(self._surrogates)

    def predict(self, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Merged marginal means and variances at the rows of query"""
        query = np.atleast_2d(np.asarray(query, dtype=float))
        mu = np.zeros(query.shape[0])
        var = np.zeros(query.shape[0])
        for surrogate in self._surrogates:
            mu_c, var_c = surrogate.predict(query)
            mu += mu_c
            var += var_c
        return mu, var

    def joint_posterior(self, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Merged joint mean and covariance at N points, one surrogate per worker"""
        query = np.atleast_2d(np.asarray(query, dtype=float))
        mu = np.zeros(query.shape[0])
        sigma = np.zeros((query.shape[0], query.shape[0]))
        for mu_c, sigma_c in parallel_iter(lambda s: gp_posterior(s, query), self._surrogates, self.n_jobs):
            mu += mu_c
            sigma += sigma_c
        return mu, 0.5 * (sigma + sigma.T)

    def log_expected_density(self, theta) -> float:
        return log_expected_density(self, theta)

    def grad_log_expected_density(self, theta) -> np.ndarray:
        return grad_log_expected_density(self, theta)

    def log_expected_density_many(self, thetas: np.ndarray) -> np.ndarray:
        mu, var = self.predict(thetas)
        return mu + 0.5 * np.maximum(var, 0.0)


def log_expected_density(merged: MergedGp, theta) -> float:
    """sum_c mu_c(theta) + 1/2 sum_c sigma_c^2(theta); variances below zero count as zero"""
    theta = np.asarray(theta, dtype=float).ravel()
    total_mu = 0.0
    total_var = 0.0
    for surrogate in merged.surrogates:
        mu, var, _, _ = surrogate.expected_terms(theta)
        total_mu += mu
        total_var += var
    return float(total_mu + 0.5 * max(total_var, 0.0))


def grad_log_expected_density(merged: MergedGp, theta) -> np.ndarray:
    """Analytic gradient of log_expected_density"""
    theta = np.asarray(theta, dtype=float).ravel()
    total_var = 0.0
    grad_mu = np.zeros(merged.dim)
    grad_var = np.zeros(merged.dim)
    for surrogate in merged.surrogates:
        _, var, dmu, dvar = surrogate.expected_terms(theta)
        total_var += var
        grad_mu += dmu
        grad_var += dvar
    if total_var < 0:
        return grad_mu
    return grad_mu + 0.5 * grad_var


class ExpectedDensityTarget:
    """log pi_E as an HMC target"""

    def __init__(self, merged: MergedGp):
        self.merged = merged

    @property
    def dim(self) -> int:
        return self.merged.dim

    def log_density(self, theta) -> float:
        return log_expected_density(self.merged, theta)

    def grad_log_density(self, theta) -> np.ndarray:
        return grad_log_expected_density(self.merged, theta)
