import numpy as np
import pytest

from gpsurrogate.gpsurrogate import KernelParams, MeanParams, assemble_surrogate, fit_surrogate
from mergegp.mergegp import MergedGp
from targets.models import LOG_2PI, Model
from targets.targets import generate_data, log_subposterior_many, partition_data

TEST_POINTS = {
    "warped_gaussian": [0.4, 0.3],
    "gaussian_mixture": [0.2, -0.1, -0.3, 0.15],
    "rare_bernoulli": [-4.0],
    "logistic_regression": [-2.5, 2.0, 0.4, -0.6, 0.1],
    "laplace_mixture": [0.07],
}


class GaussianMean(Model):
    """y_i ~ N(theta, sigma2 I) with a N(0, prior_variance I) prior; every subposterior is Gaussian"""

    name = "gaussian_mean"
    default_constants = {"sigma2": 1.0, "prior_variance": 100.0, "n_dim": 1.0}
    default_theta = (0.3,)

    @property
    def dim(self):
        return int(self.fixed_constants["n_dim"])

    @property
    def prior_spec(self):
        return {"family": "normal", "variance": self.fixed_constants["prior_variance"]}

    def log_likelihood(self, theta, observations, responses):
        sigma2 = self.fixed_constants["sigma2"]
        resid = observations - theta
        return float(-0.5 * resid.size * (LOG_2PI + np.log(sigma2)) - 0.5 * np.sum(resid**2) / sigma2)

    def grad_log_likelihood(self, theta, observations, responses):
        return np.sum(observations - theta, axis=0) / self.fixed_constants["sigma2"]

    def log_prior(self, theta):
        tau2 = self.fixed_constants["prior_variance"]
        return float(-0.5 * theta.size * (LOG_2PI + np.log(tau2)) - 0.5 * np.dot(theta, theta) / tau2)

    def grad_log_prior(self, theta):
        return -theta / self.fixed_constants["prior_variance"]

    def simulate(self, n, true_theta, rng):
        return true_theta + np.sqrt(self.fixed_constants["sigma2"]) * rng.standard_normal((n, self.dim)), None

    def subposterior_moments(self, observations, c_total: int) -> tuple[np.ndarray, float]:
        """Mean vector and per-component variance of the batch subposterior"""
        precision = observations.shape[0] / self.fixed_constants["sigma2"] + 1.0 / (
            c_total * self.fixed_constants["prior_variance"]
        )
        mean = np.sum(observations, axis=0) / self.fixed_constants["sigma2"] / precision
        return mean, 1.0 / precision


@pytest.fixture
def gaussian_model():
    return GaussianMean()


@pytest.fixture
def gaussian_problem(gaussian_model):
    """1-d Gaussian-mean data split into 4 batches, with the exact full posterior"""
    data = generate_data(gaussian_model, 400, seed=3)
    batches = partition_data(data, 4, seed=5)
    mean, var = gaussian_model.subposterior_moments(data.observations, 1)
    return {"model": gaussian_model, "data": data, "batches": batches, "mean": mean, "var": var}


@pytest.fixture
def gaussian_merged(gaussian_problem):
    """Merged GP fitted to exact draws from each Gaussian subposterior"""
    model = gaussian_problem["model"]
    batches = gaussian_problem["batches"]
    rng = np.random.default_rng(11)
    surrogates = []
    for batch in batches:
        mean, var = model.subposterior_moments(batch.observations, len(batches))
        draws = mean + np.sqrt(var) * rng.standard_normal((40, 1))
        targets = log_subposterior_many(model, batch, draws, len(batches))
        surrogates.append(fit_surrogate(draws, targets, seed=batch.batch_id))
    return MergedGp(surrogates)


def grid_surrogate(offset: float = 0.0):
    """Well-conditioned 2-d surrogate on a 4 x 3 grid with a non-quadratic target"""
    xs, ys = np.meshgrid(np.arange(4.0) - 1.5 + offset, np.arange(3.0) - 1.0)
    inputs = np.column_stack([xs.ravel(), ys.ravel()])
    targets = -0.5 * np.sum(inputs**2, axis=1) + np.sin(inputs[:, 0])
    kernel = KernelParams(1.0, np.array([1.0, 1.0]), 1e-8)
    mean = MeanParams(0.1, np.array([0.2, -0.1]), -0.5, np.eye(2))
    return assemble_surrogate(inputs, targets, kernel, mean)


@pytest.fixture
def grid_merged():
    return MergedGp([grid_surrogate(0.0), grid_surrogate(0.4)])
