"""
Benchmark statistical models
Each model gives the log-likelihood of a batch, the log-prior on the
sampling scale and their hand-derived gradients, plus a data simulator.
"""

from abc import ABC, abstractmethod
from typing import ClassVar, Mapping

import numpy as np
from scipy.special import betaln, expit, logit

from common.errors import ConfigurationError, DomainError

LOG_2PI = np.log(2.0 * np.pi)


def _softplus(x):
    return np.logaddexp(0.0, x)


class Model(ABC):
    """
    Base class for the benchmark models

    Parameters live on the sampling (unconstrained) scale; `to_natural`
    maps draws back to the scale the model is reported on.
    """

    name: ClassVar[str]
    default_constants: ClassVar[dict]
    default_theta: ClassVar[tuple]

    def __init__(self, constants: Mapping | None = None):
        constants = dict(constants or {})
        unknown = sorted(set(constants) - set(self.default_constants))
        if unknown:
            raise ConfigurationError(
                f"Unknown constants for model '{self.name}': {', '.join(unknown)}"
            )
        self.fixed_constants = {**self.default_constants, **constants}
        self._validate_constants()

    def _validate_constants(self):
        for key, value in self.fixed_constants.items():
            if not np.isfinite(value) or value <= 0:
                raise ConfigurationError(f"Constant '{key}' of model '{self.name}' must be positive, got {value}")

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @property
    @abstractmethod
    def prior_spec(self) -> dict:
        ...

    @abstractmethod
    def log_likelihood(self, theta: np.ndarray, observations: np.ndarray, responses: np.ndarray | None) -> float:
        ...

    @abstractmethod
    def grad_log_likelihood(self, theta: np.ndarray, observations: np.ndarray, responses: np.ndarray | None) -> np.ndarray:
        ...

    @abstractmethod
    def log_prior(self, theta: np.ndarray) -> float:
        ...

    @abstractmethod
    def grad_log_prior(self, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def simulate(self, n: int, true_theta: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
        """Draw n observations (and responses) given a natural-scale parameter"""

    def check_data(self, observations: np.ndarray, responses: np.ndarray | None):
        """Raise DomainError when the data cannot come from this model"""

    def to_natural(self, draws: np.ndarray) -> np.ndarray:
        return np.asarray(draws, dtype=float)

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, constants={self.fixed_constants})"


class _NormalPriorMixin:
    """Independent N(0, prior_variance) prior on every component"""

    def log_prior(self, theta):
        variance = self.fixed_constants["prior_variance"]
        return float(-0.5 * theta.size * (LOG_2PI + np.log(variance)) - 0.5 * np.dot(theta, theta) / variance)

    def grad_log_prior(self, theta):
        return -theta / self.fixed_constants["prior_variance"]

    @property
    def prior_spec(self):
        return {"family": "normal", "mean": 0.0, "variance": self.fixed_constants["prior_variance"]}


class WarpedGaussian(_NormalPriorMixin, Model):
    """y_i ~ N(theta_1 + theta_2^2, sigma2); the sign of theta_2 is unidentified"""

    name = "warped_gaussian"
    default_constants = {"sigma2": 1.0, "prior_variance": 0.5}
    default_theta = (0.5, 0.0)

    @property
    def dim(self):
        return 2

    def log_likelihood(self, theta, observations, responses):
        sigma2 = self.fixed_constants["sigma2"]
        resid = observations[:, 0] - (theta[0] + theta[1] ** 2)
        return float(-0.5 * resid.size * (LOG_2PI + np.log(sigma2)) - 0.5 * np.dot(resid, resid) / sigma2)

    def grad_log_likelihood(self, theta, observations, responses):
        score = np.sum(observations[:, 0] - (theta[0] + theta[1] ** 2)) / self.fixed_constants["sigma2"]
        return np.array([score, 2.0 * theta[1] * score])

    def simulate(self, n, true_theta, rng):
        centre = true_theta[0] + true_theta[1] ** 2
        y = centre + np.sqrt(self.fixed_constants["sigma2"]) * rng.standard_normal(n)
        return y[:, None], None


class GaussianMixture(_NormalPriorMixin, Model):
    """Equal-weight mixture of two bivariate N(mean_k, I); theta = (mean_1, mean_2)"""

    name = "gaussian_mixture"
    default_constants = {"prior_variance": 100.0}
    default_theta = (0.1, 0.1, -0.1, -0.1)

    @property
    def dim(self):
        return 4

    def _components(self, theta, observations):
        diff1 = observations - theta[:2]
        diff2 = observations - theta[2:]
        log1 = -LOG_2PI - 0.5 * np.sum(diff1**2, axis=1)
        log2 = -LOG_2PI - 0.5 * np.sum(diff2**2, axis=1)
        return diff1, diff2, log1, log2

    def log_likelihood(self, theta, observations, responses):
        _, _, log1, log2 = self._components(theta, observations)
        return float(np.sum(np.logaddexp(log1, log2)) + log1.size * np.log(0.5))

    def grad_log_likelihood(self, theta, observations, responses):
        diff1, diff2, log1, log2 = self._components(theta, observations)
        resp1 = expit(log1 - log2)
        grad1 = resp1 @ diff1
        grad2 = (1.0 - resp1) @ diff2
        return np.concatenate([grad1, grad2])

    def check_data(self, observations, responses):
        if observations.shape[1] != 2:
            raise DomainError("gaussian_mixture expects bivariate observations")

    def simulate(self, n, true_theta, rng):
        first = rng.random(n) < 0.5
        means = np.where(first[:, None], true_theta[:2], true_theta[2:])
        return means + rng.standard_normal((n, 2)), None


class RareBernoulli(Model):
    """
    y_i ~ Bernoulli(theta) with a Beta(a, b) prior
    Sampled on the logit scale; the prior carries the log-Jacobian.
    """

    name = "rare_bernoulli"
    default_constants = {"prior_a": 2.0, "prior_b": 2.0}
    default_theta = (0.001,)

    @property
    def dim(self):
        return 1

    @property
    def prior_spec(self):
        return {
            "family": "beta",
            "a": self.fixed_constants["prior_a"],
            "b": self.fixed_constants["prior_b"],
            "scale": "logit",
        }

    def log_likelihood(self, theta, observations, responses):
        successes = float(np.sum(observations[:, 0]))
        trials = observations.shape[0]
        phi = theta[0]
        return float(-successes * _softplus(-phi) - (trials - successes) * _softplus(phi))

    def grad_log_likelihood(self, theta, observations, responses):
        successes = float(np.sum(observations[:, 0]))
        return np.array([successes - observations.shape[0] * expit(theta[0])])

    def log_prior(self, theta):
        a, b = self.fixed_constants["prior_a"], self.fixed_constants["prior_b"]
        phi = theta[0]
        # Beta density times the Jacobian theta * (1 - theta)
        return float(-betaln(a, b) - a * _softplus(-phi) - b * _softplus(phi))

    def grad_log_prior(self, theta):
        a, b = self.fixed_constants["prior_a"], self.fixed_constants["prior_b"]
        prob = expit(theta[0])
        return np.array([a * (1.0 - prob) - b * prob])

    def check_data(self, observations, responses):
        values = observations[:, 0]
        if not np.all((values == 0.0) | (values == 1.0)):
            raise DomainError("rare_bernoulli observations must be 0/1")

    def simulate(self, n, true_theta, rng):
        prob = float(true_theta[0])
        if not 0.0 < prob < 1.0:
            raise DomainError(f"Bernoulli probability must lie in (0, 1), got {prob}")
        return (rng.random(n) < prob).astype(float)[:, None], None

    def to_natural(self, draws):
        return expit(np.asarray(draws, dtype=float))

    def to_unconstrained(self, theta):
        theta = np.asarray(theta, dtype=float)
        if np.any((theta <= 0.0) | (theta >= 1.0)):
            raise DomainError(f"Bernoulli probability must lie in (0, 1), got {theta}")
        return logit(theta)

    def posterior_parameters(self, successes: float, trials: int) -> tuple[float, float]:
        """Conjugate Beta posterior parameters on the natural scale"""
        return (
            self.fixed_constants["prior_a"] + successes,
            self.fixed_constants["prior_b"] + trials - successes,
        )


class LogisticRegression(_NormalPriorMixin, Model):
    """
    Bernoulli responses with logit link

    Synthetic design: column 0 is the constant 1, column 1 a rare binary
    covariate present in about `rare_rate` of rows, the rest standard normal.
    """

    name = "logistic_regression"
    default_constants = {"n_covariates": 5, "prior_variance": 100.0, "rare_rate": 0.01}
    default_theta = (-3.0, 3.0, 0.5, -0.5, 0.25)

    def _validate_constants(self):
        super()._validate_constants()
        n_cov = self.fixed_constants["n_covariates"]
        if int(n_cov) != n_cov:
            raise ConfigurationError("n_covariates must be an integer")
        self.fixed_constants["n_covariates"] = int(n_cov)
        if not 0.0 < self.fixed_constants["rare_rate"] < 1.0:
            raise ConfigurationError("rare_rate must lie in (0, 1)")

    @property
    def dim(self):
        return self.fixed_constants["n_covariates"]

    def log_likelihood(self, theta, observations, responses):
        eta = observations @ theta
        return float(np.dot(responses, eta) - np.sum(_softplus(eta)))

    def grad_log_likelihood(self, theta, observations, responses):
        return observations.T @ (responses - expit(observations @ theta))

    def check_data(self, observations, responses):
        if responses is None:
            raise DomainError("logistic_regression needs a response column")
        if observations.shape[1] != self.dim:
            raise DomainError(
                f"logistic_regression has {self.dim} coefficients but data has {observations.shape[1]} covariates"
            )
        if not np.all((responses == 0.0) | (responses == 1.0)):
            raise DomainError("logistic_regression responses must be 0/1")

    def simulate(self, n, true_theta, rng):
        design = np.empty((n, self.dim))
        design[:, 0] = 1.0
        if self.dim > 1:
            design[:, 1] = (rng.random(n) < self.fixed_constants["rare_rate"]).astype(float)
        if self.dim > 2:
            design[:, 2:] = rng.standard_normal((n, self.dim - 2))
        responses = (rng.random(n) < expit(design @ true_theta)).astype(float)
        return design, responses


class LaplaceMixture(_NormalPriorMixin, Model):
    """
    Equal-weight mixture of Laplace(theta, beta1) and Laplace(-theta, beta2)
    Only identifiable because beta1 != beta2, so subposteriors are bimodal.
    """

    name = "laplace_mixture"
    default_constants = {"beta1": 1.01, "beta2": 0.99, "prior_variance": 1.0}
    default_theta = (0.05,)

    @property
    def dim(self):
        return 1

    def _components(self, theta, observations):
        beta1, beta2 = self.fixed_constants["beta1"], self.fixed_constants["beta2"]
        y = observations[:, 0]
        log1 = np.log(0.5 / (2.0 * beta1)) - np.abs(y - theta[0]) / beta1
        log2 = np.log(0.5 / (2.0 * beta2)) - np.abs(y + theta[0]) / beta2
        return y, log1, log2

    def log_likelihood(self, theta, observations, responses):
        _, log1, log2 = self._components(theta, observations)
        return float(np.sum(np.logaddexp(log1, log2)))

    def grad_log_likelihood(self, theta, observations, responses):
        beta1, beta2 = self.fixed_constants["beta1"], self.fixed_constants["beta2"]
        y, log1, log2 = self._components(theta, observations)
        resp1 = expit(log1 - log2)
        score = resp1 * np.sign(y - theta[0]) / beta1 - (1.0 - resp1) * np.sign(y + theta[0]) / beta2
        return np.array([np.sum(score)])

    def simulate(self, n, true_theta, rng):
        beta1, beta2 = self.fixed_constants["beta1"], self.fixed_constants["beta2"]
        first = rng.random(n) < 0.5
        y = np.where(
            first,
            true_theta[0] + rng.laplace(0.0, beta1, n),
            -true_theta[0] + rng.laplace(0.0, beta2, n),
        )
        return y[:, None], None


MODELS: dict[str, type[Model]] = {
    cls.name: cls for cls in (WarpedGaussian, GaussianMixture, RareBernoulli, LogisticRegression, LaplaceMixture)
}


def make_model(name: str, constants: Mapping | None = None) -> Model:
    """
    Build a benchmark model by name

    Raises:
        ConfigurationError: unknown model name or inconsistent constants
    """
    try:
        cls = MODELS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unsupported model '{name}'; choose one of {', '.join(sorted(MODELS))}"
        ) from None
    return cls(constants)
