"""
Datasets, batches and (sub)posterior log-densities

A subposterior conditions on one batch and raises the prior to 1/C:
log p(Y_c | theta) + (1/C) log p(theta).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from common.errors import ConfigurationError, DomainError
from common.workers import rng_stream
from targets.models import Model, make_model

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """n observations (n x p) with optional responses (length n)"""

    observations: np.ndarray
    responses: np.ndarray | None = None
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        observations = np.asarray(self.observations, dtype=float)
        if observations.ndim == 1:
            observations = observations[:, None]
        if observations.ndim != 2 or observations.shape[0] < 1:
            raise DomainError("Dataset needs at least one observation row")
        if not np.all(np.isfinite(observations)):
            raise DomainError("Dataset observations contain non-finite entries")
        object.__setattr__(self, "observations", observations)
        if self.responses is not None:
            responses = np.asarray(self.responses, dtype=float).ravel()
            if responses.size != observations.shape[0]:
                raise DomainError(
                    f"Dataset has {observations.shape[0]} rows but {responses.size} responses"
                )
            if not np.all(np.isfinite(responses)):
                raise DomainError("Dataset responses contain non-finite entries")
            object.__setattr__(self, "responses", responses)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def p(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True, eq=False)
class Batch:
    """Subset of a dataset's rows held by one worker"""

    parent: Dataset
    indices: np.ndarray
    batch_id: int
    observations: np.ndarray = field(init=False, repr=False)
    responses: np.ndarray | None = field(init=False, repr=False)

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        if indices.size == 0:
            raise ConfigurationError(f"Batch {self.batch_id} is empty")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "observations", self.parent.observations[indices])
        responses = None if self.parent.responses is None else self.parent.responses[indices]
        object.__setattr__(self, "responses", responses)

    @property
    def size(self) -> int:
        return self.indices.size


def full_batch(data: Dataset) -> Batch:
    """The whole dataset as a single batch (C = 1)"""
    return Batch(data, np.arange(data.n), 1)


def _check_theta(model: Model, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != model.dim:
        raise DomainError(f"{model.name} expects {model.dim} parameters, got {theta.size}")
    if not np.all(np.isfinite(theta)):
        raise DomainError(f"Non-finite parameter {theta}")
    return theta


def log_subposterior(model: Model, batch: Batch, theta, c_total: int) -> float:
    """
    log p(Y_c | theta) + (1/C) log p(theta), up to the model's fixed constant

    Raises:
        DomainError: theta outside the support or result not finite
    """
    if c_total < 1:
        raise ConfigurationError(f"c_total must be >= 1, got {c_total}")
    theta = _check_theta(model, theta)
    value = model.log_likelihood(theta, batch.observations, batch.responses) + model.log_prior(theta) / c_total
    if not np.isfinite(value):
        raise DomainError(f"{model.name} log-subposterior is not finite at {theta}")
    return value


def grad_log_subposterior(model: Model, batch: Batch, theta, c_total: int) -> np.ndarray:
    """Analytic gradient of log_subposterior in theta"""
    if c_total < 1:
        raise ConfigurationError(f"c_total must be >= 1, got {c_total}")
    theta = _check_theta(model, theta)
    grad = model.grad_log_likelihood(theta, batch.observations, batch.responses) + model.grad_log_prior(theta) / c_total
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise DomainError(f"{model.name} gradient is not finite at {theta}")
    return grad


def log_posterior(model: Model, data: Dataset, theta) -> float:
    """Full-data log-posterior (C = 1)"""
    return log_subposterior(model, full_batch(data), theta, 1)


def log_subposterior_many(model: Model, batch: Batch, thetas: np.ndarray, c_total: int) -> np.ndarray:
    """
    Evaluate log_subposterior at every row of thetas
    Points outside the support get -inf instead of raising.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    values = np.empty(thetas.shape[0])
    for i, theta in enumerate(thetas):
        try:
            values[i] = log_subposterior(model, batch, theta, c_total)
        except DomainError:
            values[i] = -np.inf
    return values


class SubposteriorTarget:
    """Log-density oracle for one batch, as consumed by the HMC sampler"""

    def __init__(self, model: Model, batch: Batch, c_total: int):
        self.model = model
        self.batch = batch
        self.c_total = c_total

    @property
    def dim(self) -> int:
        return self.model.dim

    def log_density(self, theta) -> float:
        return log_subposterior(self.model, self.batch, theta, self.c_total)

    def grad_log_density(self, theta) -> np.ndarray:
        return grad_log_subposterior(self.model, self.batch, theta, self.c_total)


def generate_data(model: Model | str, n: int, true_theta=None, seed: int = 0) -> Dataset:
    """
    Simulate a synthetic dataset from a benchmark model

    Args:
        model: Model instance or registered model name
        n: Number of observations
        true_theta: Natural-scale parameter (model default when None)
        seed: Random seed; output is deterministic given the seed

    Returns:
        Dataset with n rows
    """
    if isinstance(model, str):
        model = make_model(model)
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    theta = np.asarray(model.default_theta if true_theta is None else true_theta, dtype=float).ravel()
    if theta.size != model.dim:
        raise ConfigurationError(f"{model.name} expects a true parameter of length {model.dim}")
    observations, responses = model.simulate(n, theta, np.random.default_rng(seed))
    logger.info(f"Simulated {n} observations from {model.name} at theta*={theta.tolist()}")
    return Dataset(observations, responses)


def partition_data(data: Dataset, c_total: int, seed: int) -> list[Batch]:
    """
    Random disjoint split into C batches whose sizes differ by at most one

    Raises:
        ConfigurationError: c_total < 1 or c_total > n
    """
    if c_total < 1 or c_total > data.n:
        raise ConfigurationError(f"Cannot split {data.n} rows into {c_total} batches")
    order = rng_stream(seed, 0).permutation(data.n)
    batches = [
        Batch(data, np.sort(chunk), batch_id)
        for batch_id, chunk in enumerate(np.array_split(order, c_total), start=1)
    ]
    sizes = [b.size for b in batches]
    logger.info(f"Partitioned {data.n} rows into {c_total} batches (sizes {min(sizes)}-{max(sizes)})")
    return batches
