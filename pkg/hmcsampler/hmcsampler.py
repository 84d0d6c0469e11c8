"""
Hamiltonian Monte Carlo with leapfrog integration

Fixed trajectory length L, step size tuned by dual averaging during
warm-up, optional diagonal mass-matrix adaptation. Chains record every
iteration (warm-up included) together with the cached log-density used
in the accept step.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import pandas as pd

from common.csvio import read_frame, write_frame
from common.errors import ConfigurationError, DivergenceError, DomainError, PostprocessError
from hmcsampler.dualaveraging import DualAveragingStepSize, find_reasonable_step_size

logger = logging.getLogger(__name__)


class LogDensityTarget(Protocol):
    def log_density(self, theta: np.ndarray) -> float: ...

    def grad_log_density(self, theta: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class HmcConfig:
    """Sampler settings; mass_matrix=None means the identity"""

    n_iter: int = 10_000
    leapfrog_steps: int = 20
    step_size: float = 0.1
    mass_matrix: np.ndarray | None = None
    adapt_iters: int = 1_000
    target_accept: float = 0.65
    seed: int = 0
    adapt_mass: bool = True
    step_jitter: float = 0.1
    divergence_threshold: float = 1_000.0
    search_step_size: bool = True

    def __post_init__(self):
        if self.n_iter < 1:
            raise ConfigurationError(f"n_iter must be >= 1, got {self.n_iter}")
        if self.leapfrog_steps < 1:
            raise ConfigurationError(f"leapfrog_steps must be >= 1, got {self.leapfrog_steps}")
        if not self.step_size > 0:
            raise ConfigurationError(f"step_size must be positive, got {self.step_size}")
        if self.adapt_iters < 0:
            raise ConfigurationError(f"adapt_iters must be >= 0, got {self.adapt_iters}")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigurationError(f"target_accept must lie in (0, 1), got {self.target_accept}")
        if not 0.0 <= self.step_jitter < 1.0:
            raise ConfigurationError(f"step_jitter must lie in [0, 1), got {self.step_jitter}")
        if self.mass_matrix is not None:
            mass = np.atleast_2d(np.asarray(self.mass_matrix, dtype=float))
            if mass.shape[0] != mass.shape[1] or not np.allclose(mass, mass.T):
                raise ConfigurationError("mass_matrix must be square and symmetric")
            try:
                np.linalg.cholesky(mass)
            except np.linalg.LinAlgError:
                raise ConfigurationError("mass_matrix must be positive definite") from None
            object.__setattr__(self, "mass_matrix", mass)

    def mass(self, dim: int) -> np.ndarray:
        if self.mass_matrix is None:
            return np.eye(dim)
        if self.mass_matrix.shape[0] != dim:
            raise ConfigurationError(f"mass_matrix is {self.mass_matrix.shape[0]}-dimensional, target is {dim}")
        return self.mass_matrix


@dataclass(frozen=True, eq=False)
class ChainRecord:
    """
    MCMC output: draws paired with the log-density cached at each draw

    The first `n_warmup` rows are adaptation draws.
    """

    draws: np.ndarray
    log_densities: np.ndarray
    accept_flags: np.ndarray
    tuned_step_size: float
    n_warmup: int = 0
    divergent: np.ndarray | None = None
    iterations: np.ndarray | None = None
    mass_matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        n = draws.shape[0]
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "log_densities", np.asarray(self.log_densities, dtype=float).ravel())
        object.__setattr__(self, "accept_flags", np.asarray(self.accept_flags, dtype=bool).ravel())
        divergent = np.zeros(n, dtype=bool) if self.divergent is None else np.asarray(self.divergent, dtype=bool).ravel()
        iterations = np.arange(n) if self.iterations is None else np.asarray(self.iterations, dtype=np.int64).ravel()
        object.__setattr__(self, "divergent", divergent)
        object.__setattr__(self, "iterations", iterations)
        lengths = {n, self.log_densities.size, self.accept_flags.size, divergent.size, iterations.size}
        if len(lengths) != 1:
            raise ValueError(f"ChainRecord fields have inconsistent lengths {sorted(lengths)}")
        if not 0 <= self.n_warmup <= n:
            raise ValueError(f"n_warmup={self.n_warmup} outside [0, {n}]")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    @property
    def acceptance_rate(self) -> float:
        kept = self.accept_flags[self.n_warmup:]
        return float(kept.mean()) if kept.size else float("nan")

    @property
    def divergent_fraction(self) -> float:
        kept = self.divergent[self.n_warmup:]
        return float(kept.mean()) if kept.size else float("nan")

    def sampled_draws(self) -> np.ndarray:
        """Draws after warm-up"""
        return self.draws[self.n_warmup:]

    def subset(self, rows) -> "ChainRecord":
        """Rows of the chain as a new record without warm-up"""
        rows = np.asarray(rows)
        return ChainRecord(
            draws=self.draws[rows],
            log_densities=self.log_densities[rows],
            accept_flags=self.accept_flags[rows],
            tuned_step_size=self.tuned_step_size,
            n_warmup=0,
            divergent=self.divergent[rows],
            iterations=self.iterations[rows],
            mass_matrix=self.mass_matrix,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.draws, columns=[f"theta_{i + 1}" for i in range(self.dim)])
        frame.insert(0, "iter", self.iterations)
        frame["log_density"] = self.log_densities
        frame["accepted"] = self.accept_flags.astype(int)
        return frame

    def to_csv(self, path: Path | str, provenance: dict | None = None) -> Path:
        """Columns: iter, theta_1..theta_d, log_density, accepted"""
        return write_frame(self.to_frame(), path, provenance)

    @classmethod
    def from_csv(cls, path: Path | str, tuned_step_size: float = float("nan")) -> "ChainRecord":
        frame = read_frame(path)
        theta_cols = [c for c in frame.columns if c.startswith("theta_")]
        return cls(
            draws=frame[theta_cols].to_numpy(dtype=float),
            log_densities=frame["log_density"].to_numpy(dtype=float),
            accept_flags=frame["accepted"].to_numpy(dtype=bool),
            tuned_step_size=tuned_step_size,
            iterations=frame["iter"].to_numpy(),
        )


def _safe_grad(grad_log_density: Callable, theta: np.ndarray) -> np.ndarray:
    try:
        return np.asarray(grad_log_density(theta), dtype=float)
    except DomainError:
        return np.full(theta.shape, np.nan)


def _safe_log_density(target: LogDensityTarget, theta: np.ndarray) -> float:
    if not np.all(np.isfinite(theta)):
        return -np.inf
    try:
        value = float(target.log_density(theta))
    except DomainError:
        return -np.inf
    return value if np.isfinite(value) else -np.inf


def leapfrog(grad_log_density: Callable, theta, momentum, step_size: float, n_steps: int, mass=None, *, inverse_mass=None):
    """
    L leapfrog steps: half momentum step, full position step, half momentum step

    Args:
        grad_log_density: gradient oracle of log pi
        theta: start position
        momentum: start momentum
        step_size: epsilon
        n_steps: L
        mass: mass matrix M (identity when None)
        inverse_mass: precomputed M^-1, takes precedence over mass

    Returns:
        (theta', momentum'); both all-NaN when a non-finite gradient was met
        (the trajectory is divergent)
    """
    theta = np.array(theta, dtype=float)
    momentum = np.array(momentum, dtype=float)
    if inverse_mass is None:
        inverse_mass = np.eye(theta.size) if mass is None else np.linalg.inv(np.atleast_2d(mass))
    grad = _safe_grad(grad_log_density, theta)
    for _ in range(n_steps):
        if not np.all(np.isfinite(grad)):
            return np.full_like(theta, np.nan), np.full_like(momentum, np.nan)
        momentum = momentum + 0.5 * step_size * grad
        theta = theta + step_size * (inverse_mass @ momentum)
        grad = _safe_grad(grad_log_density, theta)
        if not np.all(np.isfinite(grad)):
            return np.full_like(theta, np.nan), np.full_like(momentum, np.nan)
        momentum = momentum + 0.5 * step_size * grad
    return theta, momentum


def _kinetic(momentum: np.ndarray, inverse_mass: np.ndarray) -> float:
    return 0.5 * float(momentum @ inverse_mass @ momentum)


class _MassState:
    """Mass matrix with its inverse and Cholesky factor"""

    def __init__(self, mass: np.ndarray):
        self.mass = mass
        self.inverse = np.linalg.inv(mass)
        self.chol = np.linalg.cholesky(mass)

    @classmethod
    def from_variances(cls, variances: np.ndarray) -> "_MassState":
        return cls(np.diag(1.0 / variances))


def _regularised_variances(window: np.ndarray) -> np.ndarray:
    count = window.shape[0]
    variances = np.var(window, axis=0, ddof=1)
    return (count / (count + 5.0)) * variances + 1e-3 * (5.0 / (count + 5.0))


def run_hmc(target: LogDensityTarget, config: HmcConfig, theta0) -> ChainRecord:
    """
    Run one HMC chain

    Warm-up (adapt_iters iterations) tunes the step size by dual averaging
    and, when enabled, a diagonal mass matrix from the middle of warm-up.
    Each iteration refreshes momentum ~ N(0, M), runs L leapfrog steps and
    accepts with probability min(1, exp(-dH)); |dH| above the divergence
    threshold (or a non-finite trajectory) rejects as divergent.

    Args:
        target: log-density and gradient oracle
        config: sampler settings
        theta0: start point (log-density must be finite there)

    Returns:
        ChainRecord with adapt_iters + n_iter rows, warm-up first

    Raises:
        DomainError: target not finite at theta0
        DivergenceError: every warm-up iteration diverged
    """
    rng = np.random.default_rng(config.seed)
    theta = np.array(theta0, dtype=float).ravel()
    dim = theta.size
    log_density = float(target.log_density(theta))
    if not np.isfinite(log_density):
        raise DomainError(f"Target log-density is not finite at the start point {theta}")
    mass = _MassState(config.mass(dim))
    grad_fn = target.grad_log_density
    n_steps = config.leapfrog_steps

    def one_step_ratio(step, at_theta, at_log_density):
        momentum = mass.chol @ rng.standard_normal(dim)
        new_theta, new_momentum = leapfrog(grad_fn, at_theta, momentum, step, 1, inverse_mass=mass.inverse)
        new_log_density = _safe_log_density(target, new_theta)
        if not np.isfinite(new_log_density):
            return -np.inf
        return (new_log_density - _kinetic(new_momentum, mass.inverse)) - (at_log_density - _kinetic(momentum, mass.inverse))

    step = config.step_size
    if config.search_step_size:
        step = find_reasonable_step_size(lambda s: one_step_ratio(s, theta, log_density), step)
    adapter = DualAveragingStepSize(step, config.target_accept)
    tuned_step = step

    n_adapt = config.adapt_iters
    total = n_adapt + config.n_iter
    mass_start, mass_end = int(0.15 * n_adapt), int(0.6 * n_adapt)
    adapt_mass = config.adapt_mass and config.mass_matrix is None and mass_end - mass_start >= 20

    draws = np.empty((total, dim))
    log_densities = np.empty(total)
    accepted = np.zeros(total, dtype=bool)
    divergent = np.zeros(total, dtype=bool)

    for t in range(total):
        warming = t < n_adapt
        if warming:
            eps = step
        else:
            eps = tuned_step * (1.0 + config.step_jitter * rng.uniform(-1.0, 1.0))
        momentum = mass.chol @ rng.standard_normal(dim)
        new_theta, new_momentum = leapfrog(grad_fn, theta, momentum, eps, n_steps, inverse_mass=mass.inverse)
        new_log_density = _safe_log_density(target, new_theta)
        energy_change = (-new_log_density + _kinetic(new_momentum, mass.inverse)) - (
            -log_density + _kinetic(momentum, mass.inverse)
        )
        if not np.isfinite(energy_change) or abs(energy_change) > config.divergence_threshold:
            divergent[t] = True
            accept_prob = 0.0
        else:
            accept_prob = float(np.exp(min(0.0, -energy_change)))
        if rng.random() < accept_prob:
            theta, log_density = new_theta, new_log_density
            accepted[t] = True
        draws[t] = theta
        log_densities[t] = log_density

        if warming:
            step = adapter.update(accept_prob)
            if adapt_mass and t == mass_end - 1:
                mass = _MassState.from_variances(_regularised_variances(draws[mass_start:mass_end]))
                step = find_reasonable_step_size(lambda s: one_step_ratio(s, theta, log_density), step)
                adapter = DualAveragingStepSize(step, config.target_accept)
                logger.debug(f"Adapted diagonal mass matrix: {np.diag(mass.mass)}")
            if t == n_adapt - 1:
                if divergent[:n_adapt].all():
                    raise DivergenceError(
                        f"All {n_adapt} adaptation iterations diverged; last step size {step:.3g}",
                        {"last_step_size": step, "theta": theta.tolist(), "log_density": log_density},
                    )
                tuned_step = adapter.final_step_size

    chain = ChainRecord(
        draws=draws,
        log_densities=log_densities,
        accept_flags=accepted,
        tuned_step_size=tuned_step,
        n_warmup=n_adapt,
        divergent=divergent,
        mass_matrix=mass.mass,
    )
    logger.info(
        f"HMC finished: {config.n_iter} draws, acceptance {chain.acceptance_rate:.2f}, "
        f"step {tuned_step:.3g}, divergent {chain.divergent_fraction:.1%}"
    )
    if chain.divergent_fraction > 0.01:
        logger.warning(f"{chain.divergent_fraction:.1%} of post-warm-up trajectories diverged")
    return chain


def postprocess(chain: ChainRecord, thin: int = 1, drop_duplicates: bool = True) -> ChainRecord:
    """
    Discard warm-up, keep every thin-th draw, drop exact repeats of earlier rows

    Raises:
        ConfigurationError: thin < 1
        PostprocessError: nothing left
    """
    if thin < 1:
        raise ConfigurationError(f"thin must be >= 1, got {thin}")
    rows = np.arange(chain.n_warmup, chain.n_draws)[thin - 1 :: thin]
    if drop_duplicates and rows.size:
        _, first = np.unique(chain.draws[rows], axis=0, return_index=True)
        rows = rows[np.sort(first)]
    if rows.size == 0:
        raise PostprocessError(
            f"No draws left after discarding {chain.n_warmup} warm-up draws and thinning by {thin}; "
            "run the chain for longer"
        )
    return chain.subset(rows)
