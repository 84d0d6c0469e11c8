"""
Recombination of the batch results into one posterior approximation

- GP-HMC: HMC on the expected density of the merged GP
- DIS: importance weights from the true subposteriors, evaluated per batch
- GP-IS: importance weights from M joint realisations of the merged GP
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from common.csvio import write_frame
from common.errors import ConfigurationError, DegenerateWeightsError
from common.workers import parallel_map, rng_stream
from gpsurrogate.realisations import realisation_factor
from hmcsampler.hmcsampler import ChainRecord, HmcConfig, run_hmc
from mergegp.mergegp import ExpectedDensityTarget, MergedGp
from targets.models import Model
from targets.targets import Batch, log_subposterior_many

logger = logging.getLogger(__name__)

Functional = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Points with self-normalised importance weights"""

    points: np.ndarray
    weights: np.ndarray
    log_z_hat: float
    ess: float = field(init=False)

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if weights.size != points.shape[0]:
            raise ValueError(f"{points.shape[0]} points but {weights.size} weights")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("Weights must be non-negative and sum to one")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "ess", float(1.0 / np.sum(weights**2)))

    @classmethod
    def from_log_weights(cls, points: np.ndarray, log_weights: np.ndarray) -> "WeightedSample":
        """
        Normalise unnormalised log-weights (max subtracted before exponentiating)

        log_z_hat is log((1/N) sum exp(log_weights)).

        Raises:
            DegenerateWeightsError: no finite log-weight
        """
        points = np.atleast_2d(points)
        log_weights = np.asarray(log_weights, dtype=float).ravel()
        finite = np.isfinite(log_weights)
        if not finite.any():
            raise DegenerateWeightsError(
                "Every importance weight is zero; the proposal misses the posterior support",
                {"n_points": int(log_weights.size), "n_finite": 0},
            )
        log_weights = np.where(finite, log_weights, -np.inf)
        log_total = logsumexp(log_weights)
        weights = np.exp(log_weights - log_total)
        return cls(points, weights / weights.sum(), float(log_total - np.log(log_weights.size)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        centred = self.points - self.mean()
        return (centred * self.weights[:, None]).T @ centred

    def standard_error(self) -> np.ndarray:
        """Delta-method standard error of the weighted mean per component"""
        centred = self.points - self.mean()
        return np.sqrt(np.sum((self.weights[:, None] * centred) ** 2, axis=0))

    def expectation(self, values: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(values, dtype=float)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.points, columns=[f"theta_{i + 1}" for i in range(self.points.shape[1])])
        frame["weight"] = self.weights
        return frame

    def to_csv(self, path: Path | str, provenance: dict | None = None) -> Path:
        return write_frame(self.to_frame(), path, provenance)


def _log_ess(sample: WeightedSample, label: str):
    logger.info(f"{label}: ESS {sample.ess:.1f} of {sample.n}")
    if sample.ess < 0.01 * sample.n:
        logger.warning(f"{label}: ESS below 1% of the sample size")


def gp_hmc_sample(merged: MergedGp, config: HmcConfig, theta0=None) -> ChainRecord:
    """
    HMC on log pi_E using its analytic gradient

    The default start point is the training input with the largest
    expected log-density across all surrogates.
    """
    if theta0 is None:
        candidates = np.vstack([s.training_inputs for s in merged.surrogates])
        theta0 = candidates[int(np.argmax(merged.log_expected_density_many(candidates)))]
    return run_hmc(ExpectedDensityTarget(merged), config, theta0)


def run_dis(
    proposal_sample: np.ndarray,
    proposal_logdensity: np.ndarray,
    model: Model,
    batches: Sequence[Batch],
    c_total: int | None = None,
    n_jobs: int | None = None,
) -> WeightedSample:
    """
    Distributed importance sampler

    Every batch evaluates its true log-subposterior at all N proposal
    points; log-weights are sum_c log pi_c - log q.

    Raises:
        ConfigurationError: proposal density length does not match the sample
        DegenerateWeightsError: no proposal point has positive weight
    """
    points = np.atleast_2d(np.asarray(proposal_sample, dtype=float))
    log_q = np.asarray(proposal_logdensity, dtype=float).ravel()
    if log_q.size != points.shape[0]:
        raise ConfigurationError(f"{points.shape[0]} proposal points but {log_q.size} proposal densities")
    if not batches:
        raise ConfigurationError("run_dis needs at least one batch")
    c_total = len(batches) if c_total is None else c_total

    per_batch = parallel_map(lambda b: log_subposterior_many(model, b, points, c_total), batches, n_jobs)
    log_target = np.sum(per_batch, axis=0)
    log_weights = log_target - log_q
    try:
        sample = WeightedSample.from_log_weights(points, log_weights)
    except DegenerateWeightsError as exc:
        finite_target = np.isfinite(log_target)
        exc.diagnostics.update(
            {
                "n_finite_target": int(finite_target.sum()),
                "n_finite_proposal": int(np.isfinite(log_q).sum()),
                "max_log_target": float(log_target[finite_target].max()) if finite_target.any() else None,
            }
        )
        raise
    _log_ess(sample, "DIS")
    return sample


def moment_functionals(dim: int, transform: Callable[[np.ndarray], np.ndarray] | None = None) -> dict[str, Functional]:
    """h = theta_i and h = theta_i^2 for every component, optionally on a transformed scale"""
    transform = transform or (lambda x: x)
    functionals = {}
    for i in range(dim):
        functionals[f"mean_theta_{i + 1}"] = lambda x, i=i: transform(x)[:, i]
        functionals[f"second_theta_{i + 1}"] = lambda x, i=i: transform(x)[:, i] ** 2
    return functionals


def _summarise(values: np.ndarray, estimate: float) -> dict:
    q025, median, q975 = np.quantile(values, [0.025, 0.5, 0.975])
    return {
        "estimate": float(estimate),
        "mean": float(np.mean(values)),
        "median": float(median),
        "q025": float(q025),
        "q975": float(q975),
    }


@dataclass(frozen=True, eq=False)
class GpIsResult:
    """GP-IS output: mean-weight sample, per-realisation estimates and their summaries"""

    weighted: WeightedSample
    per_realisation_estimates: dict[str, np.ndarray]
    summary: dict[str, dict]
    log_z_realisations: np.ndarray
    rank: int

    @property
    def m_realisations(self) -> int:
        return self.log_z_realisations.size

    def to_dict(self) -> dict:
        return {
            "m_realisations": self.m_realisations,
            "n_points": self.weighted.n,
            "rank": self.rank,
            "ess": self.weighted.ess,
            "summary": self.summary,
        }

    def save_json(self, path: Path | str, provenance: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = self.to_dict()
        if provenance:
            blob["provenance"] = provenance
        with open(path, "w", encoding="utf-8") as f:
            json.dump(blob, f, indent=2, sort_keys=True)
        return path


def run_gp_is(
    merged: MergedGp,
    proposal,
    n_points: int,
    m_realisations: int,
    functionals: Mapping[str, Functional] | None = None,
    seed: int = 0,
    method: str = "spectral",
    max_rank: int | None = None,
) -> GpIsResult:
    """
    GP importance sampler

    Draws N points from the proposal, samples M joint realisations l_m of
    the merged log-posterior there, and weights point i under realisation m
    by exp(l_m(theta_i)) / q(theta_i), normalised per realisation. The
    reported weights average the per-realisation weights over m.

    Args:
        proposal: object with sample(n, rng) and logpdf(points)
        functionals: name -> h(points) mapping; defaults to first and second moments
        max_rank: keep at most this many eigenpairs of the merged covariance

    Returns:
        GpIsResult; for every 'second_theta_i' functional with a matching
        'mean_theta_i', a 'var_theta_i' entry is added
    """
    if n_points < 1 or m_realisations < 1:
        raise ConfigurationError(f"n_points and m_realisations must be >= 1, got {n_points}, {m_realisations}")
    functionals = dict(functionals or moment_functionals(merged.dim))

    points = proposal.sample(n_points, rng_stream(seed, 1))
    log_q = proposal.logpdf(points)
    mu, sigma = merged.joint_posterior(points)
    factor = realisation_factor(sigma, method=method, max_rank=max_rank)
    z = rng_stream(seed, 2).standard_normal((m_realisations, factor.shape[1]))
    realisations = mu[None, :] + z @ factor.T
    logger.info(f"GP-IS: {m_realisations} realisations at {n_points} points, rank {factor.shape[1]}")

    log_weights = realisations - log_q[None, :]
    if not np.all(np.isfinite(log_weights)):
        raise DegenerateWeightsError(
            "GP-IS log-weights are not finite",
            {"n_points": n_points, "n_finite_proposal": int(np.isfinite(log_q).sum())},
        )
    log_totals = logsumexp(log_weights, axis=1)
    per_realisation = np.exp(log_weights - log_totals[:, None])
    mean_weights = per_realisation.mean(axis=0)
    weighted = WeightedSample(points, mean_weights / mean_weights.sum(), float(logsumexp(log_totals) - np.log(m_realisations * n_points)))
    _log_ess(weighted, "GP-IS")

    estimates, summary = {}, {}
    for name, h in functionals.items():
        values = np.asarray(h(points), dtype=float).ravel()
        estimates[name] = per_realisation @ values
        summary[name] = _summarise(estimates[name], weighted.expectation(values))
    for name in list(estimates):
        if name.startswith("second_"):
            suffix = name.removeprefix("second_")
            if f"mean_{suffix}" in estimates:
                variance = estimates[name] - estimates[f"mean_{suffix}"] ** 2
                point = summary[name]["estimate"] - summary[f"mean_{suffix}"]["estimate"] ** 2
                estimates[f"var_{suffix}"] = variance
                summary[f"var_{suffix}"] = _summarise(variance, point)

    return GpIsResult(
        weighted=weighted,
        per_realisation_estimates=estimates,
        summary=summary,
        log_z_realisations=log_totals - np.log(n_points),
        rank=int(factor.shape[1]),
    )


def resample(weighted: WeightedSample, n_out: int, seed: int) -> np.ndarray:
    """Multinomial resampling with replacement, probabilities equal to the weights"""
    if n_out < 1:
        raise ConfigurationError(f"n_out must be >= 1, got {n_out}")
    rng = np.random.default_rng(seed)
    index = rng.choice(weighted.n, size=n_out, replace=True, p=weighted.weights)
    return weighted.points[index]
