"""
Discrepancy between an approximate posterior sample and a reference sample

All metrics take the reference ("full") sample first.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from common.errors import MetricError

logger = logging.getLogger(__name__)

RIDGE = 1e-10


def finite_or_none(value):
    """Non-finite floats become None so records stay strict JSON"""
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _as_sample(sample, label: str) -> np.ndarray:
    sample = np.asarray(sample, dtype=float)
    if sample.ndim == 1:
        sample = sample[:, None]
    if sample.ndim != 2 or sample.shape[1] == 0:
        raise MetricError(f"{label} sample must be an N x d array with d >= 1")
    if sample.shape[0] < 2:
        raise MetricError(f"{label} sample needs at least two points, got {sample.shape[0]}")
    return sample


def _moments(sample: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Mean and covariance, ridged when the covariance is singular"""
    mean = sample.mean(axis=0)
    covariance = np.atleast_2d(np.cov(sample, rowvar=False))
    dim = covariance.shape[0]
    try:
        np.linalg.cholesky(covariance)
        return mean, covariance, False
    except np.linalg.LinAlgError:
        ridge = RIDGE * max(np.trace(covariance) / dim, 1e-300)
        logger.warning(f"Sample covariance is singular; adding ridge {ridge:.3g}")
        return mean, covariance + ridge * np.eye(dim), True


def mahalanobis(ref_sample, approx_sample) -> float:
    """sqrt((m_a - m_f)' V_f^-1 (m_a - m_f))"""
    ref = _as_sample(ref_sample, "reference")
    approx = _as_sample(approx_sample, "approximate")
    if ref.shape[1] != approx.shape[1]:
        raise MetricError("Samples differ in dimension")
    mean_f, cov_f, _ = _moments(ref)
    delta = approx.mean(axis=0) - mean_f
    return float(np.sqrt(max(delta @ np.linalg.solve(cov_f, delta), 0.0)))


def _gaussian_kl(mean_a, cov_a, mean_f, cov_f) -> float:
    """KL(N(m_a, V_a) || N(m_f, V_f))"""
    dim = mean_a.size
    delta = mean_f - mean_a
    _, logdet_a = np.linalg.slogdet(cov_a)
    _, logdet_f = np.linalg.slogdet(cov_f)
    value = 0.5 * (
        np.trace(np.linalg.solve(cov_f, cov_a)) + delta @ np.linalg.solve(cov_f, delta) - dim - (logdet_a - logdet_f)
    )
    return float(max(value, 0.0))


def kl_gaussian(ref_sample, approx_sample, direction: str = "forward") -> float:
    """
    KL divergence between moment-matched Gaussians

    forward is KL(approx || ref); reverse swaps the arguments.
    """
    ref = _as_sample(ref_sample, "reference")
    approx = _as_sample(approx_sample, "approximate")
    mean_f, cov_f, _ = _moments(ref)
    mean_a, cov_a, _ = _moments(approx)
    if direction == "forward":
        return _gaussian_kl(mean_a, cov_a, mean_f, cov_f)
    if direction == "reverse":
        return _gaussian_kl(mean_f, cov_f, mean_a, cov_a)
    raise MetricError(f"Unknown KL direction '{direction}'")


def _knn_estimate(sample_p: np.ndarray, sample_q: np.ndarray) -> float:
    """1-NN estimate of KL(p || q); may be slightly negative"""
    n, dim = sample_p.shape
    m = sample_q.shape[0]
    within, _ = cKDTree(sample_p).query(sample_p, k=2)
    rho = within[:, 1]
    nu, _ = cKDTree(sample_q).query(sample_p, k=1)
    if np.any(rho <= 0) or np.any(nu <= 0):
        raise MetricError("Zero nearest-neighbour distance; samples share points")
    return float(dim / n * np.sum(np.log(nu / rho)) + np.log(m / (n - 1)))


def kl_knn(ref_sample, approx_sample, direction: str = "forward") -> float:
    """
    Nearest-neighbour KL estimate, forward = KL(approx || ref)

    Duplicate rows are removed from each sample first.
    """
    ref = np.unique(_as_sample(ref_sample, "reference"), axis=0)
    approx = np.unique(_as_sample(approx_sample, "approximate"), axis=0)
    if min(ref.shape[0], approx.shape[0]) < 50:
        raise MetricError("kl_knn needs at least 50 distinct points in each sample")
    if direction == "forward":
        return _knn_estimate(approx, ref)
    if direction == "reverse":
        return _knn_estimate(ref, approx)
    raise MetricError(f"Unknown KL direction '{direction}'")


def concentration_ratio(ref_sample, approx_sample, theta_star, seed: int = 0) -> float:
    """
    sqrt(sum ||theta_a - theta*||^2 / sum ||theta_f - theta*||^2)

    The larger sample is subsampled without replacement to the smaller size.
    """
    ref = _as_sample(ref_sample, "reference")
    approx = _as_sample(approx_sample, "approximate")
    theta_star = np.asarray(theta_star, dtype=float).ravel()
    size = min(ref.shape[0], approx.shape[0])
    rng = np.random.default_rng(seed)
    if ref.shape[0] > size:
        ref = ref[np.sort(rng.choice(ref.shape[0], size, replace=False))]
    if approx.shape[0] > size:
        approx = approx[np.sort(rng.choice(approx.shape[0], size, replace=False))]
    denominator = np.sum((ref - theta_star) ** 2)
    if denominator <= 0:
        raise MetricError("Reference sample collapses onto theta*")
    return float(np.sqrt(np.sum((approx - theta_star) ** 2) / denominator))


def skew_deviation(ref_sample, approx_sample) -> float:
    """Mean absolute difference of per-component third standardised moments"""
    ref = _as_sample(ref_sample, "reference")
    approx = _as_sample(approx_sample, "approximate")
    if np.any(ref.var(axis=0) <= 0) or np.any(approx.var(axis=0) <= 0):
        raise MetricError("Skewness undefined for a component with zero variance")
    gamma_f = stats.skew(ref, axis=0, bias=True)
    gamma_a = stats.skew(approx, axis=0, bias=True)
    return float(np.mean(np.abs(gamma_a - gamma_f)))


@dataclass
class DiscrepancyReport:
    algorithm: str
    repetition: int
    mahalanobis: float
    kl_gaussian_fwd: float
    kl_gaussian_rev: float
    skew_eta: float
    kl_knn_fwd: float | None = None
    kl_knn_rev: float | None = None
    concentration_rho: float | None = None
    wall_time_seconds: float = field(default=float("nan"), compare=False)
    ridge_applied: bool = False

    def to_dict(self, include_time: bool = False) -> dict:
        """JSON-ready record; wall time only when asked for, non-finite metrics as None"""
        blob = asdict(self)
        if not include_time:
            blob.pop("wall_time_seconds")
        return {key: finite_or_none(value) for key, value in blob.items()}


def compare_samples(
    ref_sample,
    approx_sample,
    algorithm: str,
    repetition: int = 0,
    theta_star=None,
    knn: bool = True,
    seed: int = 0,
    wall_time_seconds: float = float("nan"),
) -> DiscrepancyReport:
    """
    Every metric for one (algorithm, repetition)

    kNN KL is skipped (None) when the samples are too small; rho is None
    without theta_star.
    """
    ref = _as_sample(ref_sample, "reference")
    approx = _as_sample(approx_sample, "approximate")
    ridge = _moments(ref)[2] or _moments(approx)[2]
    knn_fwd = knn_rev = None
    if knn:
        try:
            knn_fwd = kl_knn(ref, approx, "forward")
            knn_rev = kl_knn(ref, approx, "reverse")
        except MetricError as exc:
            logger.warning(f"{algorithm}: nearest-neighbour KL skipped ({exc})")
    return DiscrepancyReport(
        algorithm=algorithm,
        repetition=repetition,
        mahalanobis=mahalanobis(ref, approx),
        kl_gaussian_fwd=kl_gaussian(ref, approx, "forward"),
        kl_gaussian_rev=kl_gaussian(ref, approx, "reverse"),
        skew_eta=skew_deviation(ref, approx),
        kl_knn_fwd=knn_fwd,
        kl_knn_rev=knn_rev,
        concentration_rho=None if theta_star is None else concentration_ratio(ref, approx, theta_star, seed),
        wall_time_seconds=wall_time_seconds,
        ridge_applied=bool(ridge),
    )
