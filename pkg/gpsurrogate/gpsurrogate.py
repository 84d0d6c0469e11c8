"""
Gaussian-process surrogate for one log-subposterior

Prior: quadratic mean beta0 + x'beta1 + beta2 x'V^-1 x (beta2 < 0) and a
squared-exponential kernel. beta0 and beta1 are integrated out under a
flat prior; amplitude, lengthscales and beta2 maximise the resulting
restricted marginal likelihood. Observations are noiseless, so the
kernel matrix only carries a small jitter.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, qr, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from common.errors import ConfigurationError, DecompositionError, FitError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
START_JITTER = 1e-8
MAX_JITTER = 1e-4


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Squared-exponential kernel: amplitude omega, per-dimension lengthscales, absolute jitter"""

    amplitude: float
    lengthscales: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", lengthscales)
        if not self.amplitude > 0 or not np.all(lengthscales > 0) or self.jitter < 0:
            raise ConfigurationError(
                f"Kernel parameters must be positive (amplitude={self.amplitude}, lengthscales={lengthscales})"
            )


@dataclass(frozen=True, eq=False)
class MeanParams:
    """Quadratic mean beta0 + x'beta1 + beta2 x'V^-1 x with beta2 < 0"""

    beta0: float
    beta1: np.ndarray
    beta2: float
    scale_matrix: np.ndarray
    scale_inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        beta1 = np.atleast_1d(np.asarray(self.beta1, dtype=float))
        scale = np.atleast_2d(np.asarray(self.scale_matrix, dtype=float))
        if not self.beta2 < 0:
            raise ConfigurationError(f"beta2 must be negative, got {self.beta2}")
        if scale.shape != (beta1.size, beta1.size) or not np.allclose(scale, scale.T):
            raise ConfigurationError("scale_matrix must be a symmetric d x d matrix")
        try:
            chol = cholesky(scale, lower=True)
        except np.linalg.LinAlgError:
            raise ConfigurationError("scale_matrix must be positive definite") from None
        object.__setattr__(self, "beta1", beta1)
        object.__setattr__(self, "scale_matrix", scale)
        object.__setattr__(self, "scale_inverse", cho_solve((chol, True), np.eye(beta1.size)))

    def quadratic_form(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.einsum("ij,jk,ik->i", points, self.scale_inverse, points)


def kernel_matrix(params: KernelParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """K(x_i, y_j) for every row pair"""
    scaled = cdist(np.atleast_2d(x) / params.lengthscales, np.atleast_2d(y) / params.lengthscales, "sqeuclidean")
    return params.amplitude**2 * np.exp(-0.5 * scaled)


def kernel_eval(params: KernelParams, x, y) -> float:
    """omega^2 exp(-1/2 (x-y)' Lambda^-1 (x-y))"""
    return float(kernel_matrix(params, np.atleast_1d(x)[None, :], np.atleast_1d(y)[None, :])[0, 0])


def kernel_gradient(params: KernelParams, x, points: np.ndarray) -> np.ndarray:
    """
    Derivative of K(x, points_j) with respect to x

    Returns:
        (J, d) array; row j is -Lambda^-1 (x - points_j) K(x, points_j)
    """
    diff = np.asarray(x, dtype=float) - np.atleast_2d(points)
    k = params.amplitude**2 * np.exp(-0.5 * np.sum((diff / params.lengthscales) ** 2, axis=1))
    return -(diff / params.lengthscales**2) * k[:, None]


def mean_eval(params: MeanParams, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(params.beta0 + x @ params.beta1 + params.beta2 * (x @ params.scale_inverse @ x))


def mean_vector(params: MeanParams, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    return params.beta0 + points @ params.beta1 + params.beta2 * params.quadratic_form(points)


def mean_gradient(params: MeanParams, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return params.beta1 + 2.0 * params.beta2 * (params.scale_inverse @ x)


def _factor(base: np.ndarray, scale: float, start: float = START_JITTER) -> tuple[np.ndarray, float]:
    """Cholesky of base + jitter*I, jitter = start*scale escalated x10 up to MAX_JITTER*scale"""
    identity = np.eye(base.shape[0])
    relative = start
    while relative <= MAX_JITTER * (1.0 + 1e-9):
        try:
            return cholesky(base + relative * scale * identity, lower=True), relative * scale
        except np.linalg.LinAlgError:
            relative *= 10.0
    raise DecompositionError(f"Kernel matrix not factorisable with jitter up to {MAX_JITTER:g} x amplitude^2")


@dataclass(frozen=True, eq=False)
class GpSurrogate:
    """Fitted GP for one log-subposterior, with cached factorisations"""

    training_inputs: np.ndarray
    training_targets: np.ndarray
    kernel: KernelParams
    mean: MeanParams
    chol_factor: np.ndarray = field(repr=False)
    weight_vector: np.ndarray = field(repr=False)
    log_marginal_likelihood: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        n_train, dim = self.training_inputs.shape
        if n_train < dim + 2:
            raise ConfigurationError(f"A GP surrogate needs at least d+2={dim + 2} training points, got {n_train}")

    @property
    def dim(self) -> int:
        return self.training_inputs.shape[1]

    @property
    def n_train(self) -> int:
        return self.training_inputs.shape[0]

    def predict(self, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predictive means and marginal variances at the rows of query"""
        query = np.atleast_2d(query)
        cross = kernel_matrix(self.kernel, self.training_inputs, query)
        mu = mean_vector(self.mean, query) + cross.T @ self.weight_vector
        whitened = solve_triangular(self.chol_factor, cross, lower=True)
        var = self.kernel.amplitude**2 - np.sum(whitened**2, axis=0)
        return mu, var

    def expected_terms(self, x) -> tuple[float, float, np.ndarray, np.ndarray]:
        """
        Predictive mean and variance at one point with their gradients

        Returns:
            (mu, var, dmu/dx, dvar/dx)
        """
        x = np.asarray(x, dtype=float)
        diff = x - self.training_inputs
        k = self.kernel.amplitude**2 * np.exp(-0.5 * np.sum((diff / self.kernel.lengthscales) ** 2, axis=1))
        whitened = solve_triangular(self.chol_factor, k, lower=True)
        solved = solve_triangular(self.chol_factor.T, whitened, lower=False)
        mu = mean_eval(self.mean, x) + k @ self.weight_vector
        var = self.kernel.amplitude**2 - whitened @ whitened
        dk = -(diff / self.kernel.lengthscales**2) * k[:, None]
        dmu = mean_gradient(self.mean, x) + dk.T @ self.weight_vector
        dvar = -2.0 * dk.T @ solved
        return float(mu), float(var), dmu, dvar

    def to_dict(self) -> dict:
        return {
            "kernel": {
                "amplitude": self.kernel.amplitude,
                "lengthscales": self.kernel.lengthscales.tolist(),
                "jitter": self.kernel.jitter,
            },
            "mean": {
                "beta0": self.mean.beta0,
                "beta1": self.mean.beta1.tolist(),
                "beta2": self.mean.beta2,
                "scale_matrix": self.mean.scale_matrix.tolist(),
            },
            "training_inputs": self.training_inputs.tolist(),
            "training_targets": self.training_targets.tolist(),
            "log_marginal_likelihood": self.log_marginal_likelihood,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "GpSurrogate":
        kernel = KernelParams(**blob["kernel"])
        mean = MeanParams(**blob["mean"])
        return assemble_surrogate(
            np.asarray(blob["training_inputs"], dtype=float),
            np.asarray(blob["training_targets"], dtype=float),
            kernel,
            mean,
            blob.get("log_marginal_likelihood", float("nan")),
            blob.get("diagnostics", {}),
        )

    def save_json(self, path: Path | str, provenance: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = self.to_dict()
        if provenance:
            blob["provenance"] = provenance
        with open(path, "w", encoding="utf-8") as f:
            json.dump(blob, f, indent=2)
        return path

    @classmethod
    def load_json(cls, path: Path | str) -> "GpSurrogate":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def assemble_surrogate(inputs, targets, kernel: KernelParams, mean: MeanParams, log_ml: float = float("nan"), diagnostics: dict | None = None) -> GpSurrogate:
    """Factor K~ = K + jitter I with the given hyperparameters and cache K~^-1 (l - m)"""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float).ravel()
    base = kernel_matrix(kernel, inputs, inputs)
    amp2 = kernel.amplitude**2
    try:
        chol = cholesky(base + kernel.jitter * np.eye(inputs.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        chol, jitter = _factor(base, amp2, start=max(10.0 * kernel.jitter / amp2, START_JITTER))
        kernel = KernelParams(kernel.amplitude, kernel.lengthscales, jitter)
    weights = cho_solve((chol, True), targets - mean_vector(mean, inputs))
    return GpSurrogate(
        training_inputs=inputs,
        training_targets=targets,
        kernel=kernel,
        mean=mean,
        chol_factor=chol,
        weight_vector=weights,
        log_marginal_likelihood=log_ml,
        diagnostics=dict(diagnostics or {}),
    )


def empirical_scale_matrix(inputs: np.ndarray) -> np.ndarray:
    """Empirical covariance of the draws, ridged when singular"""
    inputs = np.atleast_2d(inputs)
    scale = np.atleast_2d(np.cov(inputs, rowvar=False))
    dim = scale.shape[0]
    try:
        cholesky(scale, lower=True)
        return scale
    except np.linalg.LinAlgError:
        ridge = 1e-8 * max(np.trace(scale) / dim, 1e-12)
        logger.warning(f"Empirical covariance is singular; adding ridge {ridge:.3g}")
        return scale + ridge * np.eye(dim)


class _RestrictedLikelihood:
    """
    Log marginal likelihood with beta0, beta1 integrated out (flat prior)

    Parameters are packed as [log omega, log lengthscales..., log(-beta2)].
    """

    def __init__(self, inputs: np.ndarray, targets: np.ndarray, scale_matrix: np.ndarray):
        self.inputs = inputs
        self.targets = targets
        self.n, self.dim = inputs.shape
        self.basis = np.column_stack([np.ones(self.n), inputs])
        inverse = np.linalg.inv(scale_matrix)
        self.quadratic = np.einsum("ij,jk,ik->i", inputs, inverse, inputs)
        self.sq_diffs = (inputs.T[:, :, None] - inputs.T[:, None, :]) ** 2

    def unpack(self, packed):
        return np.exp(packed[0]), np.exp(packed[1 : 1 + self.dim]), -np.exp(packed[-1])

    def evaluate(self, packed, with_gradient: bool = True):
        amplitude, lengthscales, beta2 = self.unpack(packed)
        amp2 = amplitude**2
        scaled = np.tensordot(1.0 / lengthscales**2, self.sq_diffs, axes=1)
        shape = np.exp(-0.5 * scaled)
        chol, jitter = _factor(amp2 * shape, amp2)
        adjusted = self.targets - beta2 * self.quadratic
        basis_w = solve_triangular(chol, self.basis, lower=True)
        targets_w = solve_triangular(chol, adjusted, lower=True)
        q_mat, r_mat = qr(basis_w, mode="economic")
        coef = solve_triangular(r_mat, q_mat.T @ targets_w)
        resid_w = targets_w - basis_w @ coef
        n_basis = self.basis.shape[1]
        value = (
            -0.5 * resid_w @ resid_w
            - np.sum(np.log(np.diag(chol)))
            - np.sum(np.log(np.abs(np.diag(r_mat))))
            - 0.5 * (self.n - n_basis) * LOG_2PI
        )
        if not with_gradient:
            return value, None, coef, jitter
        alpha = solve_triangular(chol.T, resid_w, lower=False)
        chol_inv = solve_triangular(chol, np.eye(self.n), lower=True)
        projected = solve_triangular(chol.T, q_mat, lower=False)
        projection = chol_inv.T @ chol_inv - projected @ projected.T
        outer = np.outer(alpha, alpha) - projection
        kernel_full = amp2 * shape + jitter * np.eye(self.n)
        grad = np.empty(packed.size)
        grad[0] = np.sum(outer * kernel_full)
        for k in range(self.dim):
            grad[1 + k] = 0.5 * np.sum(outer * (amp2 * shape * self.sq_diffs[k] / lengthscales[k] ** 2))
        grad[-1] = beta2 * (self.quadratic @ alpha)
        return value, grad, coef, jitter

    def negative(self, packed):
        try:
            value, grad, _, _ = self.evaluate(packed)
        except (DecompositionError, np.linalg.LinAlgError, FloatingPointError):
            return 1e25, np.zeros_like(packed)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return 1e25, np.zeros_like(packed)
        return -value, -grad


def log_marginal_likelihood(inputs, targets, scale_matrix, amplitude: float, lengthscales, beta2: float) -> float:
    """Restricted log marginal likelihood at given hyperparameters"""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    objective = _RestrictedLikelihood(inputs, np.asarray(targets, dtype=float).ravel(), np.atleast_2d(scale_matrix))
    packed = np.concatenate([[np.log(amplitude)], np.log(np.atleast_1d(lengthscales)), [np.log(-beta2)]])
    value, _, _, _ = objective.evaluate(packed, with_gradient=False)
    return float(value)


def fit_surrogate(inputs, targets, seed: int = 0, n_restarts: int = 5) -> GpSurrogate:
    """
    Fit a GP surrogate to (theta_j, l(theta_j)) pairs

    Multi-start L-BFGS-B on log-parameters. beta0 and beta1 are
    recovered afterwards as the generalised-least-squares estimates.

    Raises:
        ConfigurationError: fewer than d+2 points or duplicated inputs
        FitError: no restart produced a finite likelihood
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float).ravel()
    n, dim = inputs.shape
    if n < dim + 2:
        raise ConfigurationError(f"Need at least d+2={dim + 2} distinct draws to fit a GP, got {n}")
    if np.unique(inputs, axis=0).shape[0] != n:
        raise ConfigurationError("Training inputs contain duplicates; postprocess the chain first")

    scale_matrix = empirical_scale_matrix(inputs)
    objective = _RestrictedLikelihood(inputs, targets, scale_matrix)
    input_sd = np.maximum(inputs.std(axis=0, ddof=1), 1e-8)
    target_sd = max(float(targets.std(ddof=1)), 1e-3)

    start = np.concatenate([[np.log(target_sd)], np.log(input_sd), [np.log(0.5)]])
    bounds = (
        [(np.log(1e-6 * target_sd), np.log(1e3 * target_sd))]
        + [(np.log(1e-3 * s), np.log(1e3 * s)) for s in input_sd]
        + [(np.log(1e-6), np.log(1e6))]
    )
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])

    rng = np.random.default_rng(seed)
    best = None
    attempts = []
    for restart in range(n_restarts):
        x0 = start if restart == 0 else np.clip(start + rng.normal(0.0, 1.0, start.size), lower, upper)
        result = minimize(objective.negative, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        attempts.append({"restart": restart, "value": float(-result.fun), "message": str(result.message)})
        if result.fun < 1e25 and np.isfinite(result.fun) and (best is None or result.fun < best.fun):
            best = result
    if best is None:
        raise FitError(f"All {n_restarts} hyperparameter restarts failed", {"attempts": attempts})

    value, _, coef, jitter = objective.evaluate(best.x, with_gradient=False)
    amplitude, lengthscales, beta2 = objective.unpack(best.x)
    kernel = KernelParams(float(amplitude), lengthscales, float(jitter))
    mean = MeanParams(float(coef[0]), coef[1:], float(beta2), scale_matrix)
    diagnostics = {
        "restarts": attempts,
        "relative_jitter": float(jitter / amplitude**2),
        "n_train": n,
    }
    if jitter > START_JITTER * amplitude**2 * (1.0 + 1e-9):
        logger.warning(f"Kernel jitter escalated to {jitter / amplitude**2:.0e} x amplitude^2")
    surrogate = assemble_surrogate(inputs, targets, kernel, mean, float(value), diagnostics)
    logger.info(
        f"GP fitted on J={n}: amplitude={amplitude:.3g}, lengthscales={np.round(lengthscales, 4).tolist()}, "
        f"beta2={beta2:.3g}, log ML={value:.2f}"
    )
    return surrogate


def fit_hyperparams(chain, seed: int = 0, n_restarts: int = 5) -> GpSurrogate:
    """Fit a surrogate to a post-processed ChainRecord (draws paired with log-densities)"""
    return fit_surrogate(chain.draws, chain.log_densities, seed=seed, n_restarts=n_restarts)


def gp_posterior(surrogate: GpSurrogate, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Joint predictive distribution at N query points

    Returns:
        (mu, Sigma) with mu = m(Q) + K*' K~^-1 (l - m(X)) and
        Sigma = K** - K*' K~^-1 K* (symmetrised)
    """
    query = np.atleast_2d(np.asarray(query, dtype=float))
    cross = kernel_matrix(surrogate.kernel, surrogate.training_inputs, query)
    mu = mean_vector(surrogate.mean, query) + cross.T @ surrogate.weight_vector
    whitened = solve_triangular(surrogate.chol_factor, cross, lower=True)
    sigma = kernel_matrix(surrogate.kernel, query, query) - whitened.T @ whitened
    return mu, 0.5 * (sigma + sigma.T)
