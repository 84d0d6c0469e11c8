import numpy as np
import pytest
from scipy import stats

from common.errors import ConfigurationError, DomainError, PostprocessError
from hmcsampler.dualaveraging import DualAveragingStepSize, find_reasonable_step_size
from hmcsampler.hmcsampler import ChainRecord, HmcConfig, leapfrog, postprocess, run_hmc


class GaussianTarget:
    def __init__(self, mean, variances):
        self.mean = np.asarray(mean, dtype=float)
        self.variances = np.asarray(variances, dtype=float)

    def log_density(self, theta):
        return float(-0.5 * np.sum((theta - self.mean) ** 2 / self.variances))

    def grad_log_density(self, theta):
        return -(theta - self.mean) / self.variances


class NowhereTarget:
    def log_density(self, theta):
        return -np.inf

    def grad_log_density(self, theta):
        return np.zeros_like(theta)


def test_leapfrog_is_reversible():
    target = GaussianTarget([0.0, 0.0], [1.0, 4.0])
    theta0, momentum0 = np.array([0.3, -1.2]), np.array([0.5, 0.7])
    theta1, momentum1 = leapfrog(target.grad_log_density, theta0, momentum0, 0.1, 25)
    theta2, momentum2 = leapfrog(target.grad_log_density, theta1, -momentum1, 0.1, 25)
    np.testing.assert_allclose(theta2, theta0, atol=1e-10)
    np.testing.assert_allclose(-momentum2, momentum0, atol=1e-10)


def test_leapfrog_nearly_conserves_energy():
    target = GaussianTarget([1.0], [1.0])
    theta0, momentum0 = np.array([0.0]), np.array([1.0])
    theta1, momentum1 = leapfrog(target.grad_log_density, theta0, momentum0, 0.01, 100)
    energy0 = -target.log_density(theta0) + 0.5 * momentum0 @ momentum0
    energy1 = -target.log_density(theta1) + 0.5 * momentum1 @ momentum1
    assert abs(energy1 - energy0) < 1e-4


def test_leapfrog_flags_non_finite_gradient():
    theta, momentum = leapfrog(lambda t: np.array([np.nan]), np.array([0.0]), np.array([1.0]), 0.1, 3)
    assert np.all(np.isnan(theta)) and np.all(np.isnan(momentum))


def test_hmc_recovers_gaussian_moments():
    target = GaussianTarget([1.0, -2.0], [0.25, 4.0])
    config = HmcConfig(n_iter=4000, leapfrog_steps=10, adapt_iters=500, seed=1)
    chain = run_hmc(target, config, np.zeros(2))
    draws = chain.sampled_draws()
    assert draws.shape == (4000, 2)
    np.testing.assert_allclose(draws.mean(axis=0), [1.0, -2.0], atol=0.1)
    np.testing.assert_allclose(draws.var(axis=0), [0.25, 4.0], rtol=0.15)
    assert 0.3 < chain.acceptance_rate <= 1.0


def test_tiny_single_step_accepts_everything():
    target = GaussianTarget([0.0], [1.0])
    config = HmcConfig(n_iter=200, leapfrog_steps=1, step_size=1e-4, adapt_iters=0, search_step_size=False, step_jitter=0.0)
    chain = run_hmc(target, config, np.array([0.5]))
    assert chain.acceptance_rate > 0.99


def test_hmc_is_deterministic_given_seed():
    target = GaussianTarget([0.0], [1.0])
    config = HmcConfig(n_iter=300, leapfrog_steps=5, adapt_iters=100, seed=42)
    first = run_hmc(target, config, np.array([0.1]))
    second = run_hmc(target, config, np.array([0.1]))
    np.testing.assert_array_equal(first.draws, second.draws)
    assert first.tuned_step_size == second.tuned_step_size


def test_hmc_rejects_start_outside_support():
    with pytest.raises(DomainError):
        run_hmc(NowhereTarget(), HmcConfig(n_iter=10, adapt_iters=0), np.zeros(1))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        HmcConfig(leapfrog_steps=0)
    with pytest.raises(ConfigurationError):
        HmcConfig(step_size=0.0)
    with pytest.raises(ConfigurationError):
        HmcConfig(mass_matrix=np.array([[1.0, 2.0], [2.0, 1.0]]))


def _toy_chain():
    draws = np.array([[5.0], [0.0], [0.0], [1.0], [1.0], [2.0]])
    return ChainRecord(draws=draws, log_densities=-draws.ravel(), accept_flags=np.ones(6, bool), tuned_step_size=0.1, n_warmup=1)


def test_postprocess_drops_warmup_and_duplicates():
    processed = postprocess(_toy_chain(), thin=1)
    np.testing.assert_array_equal(processed.draws.ravel(), [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(processed.iterations, [1, 3, 5])
    np.testing.assert_array_equal(processed.log_densities, [-0.0, -1.0, -2.0])
    assert processed.n_warmup == 0


def test_postprocess_thins():
    processed = postprocess(_toy_chain(), thin=2)
    np.testing.assert_array_equal(processed.draws.ravel(), [0.0, 1.0])
    np.testing.assert_array_equal(processed.iterations, [2, 4])


def test_postprocess_errors():
    with pytest.raises(ConfigurationError):
        postprocess(_toy_chain(), thin=0)
    with pytest.raises(PostprocessError):
        postprocess(_toy_chain(), thin=10)


def test_chain_csv_round_trip(tmp_path):
    chain = _toy_chain()
    path = chain.to_csv(tmp_path / "chain.csv", {"config_hash": "abc", "seed": 3})
    assert path.read_text().startswith("# config_hash=abc seed=3")
    loaded = ChainRecord.from_csv(path)
    np.testing.assert_array_equal(loaded.draws, chain.draws)
    np.testing.assert_array_equal(loaded.log_densities, chain.log_densities)
    np.testing.assert_array_equal(loaded.accept_flags, chain.accept_flags)


def test_dual_averaging_moves_step_towards_target():
    shrinking = DualAveragingStepSize(1.0, target_accept=0.65)
    for _ in range(50):
        step = shrinking.update(0.0)
    assert step < 1.0
    growing = DualAveragingStepSize(1.0, target_accept=0.65)
    for _ in range(50):
        step = growing.update(1.0)
    assert step > 1.0


def test_reasonable_step_size_crosses_half():
    # acceptance ratio exp(-step): crossing at step = log 2
    step = find_reasonable_step_size(lambda s: -s, 0.01)
    assert 0.3 < step < 1.4


def test_acceptance_rate_after_dual_averaging():
    target = GaussianTarget(np.zeros(5), np.ones(5))
    config = HmcConfig(n_iter=2000, leapfrog_steps=20, adapt_iters=1000, seed=7)
    chain = run_hmc(target, config, np.full(5, 0.5))
    assert 0.55 <= chain.acceptance_rate <= 0.95


@pytest.mark.slow
def test_draws_match_standard_normal_cdf():
    target = GaussianTarget([0.0], [1.0])
    config = HmcConfig(n_iter=50_000, leapfrog_steps=10, adapt_iters=1000, seed=11)
    draws = run_hmc(target, config, np.array([0.0])).sampled_draws()[:, 0]
    assert stats.kstest(draws, "norm").statistic < 0.02


def test_cached_log_densities_match_fresh_evaluation():
    target = GaussianTarget([1.0, -1.0], [0.5, 2.0])
    chain = run_hmc(target, HmcConfig(n_iter=300, leapfrog_steps=5, adapt_iters=100, seed=2), np.zeros(2))
    fresh = np.array([target.log_density(theta) for theta in chain.draws])
    np.testing.assert_array_equal(chain.log_densities, fresh)


class PlateauTarget:
    """N(0, 1) with a +1e4 step for theta > 0.5 that the gradient does not see"""

    def log_density(self, theta):
        return float(-0.5 * theta @ theta + (1e4 if theta[0] > 0.5 else 0.0))

    def grad_log_density(self, theta):
        return -theta


def test_large_energy_drop_is_divergent():
    config = HmcConfig(n_iter=200, leapfrog_steps=3, step_size=0.5, adapt_iters=0, search_step_size=False, step_jitter=0.0)
    chain = run_hmc(PlateauTarget(), config, np.array([0.0]))
    assert chain.divergent.any()
    assert np.all(chain.draws[:, 0] <= 0.5)
    assert not chain.accept_flags[chain.divergent].any()
