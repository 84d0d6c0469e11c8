"""
Step-size tuning for fixed-length HMC trajectories
"""

import numpy as np

LOG_HALF = np.log(0.5)


class DualAveragingStepSize:
    """
    Nesterov dual averaging of log step size towards a target acceptance rate

    `update` returns the step size for the next warm-up iteration;
    `final_step_size` is the averaged value used after warm-up.
    """

    def __init__(self, initial_step_size: float, target_accept: float = 0.65, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        # biased towards larger steps so early iterations explore
        self.mu = np.log(10.0 * initial_step_size)
        self.target_accept = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.count = 0
        self.error_mean = 0.0
        self.log_step_bar = 0.0

    def update(self, accept_prob: float) -> float:
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.error_mean = (1.0 - eta) * self.error_mean + eta * (self.target_accept - accept_prob)
        log_step = self.mu - np.sqrt(self.count) / self.gamma * self.error_mean
        weight = self.count ** (-self.kappa)
        self.log_step_bar = weight * log_step + (1.0 - weight) * self.log_step_bar
        return float(np.exp(log_step))

    @property
    def final_step_size(self) -> float:
        return float(np.exp(self.log_step_bar))


def find_reasonable_step_size(log_accept_ratio, step_size: float = 0.1, max_doublings: int = 50) -> float:
    """
    Double or halve the step until the one-step acceptance ratio crosses 1/2

    Args:
        log_accept_ratio: callable step -> log acceptance ratio of a single leapfrog step
        step_size: starting step
        max_doublings: cap on the number of doublings/halvings

    Returns:
        Step size at the crossing
    """
    ratio = log_accept_ratio(step_size)
    direction = 1.0 if np.isfinite(ratio) and ratio > LOG_HALF else -1.0
    for _ in range(max_doublings):
        candidate = step_size * 2.0**direction
        ratio = log_accept_ratio(candidate)
        ratio = ratio if np.isfinite(ratio) else -np.inf
        if (direction > 0 and ratio <= LOG_HALF) or (direction < 0 and ratio > LOG_HALF):
            return candidate if direction < 0 else step_size
        step_size = candidate
    return step_size
