"""Shared Monte Carlo helpers for the test suite."""
import numpy as np


def batch_means_se(x, n_batches: int = 25) -> np.ndarray:
    """Standard error of the mean from non-overlapping batch means (axis 0)."""
    x = np.asarray(x, dtype=float)
    size = x.shape[0] // n_batches
    means = x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def ou_series(a, q, r, dt, N, rng, x0=None):
    """Exactly discretized scalar OU path plus Gaussian measurement noise."""
    F = np.exp(a * dt)
    Qd = q * dt if a == 0 else q * np.expm1(2 * a * dt) / (2 * a)
    x = np.empty(N + 1)
    x[0] = rng.normal(0.0, np.sqrt(q / (-2 * a))) if x0 is None else x0
    for k in range(N):
        x[k + 1] = F * x[k] + rng.normal(0.0, np.sqrt(Qd))
    return x + rng.normal(0.0, np.sqrt(r), N + 1)
