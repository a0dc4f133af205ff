"""Hat-function basis for continuous trajectories and the Crank-Nicolson moves.

Each sampling interval of length ``dt`` is split into ``n_step`` pieces of
width ``dt / n_step``. Trajectories are stored as nodal coefficients on the
resulting fine grid of ``N * n_step + 1`` nodes; coarse node ``j`` sits at
fine index ``j * n_step``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import ContractError


@dataclass(frozen=True)
class MeshSpec:
    N: int
    dt: float
    n_step: int

    def __post_init__(self):
        if self.N < 1:
            raise ContractError("need at least one sampling interval")
        if self.n_step < 2:
            raise ContractError("n_step must be >= 2")
        if not self.dt > 0:
            raise ContractError("sampling period must be positive")

    @property
    def fine_dt(self) -> float:
        return self.dt / self.n_step

    @property
    def horizon(self) -> float:
        return self.N * self.dt

    @property
    def n_nodes(self) -> int:
        return self.N * self.n_step + 1

    @property
    def coarse_index(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.n_step

    @property
    def fine_times(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.fine_dt

    @property
    def coarse_times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt


def mass_matrix(n_nodes: int, h: float) -> np.ndarray:
    """K[i, k] = integral of phi_i * phi_k."""
    K = np.zeros((n_nodes, n_nodes))
    i = np.arange(n_nodes)
    K[i, i] = 4.0
    K[0, 0] = K[-1, -1] = 2.0
    K[i[:-1], i[:-1] + 1] = 1.0
    K[i[:-1] + 1, i[:-1]] = 1.0
    return K * h / 6.0


def derivative_matrix(n_nodes: int) -> np.ndarray:
    """L[i, k] = integral of phi_i' * phi_k."""
    L = np.zeros((n_nodes, n_nodes))
    i = np.arange(n_nodes - 1)
    L[i, i + 1] = -0.5
    L[i + 1, i] = 0.5
    L[0, 0] = -0.5
    L[-1, -1] = 0.5
    return L


def embedding_matrix(N: int, n_step: int) -> np.ndarray:
    """Map coarse samples (N+1) to the nodal coefficients of their interpolant."""
    P = np.zeros((N + 1, N * n_step + 1))
    w = np.arange(n_step + 1) / n_step
    for j in range(N):
        cols = slice(j * n_step, (j + 1) * n_step + 1)
        P[j, cols] = np.maximum(P[j, cols], 1.0 - w)
        P[j + 1, cols] = np.maximum(P[j + 1, cols], w)
    return P


def kl_bridge_matrix(n_step: int, span: float) -> np.ndarray:
    """Sine-mode factor with continuous Karhunen-Loeve weights sqrt(2 T)/(pi j)."""
    k = np.arange(1, n_step)[:, None]
    j = np.arange(1, n_step)[None, :]
    return np.sqrt(2.0 * span) / (np.pi * j) * np.sin(k * np.pi * j / n_step)


def exact_bridge_matrix(n_step: int, span: float) -> np.ndarray:
    """Sine-mode factor whose Gram matrix is exactly the bridge covariance on the grid.

    The discrete sine transform diagonalizes the pinned random-walk covariance;
    its eigenvalues replace the continuous weights ``2 T / (pi j)^2``.
    """
    k = np.arange(1, n_step)[:, None]
    j = np.arange(1, n_step)[None, :]
    weight = np.sqrt(2.0 * span) / (2.0 * n_step * np.sin(np.pi * j / (2.0 * n_step)))
    return weight * np.sin(k * np.pi * j / n_step)


@dataclass(frozen=True)
class BasisMatrices:
    mesh: MeshSpec

    @cached_property
    def K(self) -> np.ndarray:
        return mass_matrix(self.mesh.n_nodes, self.mesh.fine_dt)

    @cached_property
    def L(self) -> np.ndarray:
        return derivative_matrix(self.mesh.n_nodes)

    @cached_property
    def P_emb(self) -> np.ndarray:
        return embedding_matrix(self.mesh.N, self.mesh.n_step)

    @cached_property
    def P_b(self) -> np.ndarray:
        return kl_bridge_matrix(self.mesh.n_step, self.mesh.dt)

    @cached_property
    def bridge_factor(self) -> np.ndarray:
        return exact_bridge_matrix(self.mesh.n_step, self.mesh.dt)


def build_basis(mesh: MeshSpec) -> BasisMatrices:
    return BasisMatrices(mesh)


def sample_bridge(mesh: MeshSpec, q, rng, factor=None) -> np.ndarray:
    """Independent Brownian bridges (variance rate ``q_i``) pinned at every coarse node."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(q <= 0):
        raise ContractError("bridge variances must be positive")
    n = q.shape[0]
    if factor is None:
        factor = exact_bridge_matrix(mesh.n_step, mesh.dt)
    m = mesh.n_step - 1
    G = rng.standard_normal((n, mesh.N, m))
    inner = G @ factor.T  # (n, N, n_step - 1)
    B = np.zeros((n, mesh.N, mesh.n_step))
    B[:, :, 1:] = inner
    out = np.zeros((n, mesh.n_nodes))
    out[:, :-1] = B.reshape(n, -1)
    return out * np.sqrt(q)[:, None]


def bridge_covariance(mesh: MeshSpec, q: float = 1.0) -> np.ndarray:
    """Analytic fine-grid covariance of a pinned bridge (zero across intervals)."""
    t = mesh.fine_times
    n = mesh.n_nodes
    C = np.zeros((n, n))
    for j in range(mesh.N):
        a, b = j * mesh.dt, (j + 1) * mesh.dt
        idx = np.arange(j * mesh.n_step + 1, (j + 1) * mesh.n_step)
        tt = t[idx]
        C[np.ix_(idx, idx)] = q * (b - np.maximum.outer(tt, tt)) * (np.minimum.outer(tt, tt) - a) / (b - a)
    return C


def cn_propose_anchor(Y_data, Y_curr, R_diag, eps: float, rng) -> np.ndarray:
    """Crank-Nicolson step preserving N(Y_data, R) entrywise."""
    if not 0.0 < eps <= 1.0:
        raise ContractError("eps must lie in (0, 1]")
    Y_data = np.asarray(Y_data, dtype=float)
    G = rng.standard_normal(Y_data.shape)
    sd = np.sqrt(np.asarray(R_diag, dtype=float))[:, None]
    return Y_data + np.sqrt(1.0 - eps**2) * (np.asarray(Y_curr) - Y_data) + eps * sd * G


def cn_propose_trajectory(Y_hat, Y_curr, X_curr, eps: float, P_emb, bridge, eps_anchor=None) -> np.ndarray:
    """Crank-Nicolson step on the bridge part of the trajectory.

    ``X_hat = Y_hat P_emb + sqrt(1 - eps^2) (X_curr - Y_curr P_emb) + eps B``,
    which for ``eps_anchor == eps`` (the default) is the same as
    ``(Y_hat - sqrt(1 - eps^2) Y_curr) P_emb + sqrt(1 - eps^2) X_curr + eps B``.
    """
    c = np.sqrt(1.0 - eps**2)
    return np.asarray(Y_hat) @ P_emb + c * (np.asarray(X_curr) - np.asarray(Y_curr) @ P_emb) + eps * bridge


def coarse_increment_energy(Y_anchor, dt: float) -> np.ndarray:
    """Per-row sum of squared coarse increments divided by ``dt``."""
    d = np.diff(np.asarray(Y_anchor, dtype=float), axis=1)
    return (d**2).sum(axis=1) / dt


def lemma1_log_ratio(X_curr, Y_hat, mesh: MeshSpec, q) -> float:
    """log acceptance ratio of the conditioned-Wiener trajectory move."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    X_curr = np.atleast_2d(X_curr)
    Y_hat = np.atleast_2d(Y_hat)
    cur = coarse_increment_energy(X_curr[:, mesh.coarse_index], mesh.dt)
    new = coarse_increment_energy(Y_hat, mesh.dt)
    return float(((cur - new) / (2.0 * q)).sum())
