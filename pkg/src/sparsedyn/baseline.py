"""EM-Lasso baseline: fixed-lag Kalman smoothing alternated with an L1 fit of A."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .basis import MeshSpec
from .core import ContractError, NumericalError

LAMBDA_GRID = (0.8, 1.0, 1.25, 1.5, 2.0, 3.0)


def discretize(A, q, h: float):
    """Exact zero-order discretization of ``dx = A x dt + dw`` over a step ``h``.

    Returns ``(F, Qd)`` with ``F = exp(A h)`` and the matched process
    covariance from Van Loan's block exponential.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    Q = np.diag(np.broadcast_to(np.asarray(q, dtype=float), (n,)))
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = -A
    blk[:n, n:] = Q
    blk[n:, n:] = A.T
    E = expm(blk * h)
    F = E[n:, n:].T
    Qd = F @ E[:n, n:]
    return F, 0.5 * (Qd + Qd.T)


@dataclass
class FilterResult:
    mean: np.ndarray       # filtered means, (T, n)
    cov: np.ndarray        # filtered covariances, (T, n, n)
    pred_mean: np.ndarray  # one-step predictions for k >= 1 (index k holds prediction of k)
    pred_cov: np.ndarray
    gains: dict = field(default_factory=dict)


def kalman_filter(F, Qd, obs: dict, r, m0, P0, n_nodes: int) -> FilterResult:
    """Kalman filter on a grid where ``obs`` maps node index -> observed vector."""
    n = F.shape[0]
    r = np.broadcast_to(np.asarray(r, dtype=float), (n,))
    R = np.diag(r)
    mean = np.empty((n_nodes, n))
    cov = np.empty((n_nodes, n, n))
    pm = np.empty((n_nodes, n))
    pc = np.empty((n_nodes, n, n))
    gains = {}
    m, P = np.asarray(m0, dtype=float), np.asarray(P0, dtype=float)
    for k in range(n_nodes):
        if k > 0:
            m = F @ m
            P = F @ P @ F.T + Qd
        pm[k], pc[k] = m, P
        if k in obs:
            Sk = P + R
            try:
                c = np.linalg.cholesky(Sk)
            except np.linalg.LinAlgError:
                raise NumericalError(f"innovation covariance lost positive definiteness at node {k}")
            Kt = np.linalg.solve(c.T, np.linalg.solve(c, P))  # K^T = S^-1 P
            K = Kt.T
            m = m + K @ (obs[k] - m)
            P = P - K @ P
            P = 0.5 * (P + P.T)
            gains[k] = K
        mean[k], cov[k] = m, P
    return FilterResult(mean, cov, pm, pc, gains)


def fixed_lag_smoother(F, Qd, obs: dict, r, m0, P0, n_nodes: int, lag_nodes: int) -> np.ndarray:
    """Smoothed means using observations up to ``lag_nodes`` ahead of each node.

    Uses RTS backward passes from ``min(k + lag, end)`` down to ``k``.
    """
    if lag_nodes < 1:
        raise ContractError("lag must be >= 1")
    f = kalman_filter(F, Qd, obs, r, m0, P0, n_nodes)
    n = F.shape[0]
    G = np.zeros((n_nodes, n, n))
    for k in range(n_nodes - 1):
        Pp = f.pred_cov[k + 1]
        try:
            c = np.linalg.cholesky(Pp)
        except np.linalg.LinAlgError:
            raise NumericalError(f"predicted covariance lost positive definiteness at node {k + 1}")
        # G_k = P_k F^T Pp^-1
        G[k] = np.linalg.solve(c.T, np.linalg.solve(c, F @ f.cov[k])).T
    out = np.empty((n_nodes, n))
    for k in range(n_nodes):
        end = min(k + lag_nodes, n_nodes - 1)
        ms = f.mean[end]
        for j in range(end - 1, k - 1, -1):
            ms = f.mean[j] + G[j] @ (ms - f.pred_mean[j + 1])
        out[k] = ms
    return out


def e_step(A_est, Y, mesh: MeshSpec, q, r, lag: int = 2, P0: float = 100.0) -> np.ndarray:
    """Fixed-lag smoothed fine-grid trajectory (n x nodes) of one series."""
    A_est = np.atleast_2d(np.asarray(A_est, dtype=float))
    if not np.all(np.isfinite(A_est)):
        raise NumericalError("non-finite dynamics estimate")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    F, Qd = discretize(A_est, q, mesh.fine_dt)
    obs = {int(k): Y[:, j] for j, k in enumerate(mesh.coarse_index)}
    xs = fixed_lag_smoother(F, Qd, obs, r, np.zeros(n), P0 * np.eye(n), mesh.n_nodes, lag * mesh.n_step)
    return xs.T


def _moments(x_list, h: float):
    """Trapezoid-weighted Gram ``G = int x x^T`` and ``C = int xdot x^T``."""
    n = x_list[0].shape[0]
    G = np.zeros((n, n))
    C = np.zeros((n, n))
    const = np.zeros(n)
    for x in x_list:
        x = np.atleast_2d(x)
        dx = np.gradient(x, h, axis=1)
        w = np.full(x.shape[1], h)
        w[0] = w[-1] = h / 2.0
        G += (x * w) @ x.T
        C += (dx * w) @ x.T
        const += ((dx**2) * w).sum(axis=1)
    return G, C, const


def lasso_objective(A, G, C, const, lam: float) -> float:
    """sum_i [a_i^T G a_i - 2 a_i . c_i + const_i] + lam |A|_1."""
    A = np.asarray(A, dtype=float)
    smooth = np.einsum("ij,jk,ik->", A, G, A) - 2.0 * np.sum(A * C) + const.sum()
    return float(smooth + lam * np.abs(A).sum())


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_cd(G, C, lam: float, A0=None, tol: float = 1e-8, max_sweeps: int = 10000):
    """Cyclic coordinate descent for ``min_A sum_i a_i^T G a_i - 2 a_i.c_i + lam |A|_1``.

    Rows share ``G`` so each coordinate update is done for all rows at once.
    """
    n_rows, n = C.shape
    A = np.zeros((n_rows, n)) if A0 is None else np.array(A0, dtype=float)
    diag = np.diag(G)
    if np.any(diag <= 0):
        raise NumericalError("degenerate regressor with zero energy")
    for sweep in range(max_sweeps):
        change = 0.0
        for k in range(n):
            old = A[:, k].copy()
            rk = C[:, k] - A @ G[:, k] + old * diag[k]
            A[:, k] = soft_threshold(rk, lam / 2.0) / diag[k]
            change = max(change, float(np.max(np.abs(A[:, k] - old))))
        if change < tol:
            return A, sweep + 1
    grad = 2.0 * (A @ G - C)
    raise NumericalError(f"coordinate descent did not converge; last change {change:.3e}, "
                         f"max gradient {np.abs(grad).max():.3e}")


def m_step(x_smooth, mesh_or_h, lam: float, A0=None, tol: float = 1e-8, max_sweeps: int = 10000):
    """L1-penalized least-squares fit of ``A`` to smoothed trajectories."""
    if lam < 0:
        raise ContractError("lambda must be non-negative")
    if isinstance(x_smooth, np.ndarray):
        x_smooth = [x_smooth]
    if not x_smooth:
        raise ContractError("need at least one trajectory")
    h = mesh_or_h.fine_dt if isinstance(mesh_or_h, MeshSpec) else float(mesh_or_h)
    G, C, _ = _moments(x_smooth, h)
    A, _ = lasso_cd(G, C, lam, A0, tol, max_sweeps)
    return A


@dataclass
class EmResult:
    A: np.ndarray
    objective: list
    iterations: int
    x_smooth: list
    lam: float


def run_em_lasso(values, dt: float, lam: float, q, r, n_step: int = 5, lag: int = 2,
                 max_iter: int = 200, tol: float = 1e-6) -> EmResult:
    """Alternate E and M steps from ``A = 0`` until the max entry change drops below ``tol``."""
    if isinstance(values, np.ndarray):
        values = [values]
    if lam <= 0:
        raise ContractError("lambda must be positive")
    n = values[0].shape[0]
    meshes = [MeshSpec(v.shape[1] - 1, dt, n_step) for v in values]
    A = np.zeros((n, n))
    objective = []
    xs = []
    it = 0
    for it in range(1, max_iter + 1):
        xs = [e_step(A, y, mesh, q, r, lag) for y, mesh in zip(values, meshes)]
        G, C, const = _moments(xs, meshes[0].fine_dt)
        A_new, _ = lasso_cd(G, C, lam, A)
        objective.append(lasso_objective(A_new, G, C, const, lam))
        change = float(np.max(np.abs(A_new - A)))
        A = A_new
        if change < tol:
            break
    return EmResult(A, objective, it, xs, lam)
