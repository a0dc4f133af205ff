"""Bayesian variable selection for the static model ``y_j = A x_j + v_j``.

The magnitudes of the non-zero entries of ``A`` are integrated out in closed
form, leaving a Metropolis-Hastings chain over indicator matrices only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, PriorConfig, as_topology, gaussian_row_terms


@dataclass
class RegressionData:
    """Inputs ``X`` (n x N), outputs ``Y`` (m x N), noise variances, prior scales.

    ``M_diag`` holds the diagonal of each ``M_i`` as row ``i`` of an (m x n) array.
    """

    X: np.ndarray
    Y: np.ndarray
    R_diag: np.ndarray
    M_diag: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        n, N = self.X.shape
        m = self.Y.shape[0]
        if self.Y.shape[1] != N:
            raise ContractError(f"X has {N} columns but Y has {self.Y.shape[1]}")
        self.R_diag = np.broadcast_to(np.asarray(self.R_diag, dtype=float), (m,)).copy()
        self.M_diag = np.broadcast_to(np.asarray(self.M_diag, dtype=float), (m, n)).copy()
        if np.any(self.R_diag <= 0):
            raise ContractError("measurement variances must be positive")
        if np.any(self.M_diag <= 0):
            raise ContractError("prior covariance diagonals must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.Y.shape[0], self.X.shape[0]


@dataclass
class GramCache:
    XX: np.ndarray
    XY: np.ndarray  # (m, n); row i is X Y_i^T
    YY: np.ndarray  # (m,)

    @classmethod
    def from_data(cls, data: RegressionData) -> "GramCache":
        X, Y = data.X, data.Y
        return cls(XX=X @ X.T, XY=Y @ X.T, YY=np.einsum("ij,ij->i", Y, Y))


def _row_terms(data, cache, S, rows=None):
    quad, logdet = gaussian_row_terms(cache.XX, cache.XY, S, data.R_diag, data.M_diag, rows)
    r = data.R_diag if rows is None else data.R_diag[np.atleast_1d(rows)]
    yy = cache.YY if rows is None else cache.YY[np.atleast_1d(rows)]
    jmin = 0.5 * yy / r - 0.5 * quad / r**2
    return jmin, logdet


def j_min(data: RegressionData, cache: GramCache, S) -> float:
    """Minimum of the quadratic exponent over the active magnitudes."""
    S = as_topology(S, data.shape)
    jmin, _ = _row_terms(data, cache, S)
    return float(jmin.sum())


def row_log_marginal(data, cache, S, rows=None) -> np.ndarray:
    """Per-row ``-J_i - 0.5 log det(...) - 0.5 log det M_i[S_i]`` (no prior)."""
    jmin, logdet = _row_terms(data, cache, S, rows)
    return -jmin - 0.5 * logdet


def log_marginal(data: RegressionData, cache: GramCache, S, cfg: PriorConfig) -> float:
    """log p(S) + log p(Y | S, X) up to an S-independent constant."""
    S = as_topology(S, data.shape)
    return cfg.log_topology_prior(S) + float(row_log_marginal(data, cache, S).sum())


def posterior_mean_magnitudes(data, cache, S) -> np.ndarray:
    """``h_min`` for every row, scattered into an (m x n) matrix."""
    S = np.asarray(S)
    m, n = S.shape
    H = np.zeros((m, n))
    for i in range(m):
        idx = np.flatnonzero(S[i])
        if idx.size == 0:
            continue
        r = data.R_diag[i]
        inner = cache.XX[np.ix_(idx, idx)] / r + np.diag(1.0 / data.M_diag[i, idx])
        H[i, idx] = np.linalg.solve(inner, cache.XY[i, idx] / r)
    return H


# --------------------------------------------------------------------------
# Structure proposals
# --------------------------------------------------------------------------

def propose_flip(S, rng, pick=None):
    """Flip one uniformly chosen entry. Returns ``(S_new, log_ratio=0)``."""
    S_new = np.array(S, dtype=np.int8, copy=True)
    if pick is None:
        flat = int(rng.integers(S_new.size))
        pick = np.unravel_index(flat, S_new.shape)
    S_new[pick] = 1 - S_new[pick]
    return S_new, 0.0


def add_remove_log_ratio(size: int, count: int, p_add: float, p_remove: float, move: str) -> float:
    """log g(S|S_new)/g(S_new|S) for an executed move from a topology with ``count`` ones.

    The empty topology always proposes an addition and the full one always a
    removal, which is what makes the boundary ratios ``1/(p_add size)`` and
    ``1/(p_remove size)`` exact. Moves that start at those forced states get
    ``p_remove size`` and ``p_add size``.
    """
    if move not in ("add", "remove"):
        raise ContractError(f"unknown move {move!r}")
    if move == "add" and count >= size:
        raise ContractError("addition from a full topology")
    if move == "remove" and count <= 0:
        raise ContractError("removal from an empty topology")
    if size == 1:
        return 0.0
    if move == "add":
        if count == 0:
            return float(np.log(p_remove * size))
        if count <= size - 2:
            return float(np.log(p_remove * (size - count) / (p_add * (count + 1))))
        return float(-np.log(p_add * size))
    if count == size:
        return float(np.log(p_add * size))
    if count >= 2:
        return float(np.log(p_add * count / (p_remove * (size - count + 1))))
    return float(-np.log(p_remove * size))


def propose_add_remove(S, p_add: float, p_remove: float, rng):
    """Add a zero entry w.p. ``p_add``, remove a non-zero w.p. ``p_remove``.

    The empty topology always adds and the full one always removes; in between,
    the remaining ``1 - p_add - p_remove`` is "no change". The total size plays
    the role of ``n^2``.
    """
    if not (p_add > 0 and p_remove > 0 and p_add + p_remove <= 1):
        raise ContractError("need p_add > 0, p_remove > 0, p_add + p_remove <= 1")
    S_new = np.array(S, dtype=np.int8, copy=True)
    size = S_new.size
    flat = S_new.reshape(-1)
    count = int(flat.sum())
    if count == 0:
        move = "add"
    elif count == size:
        move = "remove"
    else:
        u = rng.random()
        move = "add" if u < p_add else "remove" if u < p_add + p_remove else None
    if move is None:
        return S_new, 0.0
    pool = np.flatnonzero(flat == (0 if move == "add" else 1))
    flat[pool[rng.integers(pool.size)]] = 1 if move == "add" else 0
    return S_new, add_remove_log_ratio(size, count, p_add, p_remove, move)


def propose_structure(S, cfg: PriorConfig, rng):
    if cfg.proposal_kind == "flip":
        return propose_flip(S, rng)
    return propose_add_remove(S, cfg.p_add, cfg.p_remove, rng)


# --------------------------------------------------------------------------
# Chain bookkeeping
# --------------------------------------------------------------------------

@dataclass
class ChainRecord:
    """Thinned samples, running edge-probability accumulator and acceptance counts."""

    shape: tuple[int, int]
    samples: list = field(default_factory=list)
    log_scores: list = field(default_factory=list)
    info: list = field(default_factory=list)
    accum: np.ndarray | None = None
    n_retained: int = 0
    accepted: dict = field(default_factory=dict)
    attempted: dict = field(default_factory=dict)
    keep_samples: bool = True

    def __post_init__(self):
        if self.accum is None:
            self.accum = np.zeros(self.shape)

    def record(self, S, log_score: float, **info):
        self.accum += S
        self.n_retained += 1
        if self.keep_samples:
            self.samples.append(np.array(S, dtype=np.int8, copy=True))
            self.log_scores.append(float(log_score))
            if info:
                self.info.append(info)

    def count(self, kind: str, accepted: bool):
        self.attempted[kind] = self.attempted.get(kind, 0) + 1
        self.accepted[kind] = self.accepted.get(kind, 0) + int(bool(accepted))

    def acceptance_rates(self) -> dict:
        return {k: self.accepted[k] / self.attempted[k] for k in sorted(self.attempted) if self.attempted[k]}

    @property
    def edge_probabilities(self) -> np.ndarray:
        if self.n_retained == 0:
            return np.zeros(self.shape)
        return self.accum / self.n_retained


def run_regression_mcmc(data: RegressionData, cfg: PriorConfig, n_samples: int,
                        burn_in: int = 3000, thin: int = 10, rng=None, S0=None,
                        keep_samples: bool = True):
    """Metropolis-Hastings over topologies for the regression model.

    Returns ``(edge_probabilities, ChainRecord)``; probabilities average the
    ``n_samples`` retained states taken every ``thin`` iterations after
    ``burn_in``.
    """
    if n_samples <= 0:
        raise ContractError("n_samples must be positive")
    if thin < 1 or burn_in < 0:
        raise ContractError("need thin >= 1 and burn_in >= 0")
    rng = np.random.default_rng() if rng is None else rng
    cache = GramCache.from_data(data)
    m, n = data.shape
    S = np.zeros((m, n), dtype=np.int8) if S0 is None else as_topology(S0, (m, n))
    row_lm = row_log_marginal(data, cache, S)
    prior = cfg.log_topology_prior(S)
    record = ChainRecord((m, n), keep_samples=keep_samples)

    total = burn_in + n_samples * thin
    for it in range(1, total + 1):
        S_new, log_ratio = propose_structure(S, cfg, rng)
        changed = np.flatnonzero(np.any(S_new != S, axis=1))
        if changed.size == 0:
            accept = True
        else:
            new_rows = row_log_marginal(data, cache, S_new, changed)
            prior_new = cfg.log_topology_prior(S_new)
            delta = log_ratio + prior_new - prior + new_rows.sum() - row_lm[changed].sum()
            accept = np.log(rng.random()) < delta
            if accept:
                S = S_new
                row_lm[changed] = new_rows
                prior = prior_new
        record.count("structure", accept)
        if it > burn_in and (it - burn_in) % thin == 0:
            record.record(S, prior + row_lm.sum())
    return record.edge_probabilities, record
