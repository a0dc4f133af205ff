"""Synthetic transport-ring benchmark, classifier scores and an exact enumeration oracle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, NumericalError, PriorConfig
from .dynamic import TimeSeriesSet
from .regression import GramCache, RegressionData, log_marginal


def default_connectors(ring_sizes) -> list:
    """Two connector edges in each direction between consecutive rings."""
    edges = []
    offsets = np.concatenate([[0], np.cumsum(ring_sizes)])
    for a in range(len(ring_sizes) - 1):
        oa, na = offsets[a], ring_sizes[a]
        ob, nb = offsets[a + 1], ring_sizes[a + 1]
        edges += [
            (int(oa), int(ob)),
            (int(oa + na // 2), int(ob + nb // 2)),
            (int(ob + nb // 4), int(oa + na // 4)),
            (int(ob + 3 * nb // 4), int(oa + 3 * na // 4)),
        ]
    return edges


@dataclass
class RingSpec:
    """Rings of nodes with edges ``j -> j + 1`` and extra connector edges.

    Edges are ``(source, target)`` pairs; edge ``j -> k`` sets ``A[k, j]``.
    ``inter_ring_edges`` of ``None`` uses :func:`default_connectors`; weights
    may be given as a third tuple element.
    """

    ring_sizes: list = field(default_factory=lambda: [40, 60])
    inter_ring_edges: list | None = None
    edge_weight: float = 1.0
    column_zero_sum: bool = True

    def connectors(self) -> list:
        if self.inter_ring_edges is None:
            return default_connectors(self.ring_sizes)
        return [tuple(e) for e in self.inter_ring_edges]


def generate_transport_matrix(spec: RingSpec):
    """Ground-truth dynamics matrix and its topology (diagonal included)."""
    n = int(sum(spec.ring_sizes))
    A = np.zeros((n, n))
    seen = set()

    def put(src, dst, w):
        if src == dst:
            raise ContractError(f"self-loop {src} -> {dst} in edge list")
        if not (0 <= src < n and 0 <= dst < n):
            raise ContractError(f"edge {src} -> {dst} out of range")
        if (src, dst) in seen:
            raise ContractError(f"overlapping edge specification {src} -> {dst}")
        seen.add((src, dst))
        A[dst, src] = w

    start = 0
    for size in spec.ring_sizes:
        if size < 2:
            raise ContractError("rings need at least two nodes")
        for j in range(size):
            put(start + j, start + (j + 1) % size, spec.edge_weight)
        start += size
    for e in spec.connectors():
        w = e[2] if len(e) > 2 else spec.edge_weight
        put(int(e[0]), int(e[1]), float(w))
    if spec.column_zero_sum:
        A[np.arange(n), np.arange(n)] = -A.sum(axis=0)
    truth = (A != 0).astype(np.int8)
    return A, truth


@dataclass
class NoiseSpec:
    ou_theta: float = 10.0
    ou_incr_cov: float = 4.0
    meas_sd: float = 0.04
    init_sd: float = 2.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ContractError(f"{k} must be positive")


@dataclass
class SimulatedData:
    series: TimeSeriesSet
    true_fine: list
    fine_times: np.ndarray
    sample_times: np.ndarray


def simulate_ou(theta, incr_cov, n_dim, n_steps, h, rng, u0=None) -> np.ndarray:
    """Euler-Maruyama path of ``du = -theta u dt + dw`` (rows = dimensions)."""
    if u0 is None:
        u0 = rng.normal(0.0, np.sqrt(incr_cov / (2.0 * theta)), n_dim)
    u = np.empty((n_dim, n_steps + 1))
    u[:, 0] = u0
    xi = rng.standard_normal((n_steps, n_dim)) * np.sqrt(incr_cov * h)
    a = 1.0 - theta * h
    for k in range(n_steps):
        u[:, k + 1] = a * u[:, k] + xi[k]
    return u


def simulate_series(A, noise: NoiseSpec, T: float, dt: float, rng, n_series: int = 1,
                    fine_dt: float | None = None, n_step: int = 5,
                    noise_mode: str = "rate") -> SimulatedData:
    """Euler-Maruyama simulation of a linear system driven by OU process noise ``u``.

    ``noise_mode="rate"`` adds the noise to the velocity, ``dx = (A x + u) dt``;
    ``"increment"`` uses ``u`` as the driving path itself, ``dx = A x dt + du``.
    Default ``fine_dt`` is a tenth of the inference fine step ``dt / n_step``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if fine_dt is None:
        fine_dt = dt / n_step / 10.0
    if fine_dt > dt / n_step / 4.0 + 1e-15:
        raise ContractError("fine_dt must be at most a quarter of the inference fine step")
    per = int(round(dt / fine_dt))
    if abs(per * fine_dt - dt) > 1e-9 * dt:
        raise ContractError("dt must be an integer multiple of fine_dt")
    h = dt / per
    N = int(round(T / dt))
    steps = N * per
    values, fine = [], []
    for _ in range(n_series):
        x = np.empty((n, steps + 1))
        x[:, 0] = rng.normal(0.0, noise.init_sd, n)
        u = simulate_ou(noise.ou_theta, noise.ou_incr_cov, n, steps, h, rng)
        if noise_mode == "increment":
            du = np.diff(u, axis=1)
        elif noise_mode == "rate":
            du = u[:, :-1] * h
        else:
            raise ContractError(f"unknown noise_mode {noise_mode!r}")
        F = np.eye(n) + h * A
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(steps):
                x[:, k + 1] = F @ x[:, k] + du[:, k]
        if not np.all(np.isfinite(x)) or np.abs(x).max() > 1e12:
            raise NumericalError("simulation overflowed; use a smaller fine_dt")
        y = x[:, ::per] + rng.normal(0.0, noise.meas_sd, (n, N + 1))
        values.append(y)
        fine.append(x)
    return SimulatedData(
        series=TimeSeriesSet(values, dt, meas_var=np.full(n, noise.meas_sd**2)),
        true_fine=fine,
        fine_times=np.arange(steps + 1) * h,
        sample_times=np.arange(N + 1) * dt,
    )


# --------------------------------------------------------------------------
# Scores
# --------------------------------------------------------------------------

def _ranked(scores, truth):
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(truth).ravel().astype(bool)
    if s.shape != t.shape:
        raise ContractError("scores and truth differ in size")
    if not np.all(np.isfinite(s)):
        raise ContractError("scores must be finite")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("degenerate truth: need at least one positive and one negative")
    order = np.argsort(-s, kind="mergesort")
    s, t = s[order], t[order]
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(t)[ends]
    fp = (ends + 1) - tp
    return tp, fp, n_pos, n_neg, s[ends]


def roc_curve(scores, truth):
    tp, fp, n_pos, n_neg, thr = _ranked(scores, truth)
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return fpr, tpr, np.r_[np.inf, thr]


def pr_curve(scores, truth):
    tp, fp, n_pos, _, thr = _ranked(scores, truth)
    recall = np.r_[0.0, tp / n_pos]
    precision = np.r_[1.0, tp / (tp + fp)]
    return recall, precision, np.r_[np.inf, thr]


def area_roc(fpr, tpr) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def area_pr(recall, precision) -> float:
    """Step-interpolated area: each recall increment weighted by the precision reached."""
    return float(np.sum(np.diff(recall) * precision[1:]))


def score_auroc_auprec(edge_scores, truth):
    fpr, tpr, _ = roc_curve(edge_scores, truth)
    rec, prec, _ = pr_curve(edge_scores, truth)
    return area_roc(fpr, tpr), area_pr(rec, prec)


def confusion_at(edge_scores, truth, threshold: float = 0.5) -> dict:
    s = np.asarray(edge_scores, dtype=float).ravel()
    t = np.asarray(truth).ravel().astype(bool)
    p = s > threshold
    return {"tp": int(np.sum(p & t)), "fp": int(np.sum(p & ~t)),
            "fn": int(np.sum(~p & t)), "tn": int(np.sum(~p & ~t))}


# --------------------------------------------------------------------------
# Exact enumeration
# --------------------------------------------------------------------------

MAX_ENUMERATION_ENTRIES = 16


@dataclass
class EnumeratedPosterior:
    topologies: np.ndarray  # (K, m, n)
    log_marginals: np.ndarray
    probabilities: np.ndarray
    edge_marginals: np.ndarray

    def index_of(self, S) -> int:
        flat = np.asarray(S, dtype=np.int8).ravel()
        weights = 1 << np.arange(flat.size)
        return int(flat @ weights)


def enumerate_posterior(data: RegressionData, cfg: PriorConfig) -> EnumeratedPosterior:
    """Exact p(S | X, Y) over every topology; topology ``k`` has bit ``e`` of ``k`` at flat entry ``e``."""
    m, n = data.shape
    size = m * n
    if size > MAX_ENUMERATION_ENTRIES:
        raise ContractError(f"enumeration limited to {MAX_ENUMERATION_ENTRIES} entries, got {size}")
    cache = GramCache.from_data(data)
    K = 1 << size
    bits = ((np.arange(K)[:, None] >> np.arange(size)[None, :]) & 1).astype(np.int8)
    tops = bits.reshape(K, m, n)
    lm = np.array([log_marginal(data, cache, S, cfg) for S in tops])
    p = np.exp(lm - lm.max())
    p /= p.sum()
    edges = np.tensordot(p, tops.astype(float), axes=1)
    return EnumeratedPosterior(tops, lm, p, edges)


def topology_index(S) -> int:
    flat = np.asarray(S, dtype=np.int64).ravel()
    return int(flat @ (1 << np.arange(flat.size)))


def empirical_table(samples, size: int) -> np.ndarray:
    counts = np.zeros(1 << size)
    for S in samples:
        counts[topology_index(S)] += 1
    return counts / max(len(samples), 1)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())

