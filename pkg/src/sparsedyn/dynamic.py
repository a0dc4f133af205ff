"""Structure sampler for ``dx = A x dt + dw`` observed at low frequency.

The state of one chain is the indicator matrix ``S``, one fine-grid
trajectory ``X`` per time series with its anchor samples ``Y_hat``, and the
hyperparameters ``q`` (process noise), ``r`` (measurement noise) and ``m``
(magnitude scales). Magnitudes of ``A`` are integrated out; what remains is
the log Metropolis-Hastings number

    log P(S, X) = log p(S) + Phi(X, S)
                  - sum_i [ sum_j (dY_hat_ij)^2 / (2 q_i dt)
                            + 0.5 log det(M_i^-1 + XX / q_i)[S_i] + 0.5 log det M_i[S_i] ].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .basis import (
    BasisMatrices,
    MeshSpec,
    build_basis,
    cn_propose_anchor,
    cn_propose_trajectory,
    coarse_increment_energy,
    sample_bridge,
)
from .core import (
    ContractError,
    NumericalError,
    PriorConfig,
    QuadraticVariationPrior,
    as_topology,
    flat_log_prior,
    gaussian_row_terms,
)
from .regression import ChainRecord, propose_add_remove, propose_flip, propose_structure

MODES = ("plain", "gibbs", "heuristic", "ptemp")
MAX_LOG_WIDTH = 2.0


# --------------------------------------------------------------------------
# Data containers
# --------------------------------------------------------------------------

@dataclass
class TimeSeriesSet:
    """One or more equispaced series sharing the sampling period ``dt``.

    Each entry of ``values`` is an (n x (N_s + 1)) array; series may differ in
    length but not in ``n``.
    """

    values: list
    dt: float
    meas_var: np.ndarray | None = None

    def __post_init__(self):
        if isinstance(self.values, np.ndarray) and self.values.ndim == 2:
            self.values = [self.values]
        self.values = [np.atleast_2d(np.asarray(v, dtype=float)) for v in self.values]
        if not self.values:
            raise ContractError("need at least one series")
        n = self.values[0].shape[0]
        for v in self.values:
            if v.shape[0] != n:
                raise ContractError("all series must have the same number of variables")
            if v.shape[1] < 2:
                raise ContractError("each series needs at least two samples")
            if not np.all(np.isfinite(v)):
                raise ContractError("series contain non-finite values")
        if not self.dt > 0:
            raise ContractError("dt must be positive")

    @property
    def n(self) -> int:
        return self.values[0].shape[0]

    @property
    def n_intervals(self) -> list:
        return [v.shape[1] - 1 for v in self.values]

    def meshes(self, n_step: int) -> list:
        return [MeshSpec(N, self.dt, n_step) for N in self.n_intervals]


@dataclass
class DynStats:
    """``XX = sum X K X^T`` over regressors and ``D = sum X L R^T - diag(q T / 2)``."""

    XX: np.ndarray
    D: np.ndarray


@dataclass
class HyperState:
    q: np.ndarray
    r: np.ndarray
    m: np.ndarray
    M0: np.ndarray
    d: np.ndarray | None = None
    z0: list | None = None

    def __post_init__(self):
        for name in ("q", "r", "m"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v <= 0):
                raise ContractError(f"{name} must be positive")
            setattr(self, name, v)
        self.M0 = np.asarray(self.M0, dtype=float)
        if np.any(self.M0 <= 0):
            raise ContractError("M0 must be positive")
        if self.d is not None and np.any(np.asarray(self.d) > 0):
            raise ContractError("output poles must be non-positive")

    @property
    def M_diag(self) -> np.ndarray:
        return self.m[:, None] * self.M0[None, :]

    def copy(self) -> "HyperState":
        return HyperState(
            self.q.copy(), self.r.copy(), self.m.copy(), self.M0.copy(),
            None if self.d is None else np.array(self.d, dtype=float),
            None if self.z0 is None else [np.array(z, dtype=float) for z in self.z0],
        )


# --------------------------------------------------------------------------
# Pure functions
# --------------------------------------------------------------------------

def _m0_weights(Y, dt):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N = Y.shape[1] - 1
    t = np.arange(N + 1) * dt if np.isscalar(dt) else np.asarray(dt, dtype=float)
    w = np.empty(N + 1)
    w[0] = (t[1] - t[0]) ** 2 / 4.0
    w[-1] = (t[-1] - t[-2]) ** 2 / 4.0
    if N >= 2:
        w[1:-1] = (t[2:] - t[:-2]) ** 2 / 4.0
    return (Y**2) @ w


def compute_m0(Y, times) -> np.ndarray:
    """Inverse quadratic scale of each regulator; ``Y`` may be a list of series.

    ``times`` is the sampling period (scalar) or a time vector, or a list of
    those matching a list of series.
    """
    if isinstance(Y, (list, tuple)):
        if not isinstance(times, (list, tuple)):
            times = [times] * len(Y)
        total = sum(_m0_weights(y, t) for y, t in zip(Y, times))
    else:
        if np.atleast_2d(Y).shape[1] < 2:
            raise ContractError("need at least two samples")
        total = _m0_weights(Y, times)
    if np.any(total <= 0):
        bad = np.flatnonzero(total <= 0).tolist()
        raise ContractError(f"unscalable regulator: all-zero rows {bad}")
    return 1.0 / total


def quadratic_variation(values, dt) -> np.ndarray:
    """``sum_j (Y_ij - Y_i,j-1)^2 / dt``, averaged over series."""
    if isinstance(values, np.ndarray):
        values = [values]
    return np.mean([coarse_increment_energy(v, dt) for v in values], axis=0)


def integrate_output(X, d, z0, h: float) -> np.ndarray:
    """Solve ``dz = (x + d z) dt`` on the fine grid for piecewise-linear ``x``.

    Each step is integrated exactly against the linear interpolant of ``x``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = np.broadcast_to(np.asarray(d, dtype=float), (X.shape[0],))
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (X.shape[0],))
    Z = np.empty_like(X)
    for i in range(X.shape[0]):
        di = d[i]
        dh = di * h
        if abs(dh) < 1e-5:
            phi1 = h * (1.0 + dh / 2.0 + dh**2 / 6.0)
            psi = h * (0.5 + dh / 6.0 + dh**2 / 24.0)
        else:
            e = np.expm1(dh)
            phi1 = e / di
            psi = (e - dh) / (di**2 * h)
        a = np.exp(dh)
        x = X[i]
        c = (phi1 - psi) * x[:-1] + psi * x[1:]
        Z[i, 0] = z0[i]
        Z[i, 1:], _ = lfilter([1.0], [1.0, -a], c, zi=[a * z0[i]])
    return Z


def series_stats(X, basis: BasisMatrices, q, Z=None) -> DynStats:
    """Gram and bracket matrices of one series (regressors ``X`` or ``[X; Z]``)."""
    X = np.atleast_2d(X)
    R = X if Z is None else np.vstack([X, Z])
    # K and L are tridiagonal, so both products reduce to neighbour sums.
    h = basis.mesh.fine_dt
    w = np.full(R.shape[1], 4.0)
    w[0] = w[-1] = 2.0
    C = R[:, :-1] @ R[:, 1:].T
    XX = (h / 6.0) * ((R * w) @ R.T + C + C.T)
    D = 0.5 * (X[:, 1:] @ R[:, :-1].T - X[:, :-1] @ R[:, 1:].T
               + np.outer(X[:, -1], R[:, -1]) - np.outer(X[:, 0], R[:, 0]))
    n = X.shape[0]
    idx = np.arange(n)
    D[idx, idx] -= np.asarray(q, dtype=float) * basis.mesh.horizon / 2.0
    return DynStats(XX, D)


def accumulate_multi_series(stats_list) -> DynStats:
    stats_list = list(stats_list)
    if not stats_list:
        raise ContractError("need at least one series")
    XX = stats_list[0].XX.copy()
    D = stats_list[0].D.copy()
    for s in stats_list[1:]:
        if s.XX.shape != XX.shape or s.D.shape != D.shape:
            raise ContractError("series statistics have mismatched dimensions")
        XX += s.XX
        D += s.D
    return DynStats(XX, D)


def row_values(stats: DynStats, S, hyper: HyperState, rows=None) -> np.ndarray:
    """Per-row ``Phi_i - 0.5 log det(...) - 0.5 log det M_i[S_i]``."""
    q = hyper.q
    quad, logdet = gaussian_row_terms(stats.XX, stats.D, S, q, hyper.M_diag, rows)
    qr = q if rows is None else q[np.atleast_1d(rows)]
    return quad / (2.0 * qr**2) - 0.5 * logdet


def phi(stats: DynStats, S, hyper: HyperState) -> float:
    S = np.asarray(S)
    quad, _ = gaussian_row_terms(stats.XX, stats.D, S, hyper.q, hyper.M_diag)
    return float((quad / (2.0 * hyper.q**2)).sum())


def anchor_energy(Y_anchor, dt) -> np.ndarray:
    if isinstance(Y_anchor, np.ndarray):
        Y_anchor = [Y_anchor]
    return sum(coarse_increment_energy(y, dt) for y in Y_anchor)


def log_mh_number(stats: DynStats, S, hyper: HyperState, Y_anchor, cfg: PriorConfig, dt: float) -> float:
    """log P(S, X) with the anchor increments of every series included."""
    S = np.asarray(S)
    energy = anchor_energy(Y_anchor, dt)
    return (cfg.log_topology_prior(S) + float(row_values(stats, S, hyper).sum())
            - float((energy / (2.0 * hyper.q)).sum()))


# --------------------------------------------------------------------------
# Sampler configuration
# --------------------------------------------------------------------------

@dataclass
class Schedule:
    n_samples: int = 50000
    burn_in: int = 3000
    thin: int = 10

    def __post_init__(self):
        if self.n_samples <= 0 or self.burn_in < 0 or self.thin < 1:
            raise ContractError("schedule needs n_samples > 0, burn_in >= 0, thin >= 1")

    @property
    def total(self) -> int:
        return self.burn_in + self.n_samples * self.thin


@dataclass
class SamplerConfig:
    n_step: int = 5
    eps: float = 0.2
    eps_anchor: float | None = None
    mode: str = "heuristic"
    beta_struct: float = 1.0 / 1.5
    sample_q: bool = True
    sample_m: bool = True
    sample_r: bool = True
    rescale_r: bool = True
    q0: object = None
    r0: object = None
    m0: object = None
    adapt_eps: bool = True
    adapt_hyper: bool = True
    target_accept: float = 0.3
    adapt_interval: int = 50
    hyper_width: float = 0.1
    hyper_walk: str = "log"
    output_dynamics: bool = False
    l_scale: float | None = None
    z0_sd: float | None = None
    keep_samples: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.eps <= 1.0:
            raise ContractError("eps must lie in (0, 1]")
        if self.eps_anchor is not None and not 0.0 < self.eps_anchor <= 1.0:
            raise ContractError("eps_anchor must lie in (0, 1]")
        if not 0.0 < self.beta_struct <= 1.0:
            raise ContractError("beta_struct must lie in (0, 1]")
        if self.n_step < 2:
            raise ContractError("n_step must be >= 2")
        if self.hyper_walk not in ("log", "additive"):
            raise ContractError("hyper_walk must be 'log' or 'additive'")


def _resolve(value, default, n):
    if value is None:
        return np.array(default, dtype=float)
    return np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()


# --------------------------------------------------------------------------
# Chain state
# --------------------------------------------------------------------------

class DynamicChain:
    """Mutable state of one chain plus its moves.

    Every move keeps the cached statistics, per-row values and log P in sync
    with the current state; :meth:`recompute` rebuilds them from scratch.
    """

    def __init__(self, series: TimeSeriesSet, prior: PriorConfig | None = None,
                 config: SamplerConfig | None = None, rng=None, phi_enabled: bool = True):
        self.series = series
        self.prior = prior if prior is not None else PriorConfig()
        self.config = config if config is not None else SamplerConfig()
        self.rng = np.random.default_rng() if rng is None else rng
        self.phi_enabled = phi_enabled
        cfg = self.config
        n = series.n
        self.n = n
        self.augmented = cfg.output_dynamics
        self.n_reg = 2 * n if self.augmented else n
        self.dt = series.dt
        self.meshes = series.meshes(cfg.n_step)
        self.bases = [build_basis(mesh) for mesh in self.meshes]
        self.Y = series.values
        self.total_intervals = sum(series.n_intervals)
        self.eps = cfg.eps
        self.eps_anchor = cfg.eps if cfg.eps_anchor is None else cfg.eps_anchor

        qv = quadratic_variation(self.Y, self.dt)
        qv = np.where(qv > 0, qv, 1.0)
        T_mean = np.mean([m.horizon for m in self.meshes])
        q = _resolve(cfg.q0, qv / T_mean, n)
        if cfg.r0 is not None:
            r = _resolve(cfg.r0, None, n)
        elif series.meas_var is not None:
            r = _resolve(series.meas_var, None, n)
        else:
            r = 0.1 * q * self.dt
        m = _resolve(cfg.m0, qv, n)

        if self.prior.magnitude_scale_prior == "qv":
            self.m_prior = QuadraticVariationPrior(qv)
        elif self.prior.magnitude_scale_prior == "flat":
            self.m_prior = flat_log_prior
        else:
            self.m_prior = self.prior.magnitude_scale_prior
        self.q_prior = self.prior.process_noise_prior
        self.r_prior = self.prior.measurement_noise_prior

        M0 = compute_m0(self.Y, self.dt)
        d = z0 = None
        if self.augmented:
            self.l_scale = cfg.l_scale if cfg.l_scale is not None else 1.0 / self.dt
            d = np.full(n, -self.l_scale)
            z0 = [np.zeros(n) for _ in self.Y]
            sd = np.std(np.hstack(self.Y), axis=1)
            self.z0_sd = _resolve(cfg.z0_sd, np.where(sd > 0, sd, 1.0), n)
            Zc = [integrate_output(y @ b.P_emb, d, z, b.mesh.fine_dt)[:, b.mesh.coarse_index]
                  for y, b, z in zip(self.Y, self.bases, z0)]
            M0 = np.concatenate([M0, compute_m0(Zc, self.dt)])
        self.hyper = HyperState(q, r, m, M0, d, z0)

        self.S = np.zeros((n, self.n_reg), dtype=np.int8)
        self.Y_hat = [y.copy() for y in self.Y]
        self.X = [y @ b.P_emb for y, b in zip(self.Y, self.bases)]
        if cfg.hyper_walk == "log":
            self.widths = {k: np.full(n, cfg.hyper_width) for k in ("q", "m", "r", "r_joint")}
        else:
            self.widths = {k: cfg.hyper_width * getattr(self.hyper, k).copy() for k in ("q", "m", "r")}
            self.widths["r_joint"] = self.widths["r"].copy()
        if self.augmented:
            self.widths["d"] = cfg.hyper_width * np.abs(self.hyper.d)
            self.widths["z0"] = cfg.hyper_width * self.z0_sd
        self.window = {}
        self.flags = {}
        self.stats = None
        self.recompute()

    # ---- bookkeeping -----------------------------------------------------
    def _outputs(self, X_list, hyper):
        if not self.augmented:
            return [None] * len(X_list)
        return [integrate_output(x, hyper.d, z, b.mesh.fine_dt)
                for x, z, b in zip(X_list, hyper.z0, self.bases)]

    def _stats_for(self, X_list, hyper) -> DynStats:
        Z_list = self._outputs(X_list, hyper)
        return accumulate_multi_series(
            series_stats(x, b, hyper.q, z) for x, b, z in zip(X_list, self.bases, Z_list))

    def _rows(self, stats, S, hyper, rows=None):
        if not self.phi_enabled:
            size = self.n if rows is None else np.atleast_1d(rows).size
            return np.zeros(size)
        try:
            return row_values(stats, S, hyper, rows)
        except (NumericalError, np.linalg.LinAlgError):
            # only candidate states can be degenerate; scoring them -inf rejects them
            size = self.n if rows is None else np.atleast_1d(rows).size
            return np.full(size, -np.inf)

    def _anchor(self, Y_hat_list):
        return anchor_energy(Y_hat_list, self.dt)

    def recompute(self):
        self.stats = self._stats_for(self.X, self.hyper)
        self.rows = self._rows(self.stats, self.S, self.hyper)
        self.energy = self._anchor(self.Y_hat)
        self.log_prior = self.prior.log_topology_prior(self.S)

    @property
    def log_p(self) -> float:
        return self.log_prior + float(self.rows.sum()) - float((self.energy / (2.0 * self.hyper.q)).sum())

    def state(self) -> dict:
        return {
            "S": self.S, "X": self.X, "Y_hat": self.Y_hat, "hyper": self.hyper,
            "stats": self.stats, "rows": self.rows, "energy": self.energy, "log_prior": self.log_prior,
        }

    def set_state(self, st: dict):
        for key, val in st.items():
            setattr(self, key, val)

    def _tick(self, kind, accepted):
        acc, att = self.window.get(kind, (0, 0))
        self.window[kind] = (acc + int(bool(accepted)), att + 1)
        self.flags[kind] = bool(accepted)

    # ---- proposals --------------------------------------------------------
    def _propose_trajectories(self):
        Y_new, X_new = [], []
        for y, yh, x, b in zip(self.Y, self.Y_hat, self.X, self.bases):
            y_hat = cn_propose_anchor(y, yh, self.hyper.r, self.eps_anchor, self.rng)
            B = sample_bridge(b.mesh, self.hyper.q, self.rng, b.bridge_factor)
            X_new.append(cn_propose_trajectory(y_hat, yh, x, self.eps, b.P_emb, B))
            Y_new.append(y_hat)
        return Y_new, X_new

    # ---- moves ------------------------------------------------------------
    def structure_move(self, beta: float = 1.0, record=None) -> bool:
        S_new, log_ratio = propose_structure(self.S, self.prior, self.rng)
        changed = np.flatnonzero(np.any(S_new != self.S, axis=1))
        if changed.size == 0:
            accept = True
        else:
            prior_new = self.prior.log_topology_prior(S_new)
            if not np.isfinite(prior_new):
                accept = False
            else:
                new_rows = self._rows(self.stats, S_new, self.hyper, changed)
                delta = prior_new - self.log_prior + new_rows.sum() - self.rows[changed].sum()
                accept = np.log(self.rng.random()) < beta * delta + log_ratio
                if accept:
                    self.S = S_new
                    self.rows[changed] = new_rows
                    self.log_prior = prior_new
        self._tick("structure", accept)
        if record is not None:
            record.count("structure", accept)
        return bool(accept)

    def trajectory_move(self, beta: float = 1.0, record=None) -> bool:
        Y_new, X_new = self._propose_trajectories()
        stats = self._stats_for(X_new, self.hyper)
        rows = self._rows(stats, self.S, self.hyper)
        energy = self._anchor(Y_new)
        q = self.hyper.q
        delta = rows.sum() - self.rows.sum() - ((energy - self.energy) / (2.0 * q)).sum()
        accept = np.log(self.rng.random()) < beta * delta
        if accept:
            self.X, self.Y_hat, self.stats, self.rows, self.energy = X_new, Y_new, stats, rows, energy
        self._tick("trajectory", accept)
        if record is not None:
            record.count("trajectory", accept)
        return bool(accept)

    def joint_move(self, beta: float = 1.0, record=None) -> bool:
        """Propose ``S`` and the trajectories together and accept jointly."""
        S_new, log_ratio = propose_structure(self.S, self.prior, self.rng)
        Y_new, X_new = self._propose_trajectories()
        prior_new = self.prior.log_topology_prior(S_new)
        if not np.isfinite(prior_new):
            accept = False
        else:
            stats = self._stats_for(X_new, self.hyper)
            rows = self._rows(stats, S_new, self.hyper)
            energy = self._anchor(Y_new)
            new = prior_new + rows.sum() - (energy / (2.0 * self.hyper.q)).sum()
            accept = np.log(self.rng.random()) < beta * (new - self.log_p) + log_ratio
            if accept:
                self.S, self.X, self.Y_hat = S_new, X_new, Y_new
                self.stats, self.rows, self.energy, self.log_prior = stats, rows, energy, prior_new
        self._tick("joint", accept)
        if record is not None:
            record.count("joint", accept)
        return bool(accept)

    def gibbs_sweep(self, beta: float = 1.0, record=None):
        """Row-by-row structure updates followed by one trajectory move."""
        tp = self.prior.topology_prior
        if not getattr(tp, "factorizes", False) or not hasattr(tp, "row"):
            raise ContractError("Gibbs sweep needs a row-factorizable topology prior")
        for i in range(self.n):
            row = self.S[i:i + 1]
            if self.prior.proposal_kind == "flip":
                new_row, log_ratio = propose_flip(row, self.rng)
            else:
                new_row, log_ratio = propose_add_remove(row, self.prior.p_add, self.prior.p_remove, self.rng)
            if np.array_equal(new_row, row):
                accept = True
            else:
                lp_old, lp_new = tp.row(row[0]), tp.row(new_row[0])
                if not np.isfinite(lp_new):
                    accept = False
                else:
                    S_new = self.S.copy()
                    S_new[i] = new_row[0]
                    val = self._rows(self.stats, S_new, self.hyper, [i])[0]
                    delta = lp_new - lp_old + val - self.rows[i]
                    accept = np.log(self.rng.random()) < beta * delta + log_ratio
                    if accept:
                        self.S = S_new
                        self.rows[i] = val
                        self.log_prior += lp_new - lp_old
            self._tick("structure", accept)
            if record is not None:
                record.count("structure", accept)
        self.trajectory_move(beta, record)

    # ---- hyperparameters --------------------------------------------------
    def _walk(self, kind, current):
        """Random-walk proposal for a positive vector and its log proposal ratio.

        The log-scale walk ``x * exp(w xi)`` carries the Jacobian ``x_new / x``;
        the additive walk ``x + w xi`` is symmetric.
        """
        xi = self.rng.standard_normal(current.shape[0])
        if self.config.hyper_walk == "log":
            step = self.widths[kind] * xi
            return current * np.exp(step), step
        return current + self.widths[kind] * xi, np.zeros_like(current)

    def q_move(self, beta: float = 1.0, record=None) -> bool:
        """Random-walk on ``q`` with the bridge part of each trajectory rescaled."""
        h = self.hyper
        q_new, log_jac = self._walk("q", h.q)
        accept = False
        if np.all((q_new > 0) & np.isfinite(q_new)):
            scale = np.sqrt(q_new / h.q)[:, None]
            X_new = [yh @ b.P_emb + scale * (x - yh @ b.P_emb)
                     for x, yh, b in zip(self.X, self.Y_hat, self.bases)]
            h_new = h.copy()
            h_new.q = q_new
            stats = self._stats_for(X_new, h_new)
            rows = self._rows(stats, self.S, h_new)
            new = rows.sum() - (self.energy / (2.0 * q_new)).sum()
            old = self.rows.sum() - (self.energy / (2.0 * h.q)).sum()
            log_a = (beta * (new - old)
                     + float(np.sum(self.q_prior(q_new) - self.q_prior(h.q)))
                     + 0.5 * self.total_intervals * float(np.sum(np.log(h.q / q_new)))
                     + float(log_jac.sum()))
            accept = np.log(self.rng.random()) < log_a
            if accept:
                self.hyper, self.X, self.stats, self.rows = h_new, X_new, stats, rows
        self._tick("q", accept)
        if record is not None:
            record.count("q", accept)
        return bool(accept)

    def m_move(self, beta: float = 1.0, record=None):
        """Componentwise random-walk on the magnitude scales (rows are independent)."""
        h = self.hyper
        prop, log_jac = self._walk("m", h.m)
        valid = (prop > 0) & np.isfinite(prop)
        h_new = h.copy()
        h_new.m = np.where(valid, prop, h.m)
        rows = self._rows(self.stats, self.S, h_new)
        with np.errstate(invalid="ignore"):
            log_a = beta * (rows - self.rows) + self.m_prior(h_new.m) - self.m_prior(h.m) + log_jac
        u = np.log(self.rng.random(self.n))
        accept = valid & (u < np.nan_to_num(log_a, nan=-np.inf))
        if np.any(accept):
            m = np.where(accept, h_new.m, h.m)
            hh = h.copy()
            hh.m = m
            self.hyper = hh
            self.rows = np.where(accept, rows, self.rows)
        for a in accept:
            self._tick("m", a)
            if record is not None:
                record.count("m", a)
        return accept

    def r_move(self, record=None):
        """Componentwise random-walk on the measurement variances."""
        h = self.hyper
        prop, log_jac = self._walk("r", h.r)
        valid = (prop > 0) & np.isfinite(prop)
        r_new = np.where(valid, prop, h.r)
        log_a = self.r_prior(r_new) - self.r_prior(h.r) + log_jac
        for y, yh in zip(self.Y, self.Y_hat):
            resid = ((y - yh) ** 2).sum(axis=1)
            log_a = log_a + 0.5 * y.shape[1] * np.log(h.r / r_new) + 0.5 * resid * (1.0 / h.r - 1.0 / r_new)
        u = np.log(self.rng.random(self.n))
        accept = valid & (u < log_a)
        if np.any(accept):
            hh = h.copy()
            hh.r = np.where(accept, r_new, h.r)
            self.hyper = hh
        for a in accept:
            self._tick("r", a)
            if record is not None:
                record.count("r", a)
        return accept

    def r_rescale_move(self, beta: float = 1.0, record=None) -> bool:
        """Move ``r`` together with the anchors, keeping ``(Y_hat - Y) / sqrt(r)`` fixed.

        The plain ``r`` update mixes slowly because ``r`` given the anchors is
        sharp; here the anchor residuals and the trajectories follow ``r``. The
        Gaussian power terms cancel against the Jacobian of the rescaling.
        """
        h = self.hyper
        r_new, log_jac = self._walk("r_joint", h.r)
        accept = False
        if np.all((r_new > 0) & np.isfinite(r_new)):
            scale = np.sqrt(r_new / h.r)[:, None]
            Y_new, X_new = [], []
            for y, yh, x, b in zip(self.Y, self.Y_hat, self.X, self.bases):
                y_hat = y + scale * (yh - y)
                Y_new.append(y_hat)
                X_new.append(x + (y_hat - yh) @ b.P_emb)
            stats = self._stats_for(X_new, h)
            rows = self._rows(stats, self.S, h)
            energy = self._anchor(Y_new)
            delta = rows.sum() - self.rows.sum() - ((energy - self.energy) / (2.0 * h.q)).sum()
            log_a = -np.inf if not np.isfinite(delta) else (beta * delta + float(np.sum(self.r_prior(r_new) - self.r_prior(h.r)))
                     + float(log_jac.sum()))
            accept = np.log(self.rng.random()) < log_a
            if accept:
                h_new = h.copy()
                h_new.r = r_new
                self.hyper = h_new
                self.X, self.Y_hat, self.stats, self.rows, self.energy = X_new, Y_new, stats, rows, energy
        self._tick("r_joint", accept)
        if record is not None:
            record.count("r_joint", accept)
        return bool(accept)

    def d_move(self, beta: float = 1.0, record=None) -> bool:
        h = self.hyper
        d_new = h.d + self.widths["d"] * self.rng.standard_normal(self.n)
        accept = False
        if np.all(d_new <= 0):
            h_new = h.copy()
            h_new.d = d_new
            accept = self._hyper_trial(h_new, beta, float(np.sum((d_new - h.d) / self.l_scale)))
        self._tick("d", accept)
        if record is not None:
            record.count("d", accept)
        return accept

    def z0_move(self, beta: float = 1.0, record=None) -> bool:
        h = self.hyper
        h_new = h.copy()
        log_prior = 0.0
        for k, z in enumerate(h.z0):
            zn = z + self.widths["z0"] * self.rng.standard_normal(self.n)
            h_new.z0[k] = zn
            log_prior += float(np.sum((z**2 - zn**2) / (2.0 * self.z0_sd**2)))
        accept = self._hyper_trial(h_new, beta, log_prior)
        self._tick("z0", accept)
        if record is not None:
            record.count("z0", accept)
        return accept

    def _hyper_trial(self, h_new, beta, log_prior_diff) -> bool:
        stats = self._stats_for(self.X, h_new)
        rows = self._rows(stats, self.S, h_new)
        log_a = beta * (rows.sum() - self.rows.sum()) + log_prior_diff
        accept = bool(np.log(self.rng.random()) < log_a)
        if accept:
            self.hyper, self.stats, self.rows = h_new, stats, rows
        return accept

    def hyper_moves(self, beta: float = 1.0, record=None):
        cfg = self.config
        if self.augmented:
            self.d_move(beta, record)
            self.z0_move(beta, record)
        if cfg.sample_q:
            self.q_move(beta, record)
        if cfg.sample_m:
            self.m_move(beta, record)
        if cfg.sample_r:
            self.r_move(record)
            if cfg.rescale_r:
                self.r_rescale_move(beta, record)

    # ---- driver -------------------------------------------------------------
    def step(self, mode: str, beta: float = 1.0, record=None):
        """One iteration of the chosen scheme followed by hyperparameter moves.

        ``beta`` tempers the whole target (parallel tempering); in heuristic
        mode only the structure move is tempered, by ``config.beta_struct``.
        """
        if mode not in MODES:
            raise ContractError(f"unknown mode {mode!r}")
        # overflow in a candidate gives a non-finite ratio, which rejects it
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if mode in ("plain", "ptemp"):
                self.joint_move(beta, record)
            elif mode == "gibbs":
                self.gibbs_sweep(beta, record)
            else:
                self.structure_move(self.config.beta_struct * beta, record)
                self.trajectory_move(beta, record)
            self.hyper_moves(beta, record)

    def adapt(self):
        """Burn-in tuning of random-walk widths (and optionally eps)."""
        cfg = self.config
        target = cfg.target_accept
        for kind, (acc, att) in self.window.items():
            if att == 0:
                continue
            rate = acc / att
            factor = np.exp(rate - target)
            if kind in self.widths and cfg.adapt_hyper:
                w = self.widths[kind] * factor
                if cfg.hyper_walk == "log" and kind in ("q", "m", "r", "r_joint"):
                    w = np.clip(w, 1e-4, MAX_LOG_WIDTH)
                self.widths[kind] = w
            # joint acceptance is capped by the structure part, so it would drive eps to its floor
            if kind == "trajectory" and cfg.adapt_eps:
                self.eps = float(np.clip(self.eps * factor, 1e-3, 1.0))
                self.eps_anchor = float(np.clip(self.eps_anchor * factor, 1e-3, 1.0))
        self.window = {}


@dataclass
class DynamicResult:
    edge_probabilities: np.ndarray
    record: ChainRecord
    trajectory_mean: list
    hyper_trace: dict
    acceptance: dict
    final_hyper: HyperState
    extras: dict = field(default_factory=dict)


class _Collector:
    def __init__(self, chain: DynamicChain, keep_samples: bool):
        self.record = ChainRecord(chain.S.shape, keep_samples=keep_samples)
        self.traj_sum = [np.zeros_like(x) for x in chain.X]
        self.trace = {"q": [], "r": [], "m": []}
        if chain.augmented:
            self.trace["d"] = []

    def collect(self, chain: DynamicChain, iteration: int, beta: float = 1.0):
        h = chain.hyper
        self.record.record(chain.S, chain.log_p, iteration=iteration, beta=beta,
                           n_edges=int(chain.S.sum()), accepted=dict(sorted(chain.flags.items())))
        for k, x in enumerate(chain.X):
            self.traj_sum[k] += x
        for key in self.trace:
            self.trace[key].append(np.array(getattr(h, key), dtype=float))

    def result(self, chain: DynamicChain, **extras) -> DynamicResult:
        n = max(self.record.n_retained, 1)
        rec = self.record
        return DynamicResult(
            edge_probabilities=rec.edge_probabilities,
            record=rec,
            trajectory_mean=[s / n for s in self.traj_sum],
            hyper_trace={k: np.array(v) for k, v in self.trace.items()},
            acceptance=rec.acceptance_rates(),
            final_hyper=chain.hyper,
            extras=extras,
        )


def run_dynamic_mcmc(series: TimeSeriesSet, prior: PriorConfig | None = None,
                     config: SamplerConfig | None = None, schedule: Schedule | None = None,
                     rng=None, mode: str | None = None, beta: float = 1.0) -> DynamicResult:
    """Run one chain of the structure sampler and collect thinned samples.

    ``mode`` overrides ``config.mode``; "ptemp" is handled by
    :func:`sparsedyn.tempering.run_parallel_tempering` and here falls back to
    the plain joint move.
    """
    config = config if config is not None else SamplerConfig()
    schedule = schedule if schedule is not None else Schedule()
    mode = mode or config.mode
    chain = DynamicChain(series, prior, config, rng)
    col = _Collector(chain, config.keep_samples)
    for it in range(1, schedule.total + 1):
        burning = it <= schedule.burn_in
        chain.step(mode, beta, None if burning else col.record)
        if burning and it % config.adapt_interval == 0:
            chain.adapt()
        if not burning and (it - schedule.burn_in) % schedule.thin == 0:
            col.collect(chain, it, beta)
    return col.result(chain, eps=chain.eps, widths={k: v.tolist() for k, v in chain.widths.items()})


def run_gibbs_sweep(chain: DynamicChain, beta: float = 1.0) -> DynamicChain:
    chain.gibbs_sweep(beta)
    return chain


def sample_q_m(chain: DynamicChain, beta: float = 1.0) -> DynamicChain:
    chain.q_move(beta)
    chain.m_move(beta)
    return chain


def sample_r(chain: DynamicChain) -> DynamicChain:
    chain.r_move()
    return chain


def augment_output_dynamics(chain: DynamicChain, beta: float = 1.0) -> DynamicChain:
    """Trajectory, pole and hidden-initial-state updates of the augmented model."""
    if not chain.augmented:
        raise ContractError("chain was not built with output dynamics")
    chain.trajectory_move(beta)
    chain.d_move(beta)
    chain.z0_move(beta)
    return chain
