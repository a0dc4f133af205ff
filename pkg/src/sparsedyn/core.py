"""Shared domain types: topology helpers, selection operator, priors, RNG streams.

Topologies are plain ``numpy`` int8 arrays with entries in {0, 1}; the helpers
here validate and slice them. Everything probabilistic is kept in log space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class ContractError(ValueError):
    """Raised when an operation's shape or domain precondition is violated."""


class NumericalError(ArithmeticError):
    """Raised when a factorization that should succeed does not."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


# --------------------------------------------------------------------------
# Topology and selection
# --------------------------------------------------------------------------

def as_topology(S, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Validate ``S`` as a binary indicator matrix and return it as int8."""
    S = np.asarray(S)
    if S.ndim != 2:
        raise ContractError(f"topology must be 2-D, got shape {S.shape}")
    if not np.all((S == 0) | (S == 1)):
        raise ContractError("topology entries must be 0 or 1")
    if shape is not None and S.shape != tuple(shape):
        raise ContractError(f"topology shape {S.shape} != expected {shape}")
    return S.astype(np.int8, copy=True)


def empty_topology(n_rows: int, n_cols: int) -> np.ndarray:
    return np.zeros((n_rows, n_cols), dtype=np.int8)


def _active(row) -> np.ndarray:
    row = np.asarray(row)
    if row.ndim != 1:
        raise ContractError("topology row must be 1-D")
    return np.flatnonzero(row)


def select_vector(z, row) -> np.ndarray:
    """Return ``z[S_i]``: entries of ``z`` at the active indices of ``row``."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.shape[0] != np.asarray(row).shape[0]:
        raise ContractError(f"vector of length {z.shape} does not match row of length {np.shape(row)}")
    return z[_active(row)]


def select_square(P, row) -> np.ndarray:
    """Principal submatrix of square ``P`` on the active indices of ``row``."""
    P = np.asarray(P, dtype=float)
    n = np.asarray(row).shape[0]
    if P.ndim != 2 or P.shape != (n, n):
        raise ContractError(f"matrix of shape {P.shape} does not match row of length {n}")
    idx = _active(row)
    return P[np.ix_(idx, idx)]


def select_rows(P, row) -> np.ndarray:
    """Restrict the rows of a rectangular ``P`` (n x m) to the active indices."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != np.asarray(row).shape[0]:
        raise ContractError("row selection dimension mismatch")
    return P[_active(row), :]


def select_cols(P, row) -> np.ndarray:
    """Restrict the columns of a rectangular ``P`` (m x n) to the active indices."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != np.asarray(row).shape[0]:
        raise ContractError("column selection dimension mismatch")
    return P[:, _active(row)]


# --------------------------------------------------------------------------
# Closed-form Gaussian row terms
# --------------------------------------------------------------------------

def gaussian_row_terms(gram, cross, S, noise, prior_diag, rows=None):
    """Per-row quadratic and log-determinant terms of the integrated Gaussian.

    For each selected row ``i`` with active set ``S_i`` this evaluates

        quad_i   = b_i[S_i]^T (M_i[S_i]^{-1} + gram[S_i] / noise_i)^{-1} b_i[S_i]
        logdet_i = log det(M_i[S_i]^{-1} + gram[S_i] / noise_i) + log det M_i[S_i]

    where ``b_i = cross[i]`` and ``M_i = diag(prior_diag[i])``. Empty selections
    give ``quad = 0`` and ``logdet = 0``.

    All rows are done in one batched Cholesky by padding the inactive block
    with the identity.
    """
    gram = np.asarray(gram, dtype=float)
    cross = np.asarray(cross, dtype=float)
    S = np.asarray(S)
    noise = np.asarray(noise, dtype=float)
    prior_diag = np.asarray(prior_diag, dtype=float)
    if rows is None:
        rows = np.arange(S.shape[0])
    rows = np.atleast_1d(rows)
    k = gram.shape[0]

    mask = S[rows].astype(bool)
    pd = prior_diag[rows]
    inner = gram[None, :, :] / noise[rows, None, None]
    diag_idx = np.arange(k)
    inner[:, diag_idx, diag_idx] += 1.0 / pd
    outer = mask[:, :, None] & mask[:, None, :]
    eye = np.broadcast_to(np.eye(k), inner.shape)
    inner = np.where(outer, inner, eye)
    b = np.where(mask, cross[rows], 0.0)

    try:
        chol = np.linalg.cholesky(inner)
    except np.linalg.LinAlgError:
        for j, r in enumerate(rows):
            try:
                np.linalg.cholesky(inner[j])
            except np.linalg.LinAlgError:
                raise NumericalError(f"inner matrix of row {r} is not positive definite", row=int(r))
        raise  # pragma: no cover
    w = np.linalg.solve(chol, b[:, :, None])[:, :, 0]
    quad = np.einsum("ij,ij->i", w, w)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    logdet += np.where(mask, np.log(pd), 0.0).sum(axis=1)
    return quad, logdet


# --------------------------------------------------------------------------
# Priors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometricTopologyPrior:
    """log p(S) = |S|_0 * log(rho)."""

    rho: float = 0.01
    factorizes: bool = field(default=True, init=False)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ContractError(f"rho must lie in (0, 1), got {self.rho}")

    def __call__(self, S) -> float:
        return float(np.count_nonzero(S)) * np.log(self.rho)

    def row(self, S_row) -> float:
        return float(np.count_nonzero(S_row)) * np.log(self.rho)


@dataclass(frozen=True)
class ExclusiveOutputPrior:
    """Geometric prior over an n x 2n topology where each regulator ``k`` may act
    through ``x_k`` or through its hidden output ``z_k`` but not both.

    Equivalent to a ternary n x n matrix with entries {off, via-x, via-z}.
    """

    rho: float = 0.01
    factorizes: bool = field(default=True, init=False)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ContractError(f"rho must lie in (0, 1), got {self.rho}")

    def row(self, S_row) -> float:
        S_row = np.asarray(S_row)
        n = S_row.shape[0] // 2
        if np.any(S_row[:n] & S_row[n:]):
            return -np.inf
        return float(np.count_nonzero(S_row)) * np.log(self.rho)

    def __call__(self, S) -> float:
        return float(sum(self.row(r) for r in np.asarray(S)))


@dataclass(frozen=True)
class InverseGamma:
    """Inverse-gamma log density up to a constant; shape = scale = 0 gives 1/x."""

    shape: float = 0.0
    scale: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -(self.shape + 1.0) * np.log(x) - self.scale / x
        return np.where(x > 0, out, -np.inf)


@dataclass(frozen=True)
class QuadraticVariationPrior:
    """p(m) proportional to u (c - u) exp(-u), u = m / v, on 0 < u < c.

    ``v`` is the per-row quadratic-variation scale of the data.
    """

    scale: np.ndarray
    upper: float = 20.0

    def __call__(self, m):
        u = np.asarray(m, dtype=float) / np.asarray(self.scale, dtype=float)
        inside = (u > 0) & (u < self.upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(u) + np.log(self.upper - u) - u
        return np.where(inside, out, -np.inf)


def flat_log_prior(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 0.0, -np.inf)


PROPOSAL_KINDS = ("flip", "add-remove")

# vague but proper; the limiting 1/x prior leaves the r posterior improper at 0
NONINFORMATIVE = InverseGamma(1e-3, 1e-3)


@dataclass
class PriorConfig:
    """Priors and structure-proposal settings shared by every sampler.

    ``magnitude_scale_prior`` may be ``"qv"`` (resolved against the data at fit
    time), ``"flat"``, or any callable returning elementwise log densities.
    """

    rho: float = 0.01
    topology_prior: Callable[[np.ndarray], float] | None = None
    magnitude_scale_prior: Any = "qv"
    process_noise_prior: Callable = NONINFORMATIVE
    measurement_noise_prior: Callable = NONINFORMATIVE
    proposal_kind: str = "flip"
    p_add: float = 0.4
    p_remove: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ContractError(f"rho must lie in (0, 1), got {self.rho}")
        if self.proposal_kind not in PROPOSAL_KINDS:
            raise ContractError(f"unknown proposal kind {self.proposal_kind!r}")
        if self.proposal_kind == "add-remove":
            if not (self.p_add > 0 and self.p_remove > 0 and self.p_add + self.p_remove <= 1):
                raise ContractError("add-remove needs p_add > 0, p_remove > 0, p_add + p_remove <= 1")
        if self.topology_prior is None:
            self.topology_prior = GeometricTopologyPrior(self.rho)

    def log_topology_prior(self, S) -> float:
        return float(self.topology_prior(S))

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        d = dict(d)
        kw: dict[str, Any] = {}
        for key in ("rho", "proposal_kind", "p_add", "p_remove"):
            if key in d:
                kw[key] = d.pop(key)
        for key in ("process_noise_prior", "measurement_noise_prior"):
            if key in d:
                spec = d.pop(key)
                kw[key] = InverseGamma(float(spec.get("shape", 0.0)), float(spec.get("scale", 0.0)))
        if "magnitude_scale_prior" in d:
            val = d.pop("magnitude_scale_prior")
            if val not in ("qv", "flat"):
                raise ContractError(f"unknown magnitude_scale_prior {val!r}")
            kw["magnitude_scale_prior"] = val
        exclusive = d.pop("exclusive_output", False)
        if d:
            raise ContractError(f"unknown prior keys: {sorted(d)}")
        cfg = cls(**kw)
        if exclusive:
            cfg.topology_prior = ExclusiveOutputPrior(cfg.rho)
        return cfg


def log_topology_prior(S, cfg: PriorConfig) -> float:
    return cfg.log_topology_prior(S)


# --------------------------------------------------------------------------
# Randomness
# --------------------------------------------------------------------------

def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for one chain or temperature."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))
