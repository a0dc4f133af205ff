"""Parallel tempering and the structure-only heuristic tempering."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, PriorConfig, rng_stream
from .dynamic import (
    DynamicChain,
    DynamicResult,
    SamplerConfig,
    Schedule,
    TimeSeriesSet,
    _Collector,
    run_dynamic_mcmc,
)


@dataclass
class Ladder:
    betas: np.ndarray = field(default_factory=lambda: geometric_ladder())
    swap_period: int = 10

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float)
        b = self.betas
        if b.ndim != 1 or b.size == 0:
            raise ContractError("ladder needs at least one temperature")
        if b[0] != 1.0 or np.any(b <= 0) or np.any(b > 1):
            raise ContractError("ladder must start at beta = 1 and stay in (0, 1]")
        if np.any(np.diff(b) >= 0):
            raise ContractError("ladder must be strictly decreasing")
        if self.swap_period < 1:
            raise ContractError("swap_period must be >= 1")


def geometric_ladder(size: int = 16, ratio: float = 1.05) -> np.ndarray:
    """``1 / beta_j = ratio ** j`` for j = 0 .. size - 1."""
    return ratio ** -np.arange(size, dtype=float)


def tempered_accept(log_p_new: float, log_p_old: float, beta: float, rng) -> bool:
    if not 0.0 < beta <= 1.0:
        raise ContractError("beta must lie in (0, 1]")
    delta = beta * (log_p_new - log_p_old)
    if delta >= 0:
        return True
    return bool(np.log(rng.random()) < delta)


def swap_log_ratio(log_p_j: float, log_p_j1: float, beta_j: float, beta_j1: float) -> float:
    return (beta_j - beta_j1) * (log_p_j1 - log_p_j)


def attempt_swap(chain_j, chain_j1, beta_j: float, beta_j1: float, rng) -> bool:
    """Exchange the full states of two chains with the replica-exchange rule.

    Chains are anything with ``log_p``, ``state()`` and ``set_state()``.
    """
    log_a = swap_log_ratio(chain_j.log_p, chain_j1.log_p, beta_j, beta_j1)
    accept = log_a >= 0 or np.log(rng.random()) < log_a
    if accept:
        sj, sj1 = chain_j.state(), chain_j1.state()
        chain_j.set_state(sj1)
        chain_j1.set_state(sj)
    return bool(accept)


def swap_pairs(n_chains: int, phase: int) -> list:
    """Adjacent pairs (0,1), (2,3), ... on even phases; (1,2), (3,4), ... on odd."""
    start = phase % 2
    return [(j, j + 1) for j in range(start, n_chains - 1, 2)]


def run_parallel_tempering(series: TimeSeriesSet, prior: PriorConfig | None = None,
                           config: SamplerConfig | None = None, ladder: Ladder | None = None,
                           schedule: Schedule | None = None, seed: int = 0) -> DynamicResult:
    """Lockstep replica exchange; only the beta = 1 chain is collected.

    Chain ``j`` draws from ``rng_stream(seed, j)``; swap decisions use a
    separate coordinator stream, so a one-temperature ladder reproduces
    :func:`run_dynamic_mcmc` with ``rng_stream(seed, 0)`` draw for draw.
    """
    config = config if config is not None else SamplerConfig()
    ladder = ladder if ladder is not None else Ladder()
    schedule = schedule if schedule is not None else Schedule()
    betas = ladder.betas
    chains = [DynamicChain(series, prior, config, rng_stream(seed, j)) for j in range(betas.size)]
    coord = rng_stream(seed, 1_000_003)
    col = _Collector(chains[0], config.keep_samples)
    swap_acc = np.zeros(max(betas.size - 1, 0))
    swap_att = np.zeros(max(betas.size - 1, 0))
    phase = 0
    for it in range(1, schedule.total + 1):
        burning = it <= schedule.burn_in
        for j, chain in enumerate(chains):
            chain.step("plain", betas[j], None if (burning or j > 0) else col.record)
            if burning and it % config.adapt_interval == 0:
                chain.adapt()
        if betas.size > 1 and it % ladder.swap_period == 0:
            for a, b in swap_pairs(betas.size, phase):
                ok = attempt_swap(chains[a], chains[b], betas[a], betas[b], coord)
                swap_att[a] += 1
                swap_acc[a] += ok
            phase += 1
        if not burning and (it - schedule.burn_in) % schedule.thin == 0:
            col.collect(chains[0], it, float(betas[0]))
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(swap_att > 0, swap_acc / np.maximum(swap_att, 1), np.nan)
    return col.result(chains[0], swap_acceptance=rates.tolist(), betas=betas.tolist())


def run_heuristic_tempering(series: TimeSeriesSet, prior: PriorConfig | None = None,
                            config: SamplerConfig | None = None, beta_struct: float = 1.0 / 1.5,
                            schedule: Schedule | None = None, rng=None) -> DynamicResult:
    """Temper only the structure move; trajectory moves stay at beta = 1."""
    if not 0.0 < beta_struct <= 1.0:
        raise ContractError("beta_struct must lie in (0, 1]")
    config = config if config is not None else SamplerConfig()
    cfg = SamplerConfig(**{**config.__dict__, "mode": "heuristic", "beta_struct": beta_struct})
    return run_dynamic_mcmc(series, prior, cfg, schedule, rng)
