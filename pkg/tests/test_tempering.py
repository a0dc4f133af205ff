import numpy as np
import pytest

from sparsedyn.core import ContractError, rng_stream
from sparsedyn.dynamic import SamplerConfig, Schedule, TimeSeriesSet, run_dynamic_mcmc
from sparsedyn.tempering import (
    Ladder,
    attempt_swap,
    geometric_ladder,
    run_heuristic_tempering,
    run_parallel_tempering,
    swap_log_ratio,
    swap_pairs,
    tempered_accept,
)


def test_tempered_accept_frequency():
    rng = rng_stream(1)
    hits = sum(tempered_accept(-2.0, 0.0, 0.5, rng) for _ in range(100000))
    assert hits / 100000 == pytest.approx(np.exp(-1.0), rel=0.01)


def test_tempered_accept_trivial_cases():
    rng = rng_stream(2)
    assert all(tempered_accept(1.0, 1.0, 0.3, rng) for _ in range(100))
    assert all(tempered_accept(2.0, 1.0, 1.0, rng) for _ in range(100))
    with pytest.raises(ContractError):
        tempered_accept(0.0, 0.0, 0.0, rng)
    with pytest.raises(ContractError):
        tempered_accept(0.0, 0.0, 1.5, rng)


class _Toy:
    """Discrete chain on {0..K-1} with log target ``lp``; enough for swap tests."""

    def __init__(self, lp, x, rng):
        self.lp, self.x, self.rng = lp, x, rng

    @property
    def log_p(self):
        return float(self.lp[self.x])

    def state(self):
        return {"x": self.x}

    def set_state(self, st):
        self.x = st["x"]

    def step(self, beta):
        y = (self.x + self.rng.choice([-1, 1])) % len(self.lp)
        if tempered_accept(self.lp[y], self.lp[self.x], beta, self.rng):
            self.x = y


def test_swap_is_an_involution_and_equal_cases_always_swap():
    lp = np.array([0.0, -1.0, -3.0])
    rng = rng_stream(3)
    a, b = _Toy(lp, 0, rng), _Toy(lp, 2, rng)
    # equal temperatures: ratio 0, always swapped; twice restores the states
    assert attempt_swap(a, b, 0.7, 0.7, rng) and (a.x, b.x) == (2, 0)
    assert attempt_swap(a, b, 0.7, 0.7, rng) and (a.x, b.x) == (0, 2)
    c, d = _Toy(lp, 1, rng), _Toy(lp, 1, rng)
    assert all(attempt_swap(c, d, 1.0, 0.5, rng) for _ in range(50))
    assert swap_log_ratio(-1.0, -3.0, 1.0, 0.5) == pytest.approx(-1.0)


def test_swap_pairs_alternate():
    assert swap_pairs(5, 0) == [(0, 1), (2, 3)]
    assert swap_pairs(5, 1) == [(1, 2), (3, 4)]
    assert swap_pairs(1, 0) == []


def test_two_temperature_toy_keeps_cold_target():
    lp = np.array([0.0, -4.0, -6.0, -4.0, 0.5, -5.0])  # two separated modes
    target = np.exp(lp - lp.max())
    target /= target.sum()
    rng = rng_stream(4)
    chains = [_Toy(lp, 0, rng), _Toy(lp, 0, rng)]
    betas = [1.0, 0.3]
    counts = np.zeros(len(lp))
    for it in range(200000):
        for c, b in zip(chains, betas):
            c.step(b)
        if it % 5 == 0:
            attempt_swap(chains[0], chains[1], betas[0], betas[1], rng)
        counts[chains[0].x] += 1
    assert 0.5 * np.abs(counts / counts.sum() - target).sum() < 0.02


def test_ladder_validation_and_default():
    lad = Ladder()
    assert lad.betas.size == 16
    assert np.allclose(1.0 / lad.betas, 1.05 ** np.arange(16))
    assert lad.swap_period == 10
    assert np.allclose(geometric_ladder(3, 2.0), [1.0, 0.5, 0.25])
    for bad in ([0.9, 0.5], [1.0, 1.0], [1.0, 0.5, 0.7], [1.0, -0.1], []):
        with pytest.raises(ContractError):
            Ladder(np.array(bad, dtype=float))
    with pytest.raises(ContractError):
        Ladder(swap_period=0)


def _small_series():
    rng = rng_stream(5)
    steps = rng.normal(0.0, 0.5, (2, 12))
    Y = np.concatenate([np.zeros((2, 1)), np.cumsum(steps, axis=1)], axis=1)
    return TimeSeriesSet([Y], 0.5)


def test_single_temperature_ladder_reproduces_plain_chain():
    ts = _small_series()
    cfg = SamplerConfig(n_step=3)
    sched = Schedule(60, 40, 2)
    pt = run_parallel_tempering(ts, config=cfg, ladder=Ladder(np.array([1.0])), schedule=sched, seed=9)
    plain = run_dynamic_mcmc(ts, config=cfg, schedule=sched, rng=rng_stream(9, 0), mode="plain")
    assert np.array_equal(pt.edge_probabilities, plain.edge_probabilities)
    assert all(np.array_equal(a, b) for a, b in zip(pt.record.samples, plain.record.samples))
    assert np.allclose(pt.hyper_trace["q"], plain.hyper_trace["q"])


def test_parallel_tempering_records_cold_chain_only():
    ts = _small_series()
    res = run_parallel_tempering(ts, config=SamplerConfig(n_step=3), ladder=Ladder(geometric_ladder(3, 1.3), 2),
                                 schedule=Schedule(50, 20, 1), seed=3)
    assert res.record.n_retained == 50
    assert all(info["beta"] == 1.0 for info in res.record.info)
    assert len(res.extras["swap_acceptance"]) == 2
    assert all(0.0 <= a <= 1.0 for a in res.extras["swap_acceptance"])


def test_heuristic_tempering_at_beta_one_is_untempered_alternation():
    ts = _small_series()
    sched = Schedule(40, 20, 1)
    a = run_heuristic_tempering(ts, config=SamplerConfig(n_step=3), beta_struct=1.0, schedule=sched,
                                rng=rng_stream(6))
    b = run_dynamic_mcmc(ts, config=SamplerConfig(n_step=3, mode="heuristic", beta_struct=1.0), schedule=sched,
                         rng=rng_stream(6))
    assert np.array_equal(a.edge_probabilities, b.edge_probabilities)
    with pytest.raises(ContractError):
        run_heuristic_tempering(ts, beta_struct=0.0)
