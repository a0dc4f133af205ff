import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsedyn.bench import (
    NoiseSpec,
    RingSpec,
    area_pr,
    confusion_at,
    empirical_table,
    enumerate_posterior,
    generate_transport_matrix,
    pr_curve,
    score_auroc_auprec,
    simulate_ou,
    simulate_series,
    topology_index,
    total_variation,
)
from sparsedyn.core import ContractError, NumericalError, PriorConfig, rng_stream
from sparsedyn.regression import RegressionData


def test_default_ring_count():
    A, truth = generate_transport_matrix(RingSpec())
    assert A.shape == (100, 100)
    assert truth.sum() == 204
    assert np.allclose(A.sum(axis=0), 0.0)


def test_single_ring_example():
    A, truth = generate_transport_matrix(RingSpec([3], inter_ring_edges=[]))
    assert np.array_equal(A, np.array([[-1, 0, 1], [1, -1, 0], [0, 1, -1]]))


def test_desk_ring_count_and_weights():
    spec = RingSpec([8, 12], inter_ring_edges=[(0, 8, 2.5), (9, 1)])
    A, truth = generate_transport_matrix(spec)
    assert A[8, 0] == 2.5 and A[1, 9] == 1.0
    assert truth.sum() == 20 + 2 + 20
    assert np.allclose(A.sum(axis=0), 0.0)
    assert generate_transport_matrix(RingSpec([8, 12]))[1].sum() == 44


def test_overlapping_edges_rejected():
    with pytest.raises(ContractError):
        generate_transport_matrix(RingSpec([4], inter_ring_edges=[(0, 1)]))
    with pytest.raises(ContractError):
        generate_transport_matrix(RingSpec([4], inter_ring_edges=[(2, 2)]))


def test_generator_is_deterministic():
    a1, _ = generate_transport_matrix(RingSpec([5, 7]))
    a2, _ = generate_transport_matrix(RingSpec([5, 7]))
    assert np.array_equal(a1, a2)


def test_noise_spec_positive():
    with pytest.raises(ContractError):
        NoiseSpec(ou_theta=0.0)


def test_ou_stationary_variance():
    u = simulate_ou(10.0, 4.0, 1, 1_000_000, 1e-3, rng_stream(0))
    assert u.var() == pytest.approx(0.2, rel=0.05)


def test_simulation_sampling_and_reproducibility():
    A, _ = generate_transport_matrix(RingSpec([3, 3], inter_ring_edges=[(0, 3)]))
    s1 = simulate_series(A, NoiseSpec(), 10.0, 0.5, rng_stream(1), n_series=2)
    s2 = simulate_series(A, NoiseSpec(), 10.0, 0.5, rng_stream(1), n_series=2)
    assert [v.shape for v in s1.series.values] == [(6, 21), (6, 21)]
    for a, b in zip(s1.series.values, s2.series.values):
        assert np.array_equal(a, b)
    assert simulate_series(A, NoiseSpec(), 10.0, 1.0, rng_stream(1)).series.values[0].shape == (6, 11)
    with pytest.raises(ContractError):
        simulate_series(A, NoiseSpec(), 10.0, 0.5, rng_stream(1), fine_dt=0.05)


def test_simulation_zero_drift_stiff_noise_stays_put():
    A = np.zeros((2, 2))
    noise = NoiseSpec(ou_theta=1e4, meas_sd=1e-6)
    sim = simulate_series(A, noise, 1.0, 0.5, rng_stream(2), noise_mode="increment", fine_dt=1e-5)
    x = sim.true_fine[0]
    assert np.abs(x - x[:, :1]).max() < 0.1


def test_simulation_overflow_reports():
    A = np.array([[400.0]])
    with pytest.raises(NumericalError):
        simulate_series(A, NoiseSpec(), 10.0, 0.5, rng_stream(0))


def test_euler_weak_order_one():
    """Halving the step changes E[x(T)^2] by O(h) for the scalar OU-driven system."""
    A = np.array([[-1.0]])
    noise = NoiseSpec(init_sd=1.0, meas_sd=1e-9)
    m2 = []
    for fine in (0.01, 0.005, 0.0025):
        rng = rng_stream(7)
        vals = np.array([simulate_series(A, noise, 1.0, 1.0, rng, fine_dt=fine, n_step=2,
                                         noise_mode="rate").true_fine[0][0, -1] for _ in range(500)])
        m2.append(np.mean(vals**2))
    d1, d2 = abs(m2[0] - m2[1]), abs(m2[1] - m2[2])
    assert d2 < d1 + 0.02
    assert d1 < 0.1


def test_scores_perfect_and_uninformative():
    truth = np.array([[1, 0], [0, 1]])
    assert score_auroc_auprec(truth.astype(float), truth) == (1.0, 1.0)
    assert score_auroc_auprec(np.full((2, 2), 0.3), truth)[0] == 0.5


def test_scores_degenerate_truth():
    with pytest.raises(ContractError):
        score_auroc_auprec(np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ContractError):
        score_auroc_auprec(np.array([np.nan, 1.0]), np.array([0, 1]))


def pair_auroc(s, t):
    pos, neg = s[t == 1], s[t == 0]
    diff = pos[:, None] - neg[None, :]
    return float(np.mean((diff > 0) + 0.5 * (diff == 0)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_auroc_matches_pair_counting(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 2, 20)
    t[0], t[1] = 0, 1
    s = rng.integers(0, 6, 20) / 5.0  # plenty of ties
    assert score_auroc_auprec(s, t)[0] == pytest.approx(pair_auroc(s, t), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_scores_invariant_under_monotone_maps(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 2, 30)
    t[:2] = [0, 1]
    s = rng.integers(0, 8, 30) / 7.0
    base = score_auroc_auprec(s, t)
    for f in (np.exp, lambda x: 3 * x**3 + x, lambda x: np.arctan(5 * x)):
        assert score_auroc_auprec(f(s), t) == pytest.approx(base, abs=1e-12)


def test_auprec_step_interpolation():
    s = np.array([0.9, 0.8, 0.7, 0.6])
    t = np.array([1, 0, 1, 0])
    rec, prec = pr_curve(s, t)[:2]
    assert area_pr(rec, prec) == pytest.approx(0.5 * 1.0 + 0.5 * (2 / 3))


def test_confusion_counts():
    c = confusion_at(np.array([0.9, 0.2, 0.6, 0.4]), np.array([1, 1, 0, 0]))
    assert c == {"tp": 1, "fp": 1, "fn": 1, "tn": 1}


def test_enumeration_normalized_single_entry():
    d = RegressionData([[1.0, 2.0]], [[0.5, 0.4]], 1.0, 1.0)
    post = enumerate_posterior(d, PriorConfig())
    assert post.probabilities.size == 2
    assert post.probabilities.sum() == pytest.approx(1.0)


def test_enumeration_concentrates_on_support():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(3, 20))
    Y = np.array([[1.0, -1.0, 2.0]]) @ X + 1e-2 * rng.normal(size=(1, 20))
    post = enumerate_posterior(RegressionData(X, Y, 1e-4, 4.0), PriorConfig())
    assert (post.edge_marginals > 0.95).all()


def test_enumeration_size_bound():
    d = RegressionData(np.ones((17, 3)), np.ones((1, 3)), 1.0, 1.0)
    with pytest.raises(ContractError):
        enumerate_posterior(d, PriorConfig())


def test_bit_layout_and_tables():
    d = RegressionData(np.eye(3), np.ones((1, 3)), 1.0, 1.0)
    post = enumerate_posterior(d, PriorConfig())
    for k, S in enumerate(post.topologies):
        assert topology_index(S) == k == post.index_of(S)
    tab = empirical_table([post.topologies[3], post.topologies[3], post.topologies[5]], 3)
    assert tab[3] == pytest.approx(2 / 3)
    assert total_variation([1, 0], [0, 1]) == 1.0
