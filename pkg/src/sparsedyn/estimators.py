"""scikit-learn style wrappers around the samplers and the EM-Lasso baseline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baseline import LAMBDA_GRID, run_em_lasso
from .core import ContractError, PriorConfig, rng_stream
from .dynamic import SamplerConfig, Schedule, TimeSeriesSet, run_dynamic_mcmc
from .regression import GramCache, RegressionData, posterior_mean_magnitudes, run_regression_mcmc
from .tempering import Ladder, run_parallel_tempering


def _series_list(series):
    """Accept a TimeSeriesSet, one (n, N+1) array or a list of them."""
    if isinstance(series, TimeSeriesSet):
        return series.values
    if isinstance(series, np.ndarray):
        series = [series]
    out = [check_array(np.asarray(s, dtype=float), ensure_min_features=2) for s in series]
    if not out:
        raise ContractError("need at least one series")
    return out


class SparseRegressionSelector(BaseEstimator):
    """Bayesian variable selection for ``Y = H X + noise`` with magnitudes integrated out.

    ``fit`` takes samples in rows, as scikit-learn does: ``X`` is (N, n) and
    ``y`` is (N,) or (N, m). After fitting, ``edge_probabilities_`` is the
    (m, n) posterior inclusion matrix and ``coef_`` the posterior mean of
    ``H`` given the maximum a posteriori topology among the retained samples.
    """

    def __init__(self, noise_var=1.0, prior_var=1.0, rho=0.01, proposal="flip",
                 p_add=0.4, p_remove=0.4, n_samples=5000, burn_in=3000, thin=10,
                 random_state=None):
        self.noise_var = noise_var
        self.prior_var = prior_var
        self.rho = rho
        self.proposal = proposal
        self.p_add = p_add
        self.p_remove = p_remove
        self.n_samples = n_samples
        self.burn_in = burn_in
        self.thin = thin
        self.random_state = random_state

    def _prior(self) -> PriorConfig:
        return PriorConfig(rho=self.rho, proposal_kind=self.proposal,
                           p_add=self.p_add, p_remove=self.p_remove)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        Y = y.reshape(len(y), -1)
        data = RegressionData(X.T, Y.T, self.noise_var, self.prior_var)
        rng = rng_stream(0 if self.random_state is None else int(self.random_state))
        probs, record = run_regression_mcmc(data, self._prior(), self.n_samples,
                                            self.burn_in, self.thin, rng)
        self.edge_probabilities_ = probs
        self.record_ = record
        self.n_features_in_ = X.shape[1]
        best = int(np.argmax(record.log_scores)) if record.log_scores else None
        S = record.samples[best] if best is not None else (probs > 0.5).astype(np.int8)
        self.topology_ = S
        self.coef_ = posterior_mean_magnitudes(data, GramCache.from_data(data), S)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = X @ self.coef_.T
        return out[:, 0] if out.shape[1] == 1 else out


class DynamicTopologySampler(BaseEstimator):
    """Posterior edge probabilities of the dynamics matrix of ``dx = A x dt + dw``.

    ``fit`` takes one (n, N+1) array of equally spaced samples, a list of
    them, or a :class:`TimeSeriesSet`. ``mode`` chooses the sampler; "ptemp"
    runs the replica-exchange ladder given by ``n_temps`` and ``temp_ratio``.
    """

    def __init__(self, dt=1.0, mode="heuristic", n_step=5, rho=0.01, eps=0.2,
                 n_samples=2000, burn_in=3000, thin=10, n_temps=16, temp_ratio=1.05,
                 meas_var=None, output_dynamics=False, random_state=None):
        self.dt = dt
        self.mode = mode
        self.n_step = n_step
        self.rho = rho
        self.eps = eps
        self.n_samples = n_samples
        self.burn_in = burn_in
        self.thin = thin
        self.n_temps = n_temps
        self.temp_ratio = temp_ratio
        self.meas_var = meas_var
        self.output_dynamics = output_dynamics
        self.random_state = random_state

    def fit(self, series, y=None):
        if isinstance(series, TimeSeriesSet):
            ts = series
        else:
            ts = TimeSeriesSet(_series_list(series), float(self.dt), meas_var=self.meas_var)
        cfg = SamplerConfig(n_step=self.n_step, eps=self.eps, mode=self.mode,
                            output_dynamics=self.output_dynamics)
        prior = PriorConfig(rho=self.rho)
        schedule = Schedule(self.n_samples, self.burn_in, self.thin)
        seed = 0 if self.random_state is None else int(self.random_state)
        if self.mode == "ptemp":
            ladder = Ladder(self.temp_ratio ** -np.arange(self.n_temps, dtype=float))
            res = run_parallel_tempering(ts, prior, cfg, ladder, schedule, seed)
        else:
            res = run_dynamic_mcmc(ts, prior, cfg, schedule, rng_stream(seed))
        self.result_ = res
        self.edge_probabilities_ = res.edge_probabilities
        self.trajectory_mean_ = res.trajectory_mean
        self.acceptance_ = res.acceptance
        return self


class EMLasso(BaseEstimator):
    """EM-Lasso baseline; ``lam=None`` keeps every fit over ``lambda_grid``.

    Without ground truth there is no way to pick the best penalty, so with a
    grid ``coef_`` is the fit for the first grid value and ``fits_`` holds all
    of them keyed by penalty.
    """

    def __init__(self, dt=1.0, lam=1.0, lambda_grid=LAMBDA_GRID, q=0.04, r=0.0016,
                 n_step=5, lag=2, max_iter=200, tol=1e-6):
        self.dt = dt
        self.lam = lam
        self.lambda_grid = lambda_grid
        self.q = q
        self.r = r
        self.n_step = n_step
        self.lag = lag
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, series, y=None):
        values = _series_list(series)
        grid = [self.lam] if self.lam is not None else list(self.lambda_grid)
        self.fits_ = {lam: run_em_lasso(values, float(self.dt), lam, self.q, self.r, self.n_step,
                                        self.lag, self.max_iter, self.tol) for lam in grid}
        self.coef_ = self.fits_[grid[0]].A
        return self

    def magnitudes(self):
        check_is_fitted(self, "coef_")
        return np.abs(self.coef_)
