"""Scikit-learn style estimators over multi-environment data.

Each estimator fits on pooled arrays ``(X, y)`` plus an ``env`` label vector
passed to ``fit``, mirroring ``sample_weight``-style fit parameters. With an
explicit ``reference`` label the data is used as is (models pass through the
origin); with ``reference=None`` the minimal-covariance environment is chosen
and all environments are recentered by its means, and predictions undo the
centering.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .estimate import SolverConfig, fit_baseline, fit_worst_case_robust, reference_reduction
from .scm import Dataset

__all__ = [
    "PooledOLSRegressor",
    "AnchorRegressor",
    "DRIGRegressor",
    "WorstCaseRobustRegressor",
]


class _MultiEnvRegressor(RegressorMixin, BaseEstimator):
    """Shared fit/predict plumbing; subclasses provide ``_fit_dataset``."""

    def _build_dataset(self, X, y, env, reference):
        X, y = check_X_y(X, y, y_numeric=True)
        if env is None:
            raise ValueError("fit requires per-sample environment labels via env=")
        env = np.asarray(env)
        if env.shape[0] != y.shape[0]:
            raise ValueError("env must have one label per sample")
        if reference is not None:
            data = Dataset.from_arrays(X, y, env, reference)
            self.x_offset_ = np.zeros(X.shape[1])
            self.y_offset_ = 0.0
        else:
            labels = sorted({str(e) for e in env})
            data = Dataset.from_arrays(X, y, env, labels[0])
            data = reference_reduction(data)
            raw = Dataset.from_arrays(X, y, env, labels[0])
            ref_x, ref_y = raw.environment(data.reference_index)
            self.x_offset_ = ref_x.mean(axis=0)
            self.y_offset_ = float(ref_y.mean())
        self.reference_label_ = data.labels[data.reference_index]
        self.n_features_in_ = X.shape[1]
        return data

    def fit(self, X, y, env=None, reference=None):
        data = self._build_dataset(X, y, env, reference)
        self.coef_ = self._fit_dataset(data)
        self.intercept_ = self.y_offset_ - float(self.x_offset_ @ self.coef_)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_


class PooledOLSRegressor(_MultiEnvRegressor):
    """Ordinary least squares on the pooled environments (through the origin)."""

    def _fit_dataset(self, data):
        return fit_baseline(data, "ols")


class AnchorRegressor(_MultiEnvRegressor):
    """Anchor regression with environment indicators as discrete anchors.

    Parameters
    ----------
    gamma : float
        Shift-strength parameter; ``gamma=1`` recovers pooled OLS.
    """

    def __init__(self, gamma=1.0):
        self.gamma = gamma

    def _fit_dataset(self, data):
        return fit_baseline(data, "anchor", gamma=self.gamma)


class DRIGRegressor(_MultiEnvRegressor):
    """Robust baseline protecting against pooled mean-plus-variance shifts.

    Parameters
    ----------
    gamma : float
        Shift-strength parameter; ``gamma=1`` recovers pooled OLS.
    dominance_tol : float
        Tolerance for the reference-dominance validity check.
    """

    def __init__(self, gamma=1.0, dominance_tol=1e-2):
        self.gamma = gamma
        self.dominance_tol = dominance_tol

    def _fit_dataset(self, data):
        return fit_baseline(data, "drig", gamma=self.gamma, dominance_tol=self.dominance_tol)


class WorstCaseRobustRegressor(_MultiEnvRegressor):
    """Minimizer of the empirical worst-case robust loss.

    Protects against test shifts of strength ``gamma`` along the training
    shift directions and ``gamma_prime`` along unseen directions, where the
    causal coefficient is only norm-bounded.

    Parameters
    ----------
    gamma, gamma_prime : float
        Strengths of the seen and unseen test shift bounds.
    c_norm : float
        Norm budget for the causal coefficient; sets the kernel budget to
        sqrt(c_norm^2 - |identified part|^2) unless ``c_ker`` is given.
    c_ker : float, optional
        Direct kernel norm budget, bypassing ``c_norm``.
    m_test : array-like, optional
        Known test-shift bound to split into seen/unseen directions. Without
        it, the unseen projection is the full complement of the estimated
        shift span.
    rank : int or float
        Rank specification for the shift-span estimate: exact rank when an
        integer, relative eigenvalue threshold when a float in (0, 1).
    unseen_rank : int, optional
        Exact rank for the unseen part of ``m_test`` when it is known.
    m_seen_mode : {"pooled", "decompose"}
        Source of the seen-shift bound: the pooled relative-shift bound, or
        the decomposition of ``m_test``.
    max_iters, rel_tol, step_shrink, restart
        Composite solver settings.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    nuisance_ : NuisanceEstimates
    minimax_ : float
        Attained loss, an estimate of the minimax hardness of the instance.
    n_iter_ : int
    converged_ : bool
    """

    def __init__(
        self,
        gamma=0.0,
        gamma_prime=0.0,
        c_norm=1.0,
        c_ker=None,
        m_test=None,
        rank=1e-8,
        unseen_rank=None,
        m_seen_mode="pooled",
        max_iters=50_000,
        rel_tol=1e-10,
        step_shrink=0.5,
        restart=True,
    ):
        self.gamma = gamma
        self.gamma_prime = gamma_prime
        self.c_norm = c_norm
        self.c_ker = c_ker
        self.m_test = m_test
        self.rank = rank
        self.unseen_rank = unseen_rank
        self.m_seen_mode = m_seen_mode
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.step_shrink = step_shrink
        self.restart = restart

    def _fit_dataset(self, data):
        cfg = SolverConfig(
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            step_shrink=self.step_shrink,
            restart=self.restart,
        )
        fit = fit_worst_case_robust(
            data,
            m_test=self.m_test,
            c_norm=self.c_norm,
            gamma=self.gamma,
            gamma_prime=self.gamma_prime,
            rank_spec=self.rank,
            cfg=cfg,
            c_ker=self.c_ker,
            unseen_rank_spec=self.unseen_rank,
            m_seen_mode=self.m_seen_mode,
        )
        self.nuisance_ = fit.nuisance
        self.minimax_ = fit.minimax
        self.n_iter_ = fit.solver.n_iter
        self.converged_ = fit.solver.converged
        return fit.beta
