"""Population-level risks and predictors under bounded additive test shifts.

Closed-form robust risk and its minimizer; the identified parameters
estimable from heterogeneous training environments and the reparameterization
generating all observationally equivalent models; the worst-case robust risk
over that equivalence class, its minimax lower bound, the abstaining and
lower-bound predictors; and anchor-regression / pooled-OLS / DRIG oracles.

The supremum defining the worst-case risk runs over the full ball of
unidentified coefficient perturbations. No feasibility check on the induced
noise covariance is needed: the Schur complement of the joint covariance is
invariant under the reparameterization, so every member of the class is a
valid model whenever the identified one is.
"""

import math
from dataclasses import dataclass

import numpy as np

from .linalg import (
    SubspaceBasis,
    TestBoundDecomposition,
    check_psd_matrix,
    orthogonal_complement,
    projection,
    range_basis,
)
from .scm import EnvironmentShift, ModelParams, check_shift_collection

__all__ = [
    "IdentifiedParams",
    "RiskBudget",
    "MinimaxBound",
    "RiskSlopes",
    "robust_risk",
    "robust_predictor",
    "identified_params",
    "equivalent_params",
    "worst_case_robust_risk",
    "identified_robust_risk",
    "abstaining_predictor",
    "gamma_prime_threshold",
    "minimax_lower_bound",
    "anchor_predictor",
    "drig_bound",
    "unseen_risk_slopes",
    "lower_bound_predictor",
    "population_objective_terms",
]


def _solve_spd(a, b, what):
    a = 0.5 * (a + a.T)
    w = np.linalg.eigvalsh(a)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise ValueError(f"{what} is singular")
    return np.linalg.solve(a, b)


@dataclass(frozen=True)
class IdentifiedParams:
    """Parameters identifiable from the training environments.

    ``beta_s`` is the coefficient projected onto the span of training shifts
    (``seen_basis``); the noise cross-covariance and target-noise variance are
    the induced observationally equivalent ones.
    """

    beta_s: np.ndarray
    sigma_eta: np.ndarray
    sigma_eta_xi_s: np.ndarray
    sigma_xi_sq_s: float
    seen_basis: SubspaceBasis

    def __post_init__(self):
        beta = np.asarray(self.beta_s, dtype=float).ravel()
        cross = np.asarray(self.sigma_eta_xi_s, dtype=float).ravel()
        cov = check_psd_matrix(self.sigma_eta, "sigma_eta", sym_tol=1e-9)
        object.__setattr__(self, "beta_s", beta)
        object.__setattr__(self, "sigma_eta", cov)
        object.__setattr__(self, "sigma_eta_xi_s", cross)
        object.__setattr__(self, "sigma_xi_sq_s", float(self.sigma_xi_sq_s))
        d = beta.size
        if cov.shape != (d, d) or cross.size != d or self.seen_basis.ambient_dim != d:
            raise ValueError("parameter blocks have inconsistent dimensions")
        if self.sigma_xi_sq_s <= 0:
            raise ValueError("target noise variance must be positive")
        resid = beta - projection(self.seen_basis) @ beta
        if np.linalg.norm(resid) > 1e-10 * max(1.0, float(np.linalg.norm(beta))):
            raise ValueError("beta_s must lie in the seen span")

    @property
    def dim(self):
        return self.beta_s.size

    def as_model_params(self):
        """View as invariant parameters (the canonical member of the class)."""
        return ModelParams(
            self.beta_s, self.sigma_eta, self.sigma_eta_xi_s, self.sigma_xi_sq_s
        )


@dataclass(frozen=True)
class RiskBudget:
    """Norm budget for the causal coefficient and its unidentified part."""

    c_norm: float
    c_ker: float

    def __post_init__(self):
        object.__setattr__(self, "c_norm", float(self.c_norm))
        object.__setattr__(self, "c_ker", float(self.c_ker))
        if self.c_ker < 0:
            raise ValueError("c_ker must be nonnegative")
        if self.c_norm < self.c_ker - 1e-12:
            raise ValueError("c_norm must be at least c_ker")

    @classmethod
    def from_identified(cls, c_norm, theta_s):
        """Budget with c_ker = sqrt(c_norm^2 - ||beta_s||^2)."""
        seen_norm = float(np.linalg.norm(theta_s.beta_s))
        if c_norm < seen_norm:
            raise ValueError(
                f"norm budget {c_norm} is below the identified part {seen_norm}"
            )
        return cls(float(c_norm), math.sqrt(max(0.0, c_norm**2 - seen_norm**2)))


def robust_risk(beta, theta, m_test):
    """Worst mean squared error over test shifts second-moment bounded by m_test."""
    beta = np.asarray(beta, dtype=float).ravel()
    m_test = np.asarray(m_test, dtype=float)
    if beta.size != theta.dim or m_test.shape != (theta.dim, theta.dim):
        raise ValueError("dimension mismatch")
    resid = theta.beta_star - beta
    return float(
        resid @ (theta.sigma_eta + m_test) @ resid
        + 2.0 * resid @ theta.sigma_eta_xi
        + theta.sigma_xi_sq
    )


def robust_predictor(theta, m_test):
    """Unique minimizer of the robust risk for the given shift bound."""
    m_test = np.asarray(m_test, dtype=float)
    shifted = theta.sigma_eta + m_test
    return theta.beta_star + _solve_spd(shifted, theta.sigma_eta_xi, "m_test + sigma_eta")


def identified_params(theta, seen_span):
    """Identified parameters induced by projecting the coefficient on the span."""
    p = projection(seen_span)
    beta_s = p @ theta.beta_star
    beta_perp = theta.beta_star - beta_s
    cross = theta.sigma_eta_xi + theta.sigma_eta @ beta_perp
    var = float(
        theta.sigma_xi_sq
        + 2.0 * theta.sigma_eta_xi @ beta_perp
        + beta_perp @ theta.sigma_eta @ beta_perp
    )
    return IdentifiedParams(beta_s, theta.sigma_eta, cross, var, seen_span)


def equivalent_params(theta_s, alpha):
    """The observationally equivalent model with coefficient beta_s + alpha.

    ``alpha`` must be orthogonal to the seen span; the noise blocks are
    adjusted so every training-environment moment is unchanged.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != theta_s.dim:
        raise ValueError("alpha has the wrong dimension")
    leak = projection(theta_s.seen_basis) @ alpha
    if np.linalg.norm(leak) > 1e-10 * max(1.0, float(np.linalg.norm(alpha))):
        raise ValueError("alpha must be orthogonal to the seen span")
    beta = theta_s.beta_s + alpha
    cross = theta_s.sigma_eta_xi_s - theta_s.sigma_eta @ alpha
    var = float(
        theta_s.sigma_xi_sq_s
        - 2.0 * alpha @ theta_s.sigma_eta_xi_s
        + alpha @ theta_s.sigma_eta @ alpha
    )
    return ModelParams(beta, theta_s.sigma_eta, cross, var)


def identified_robust_risk(beta, theta_s, gamma, m_seen):
    """Robust risk of ``beta`` under the identified parameters and seen shifts."""
    beta = np.asarray(beta, dtype=float).ravel()
    resid = theta_s.beta_s - beta
    return float(
        resid @ (theta_s.sigma_eta + gamma * m_seen) @ resid
        + 2.0 * resid @ theta_s.sigma_eta_xi_s
        + theta_s.sigma_xi_sq_s
    )


def worst_case_robust_risk(beta, theta_s, budget, dec):
    """Supremum of the robust risk over all observationally equivalent models.

    Equals the identified robust risk plus, when unseen shift directions are
    present, a non-identifiability penalty ``gamma_prime * (c_ker + |R'b|)^2``.
    With no unseen directions the supremum collapses to the identified risk,
    whatever ``gamma_prime`` says.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    base = identified_robust_risk(beta, theta_s, dec.gamma, dec.m_seen)
    if dec.unseen_basis.dim == 0:
        return base
    unseen_norm = float(np.linalg.norm(dec.unseen_basis.columns.T @ beta))
    return base + dec.gamma_prime * (budget.c_ker + unseen_norm) ** 2


def _stable_total_basis(theta_s, unseen_basis):
    """Columns spanning everything orthogonal to the unseen directions:
    the seen span plus the unperturbed part of its complement."""
    seen = theta_s.seen_basis
    comp = orthogonal_complement(seen)
    rest = projection(comp) - projection(unseen_basis)
    r_dim = comp.dim - unseen_basis.dim
    if r_dim < 0:
        raise ValueError("unseen basis is larger than the seen complement")
    rest_basis = range_basis(rest, r_dim)
    return np.hstack([seen.columns, rest_basis.columns])


def abstaining_predictor(theta_s, gamma, m_seen, unseen_basis):
    """Minimizer of the identified robust risk orthogonal to unseen directions."""
    cols = _stable_total_basis(theta_s, unseen_basis)
    if cols.shape[1] == 0:
        return theta_s.beta_s.copy()
    k = theta_s.sigma_eta + gamma * np.asarray(m_seen, dtype=float)
    reduced = cols.T @ k @ cols
    w = _solve_spd(reduced, cols.T @ theta_s.sigma_eta_xi_s, "reduced system")
    return theta_s.beta_s + cols @ w


def gamma_prime_threshold(theta_s, unseen_basis, budget):
    """Unseen-shift strength beyond which the minimax predictor abstains.

    ``(kappa(sigma_eta) + 1) * |R R' sigma_eta_xi_s| / c_ker``; returns 0 when
    the numerator vanishes and +inf when only the budget does.
    """
    num = float(np.linalg.norm(projection(unseen_basis) @ theta_s.sigma_eta_xi_s))
    if num == 0.0:
        return 0.0
    if budget.c_ker == 0.0:
        return math.inf
    w = np.linalg.eigvalsh(theta_s.sigma_eta)
    kappa = float(w[-1] / w[0])
    return (kappa + 1.0) * num / budget.c_ker


@dataclass(frozen=True)
class MinimaxBound:
    """Minimax value (exact at or above the abstaining threshold, otherwise a
    lower bound) together with the small-unseen-shift slope."""

    value: float
    regime: str  # "at-threshold-exact" or "below-threshold-bound"
    small_gamma_prime_slope: float


def minimax_lower_bound(theta_s, budget, dec):
    """Best achievable worst-case robust risk, or a lower bound for it.

    At or above the abstaining threshold the value is exact; below it only a
    bound is available. The slope field is the derivative of the minimax value
    in the unseen strength as it tends to zero.
    """
    k = theta_s.sigma_eta + dec.gamma * dec.m_seen
    k_inv_cross = _solve_spd(k, theta_s.sigma_eta_xi_s, "sigma_eta + gamma * m_seen")
    unconstrained_min = float(
        theta_s.sigma_xi_sq_s - theta_s.sigma_eta_xi_s @ k_inv_cross
    )
    if dec.unseen_basis.dim == 0:
        return MinimaxBound(unconstrained_min, "at-threshold-exact", 0.0)

    slope = (
        budget.c_ker
        + float(np.linalg.norm(projection(dec.unseen_basis) @ k_inv_cross))
    ) ** 2
    penalty = dec.gamma_prime * budget.c_ker**2
    threshold = gamma_prime_threshold(theta_s, dec.unseen_basis, budget)
    if dec.gamma_prime >= threshold:
        beta = abstaining_predictor(theta_s, dec.gamma, dec.m_seen, dec.unseen_basis)
        value = penalty + identified_robust_risk(beta, theta_s, dec.gamma, dec.m_seen)
        return MinimaxBound(value, "at-threshold-exact", slope)
    return MinimaxBound(penalty + unconstrained_min, "below-threshold-bound", slope)


def _linear_view(theta):
    """(coefficient, noise covariance, noise cross-covariance) of either
    invariant or identified parameters."""
    if isinstance(theta, IdentifiedParams):
        return theta.beta_s, theta.sigma_eta, theta.sigma_eta_xi_s
    if isinstance(theta, ModelParams):
        return theta.beta_star, theta.sigma_eta, theta.sigma_eta_xi
    raise TypeError("expected ModelParams or IdentifiedParams")


def anchor_predictor(theta, gamma, m_anchor):
    """Minimizer of the robust risk for shifts bounded by gamma * m_anchor.

    ``gamma = 1`` is pooled ordinary least squares. Accepts either the
    invariant or the identified parameters; when the anchor bound is supported
    on the seen span the two views give the same predictor.
    """
    beta, sigma_eta, cross = _linear_view(theta)
    m_anchor = np.asarray(m_anchor, dtype=float)
    shifted = sigma_eta + float(gamma) * m_anchor
    return beta + _solve_spd(shifted, cross, "sigma_eta + gamma * m_anchor")


def drig_bound(shifts, gamma):
    """Pooled mean-plus-variance shift bound of the DRIG baseline.

    Requires the reference second moment to be dominated by the pooled
    environment second moments.
    """
    from .linalg import loewner_leq

    ref = check_shift_collection(shifts)
    ref_sigma = shifts[ref].sigma
    d = ref_sigma.shape[0]
    pooled = np.zeros((d, d))
    total = np.zeros((d, d))
    for s in shifts:
        pooled += s.weight * (s.sigma - ref_sigma + np.outer(s.mu, s.mu))
        total += s.weight * s.second_moment
    if not loewner_leq(ref_sigma, total, tol=1e-9):
        raise ValueError(
            "reference covariance is not dominated by the pooled shifts; "
            "the bound requires sigma_0 <= sum_e w_e (sigma_e + mu_e mu_e')"
        )
    return float(gamma) * 0.5 * (pooled + pooled.T)


@dataclass(frozen=True)
class RiskSlopes:
    """Unseen-strength slopes of the worst-case robust risk at the baseline
    predictors, plus the minimax slopes in both regimes."""

    anchor: float
    ols: float
    minimax_limit: float
    minimax_threshold: float


def unseen_risk_slopes(theta_s, budget, gamma, m_anchor, unseen_basis):
    """Slopes in the unseen shift strength of the worst-case robust risk."""
    m_anchor = np.asarray(m_anchor, dtype=float)
    p_unseen = projection(unseen_basis)

    def slope_at(g):
        shifted = theta_s.sigma_eta + g * m_anchor
        v = _solve_spd(shifted, theta_s.sigma_eta_xi_s, "sigma_eta + gamma * m_anchor")
        return (budget.c_ker + float(np.linalg.norm(p_unseen @ v))) ** 2

    anchor = slope_at(float(gamma))
    return RiskSlopes(anchor, slope_at(1.0), anchor, budget.c_ker**2)


def lower_bound_predictor(theta_s, budget, dec):
    """Minimizer of the smooth lower bound of the worst-case robust risk;
    tight as the unseen shift strength tends to zero."""
    k = theta_s.sigma_eta + dec.gamma * dec.m_seen
    p_unseen = projection(dec.unseen_basis)
    system = k + dec.gamma_prime * p_unseen
    correction = dec.gamma_prime * budget.c_ker * (
        p_unseen @ _solve_spd(k, theta_s.sigma_eta_xi_s, "sigma_eta + gamma * m_seen")
    )
    rhs = theta_s.sigma_eta_xi_s - correction
    return theta_s.beta_s + _solve_spd(system, rhs, "penalized system")


def population_objective_terms(theta_s, gamma, m_seen):
    """Quadratic data (Q, q, c0) with
    identified_robust_risk(beta) = beta' Q beta - 2 q' beta + c0."""
    m_seen = np.asarray(m_seen, dtype=float)
    q_matrix = theta_s.sigma_eta + float(gamma) * m_seen
    q_vector = q_matrix @ theta_s.beta_s + theta_s.sigma_eta_xi_s
    c0 = float(
        theta_s.beta_s @ q_matrix @ theta_s.beta_s
        + 2.0 * theta_s.beta_s @ theta_s.sigma_eta_xi_s
        + theta_s.sigma_xi_sq_s
    )
    return q_matrix, q_vector, c0
