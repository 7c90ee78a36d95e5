"""Finite-sample estimation of the worst-case robust predictor and baselines.

Nuisance estimation (training shift span, identified coefficient, seen and
unseen test-shift bounds), the empirical worst-case robust loss, an
accelerated proximal-gradient solver for its smooth-quadratic-plus-group-norm
form, and the pooled OLS / anchor / DRIG baseline fits.

Conventions: sample covariances use the 1/n normalization so that empirical
identities mirror population second-moment algebra exactly. The kernel norm
budget enters the loss as sqrt(C^2 - |beta_s|^2); a budget slightly below the
identified norm clamps to zero with a warning rather than failing.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    SubspaceBasis,
    decompose_test_bound,
    loewner_leq,
    orthogonal_complement,
    projection,
    psd_clip,
    range_basis,
)
from .scm import Dataset, PopulationMoments

__all__ = [
    "EnvMoments",
    "NuisanceEstimates",
    "SolverConfig",
    "SolverResult",
    "WorstCaseFit",
    "dataset_moments",
    "estimate_shift_space",
    "estimate_identified_beta",
    "anchor_crosscheck_beta",
    "estimate_nuisance",
    "empirical_worst_case_loss",
    "worst_case_loss_from_moments",
    "solve_composite",
    "fit_worst_case_robust",
    "fit_baseline",
    "reference_reduction",
]


@dataclass(frozen=True)
class EnvMoments:
    """First and raw second sample moments of one environment block."""

    mean_x: np.ndarray
    second_x: np.ndarray
    cross_xy: np.ndarray
    second_y: float
    mean_y: float
    count: int

    @classmethod
    def from_samples(cls, x, y):
        n = x.shape[0]
        if n < 1:
            raise ValueError("environment block is empty")
        return cls(
            mean_x=x.mean(axis=0),
            second_x=x.T @ x / n,
            cross_xy=x.T @ y / n,
            second_y=float(y @ y / n),
            mean_y=float(y.mean()),
            count=n,
        )

    @classmethod
    def from_population(cls, pm: PopulationMoments, count=1):
        return cls(pm.mean_x, pm.second_x, pm.cross_xy, pm.second_y, pm.mean_y, count)

    @property
    def cov_x(self):
        return self.second_x - np.outer(self.mean_x, self.mean_x)


def dataset_moments(data: Dataset):
    return [EnvMoments.from_samples(x, y) for x, y in zip(data.xs, data.ys)]


def _relative_shift_matrix(mom, ref):
    """Cov difference plus mean-outer difference against the reference."""
    return (
        mom.cov_x
        - ref.cov_x
        + np.outer(mom.mean_x, mom.mean_x)
        - np.outer(ref.mean_x, ref.mean_x)
    )


def shift_space_from_moments(moments, reference_index, rank_spec=1e-8):
    ref = moments[reference_index]
    d = ref.mean_x.size
    total = np.zeros((d, d))
    for e, mom in enumerate(moments):
        if e != reference_index:
            total += _relative_shift_matrix(mom, ref)
    return range_basis(psd_clip(total), rank_spec)


def estimate_shift_space(data: Dataset, rank_spec=1e-8):
    """Span of training shift directions from per-environment moment differences.

    Sums the covariance-plus-mean-outer differences against the reference,
    symmetrizes, clips negative eigenvalues at zero and takes the numerical
    range. Every environment needs at least two samples.
    """
    if min(data.counts) < 2:
        raise ValueError("every environment needs at least 2 samples")
    return shift_space_from_moments(dataset_moments(data), data.reference_index, rank_spec)


def identified_beta_from_moments(moments, reference_index, seen_basis):
    if seen_basis.dim == 0:
        return np.zeros(seen_basis.ambient_dim)
    ref = moments[reference_index]
    d = ref.mean_x.size
    gram_diff = np.zeros((d, d))
    cross_diff = np.zeros(d)
    for e, mom in enumerate(moments):
        if e != reference_index:
            gram_diff += mom.second_x - ref.second_x
            cross_diff += mom.cross_xy - ref.cross_xy
    cols = seen_basis.columns
    reduced = cols.T @ gram_diff @ cols
    reduced = 0.5 * (reduced + reduced.T)
    w = np.linalg.eigvalsh(reduced)
    if w[0] <= 1e-12 * max(abs(w[-1]), 1e-300):
        raise ValueError("insufficient heterogeneity on the estimated shift span")
    return cols @ np.linalg.solve(reduced, cols.T @ cross_diff)


def estimate_identified_beta(data: Dataset, seen_basis: SubspaceBasis):
    """Identified coefficient from stacked moment differences, restricted to
    the estimated shift span. Returns zero for an empty span."""
    return identified_beta_from_moments(
        dataset_moments(data), data.reference_index, seen_basis
    )


def anchor_crosscheck_beta(data: Dataset, seen_basis: SubspaceBasis, gamma=1e6):
    """Projection of a very-large-gamma anchor fit onto the shift span.

    Alternative route to the identified coefficient; agrees with the
    moment-difference solve up to statistical error at large sample sizes.
    """
    beta = fit_baseline(data, "anchor", gamma=gamma)
    return projection(seen_basis) @ beta


@dataclass(frozen=True)
class NuisanceEstimates:
    """Everything estimated before solving the empirical worst-case loss."""

    seen_basis: SubspaceBasis
    seen_complement: SubspaceBasis
    m_seen: np.ndarray
    unseen_projection: np.ndarray
    beta_s: np.ndarray
    c_ker: float

    def __post_init__(self):
        p = np.asarray(self.unseen_projection, dtype=float)
        object.__setattr__(self, "unseen_projection", p)
        object.__setattr__(self, "m_seen", np.asarray(self.m_seen, dtype=float))
        object.__setattr__(self, "beta_s", np.asarray(self.beta_s, dtype=float).ravel())
        object.__setattr__(self, "c_ker", float(self.c_ker))
        if self.c_ker < 0:
            raise ValueError("c_ker must be nonnegative")
        if not np.allclose(p @ p, p, atol=1e-8):
            raise ValueError("unseen_projection must be idempotent")
        if not np.allclose(p, p.T, atol=1e-8):
            raise ValueError("unseen_projection must be symmetric")
        if np.abs(p @ projection(self.seen_basis)).max(initial=0.0) > 1e-8:
            raise ValueError("unseen_projection must annihilate the seen span")
        leak = self.beta_s - projection(self.seen_basis) @ self.beta_s
        if np.linalg.norm(leak) > 1e-8 * max(1.0, float(np.linalg.norm(self.beta_s))):
            raise ValueError("beta_s must lie in the seen span")


def _pooled_seen_bound(moments, reference_index):
    """Weighted pooled relative-shift bound, projected onto the seen span later."""
    ref = moments[reference_index]
    d = ref.mean_x.size
    total = float(sum(m.count for m in moments))
    pooled = np.zeros((d, d))
    for mom in moments:
        pooled += (mom.count / total) * _relative_shift_matrix(mom, ref)
    return pooled


def estimate_nuisance(
    data: Dataset,
    m_test=None,
    c_norm=1.0,
    rank_spec=1e-8,
    *,
    c_ker=None,
    unseen_rank_spec=None,
    m_seen_mode="pooled",
):
    """Estimate the nuisance quantities entering the worst-case robust loss.

    With ``m_test`` given, its seen/unseen split against the estimated shift
    span provides the unseen projection (and, in ``m_seen_mode="decompose"``,
    the seen bound). By default the seen bound is the pooled relative-shift
    bound projected onto the span, and without ``m_test`` the unseen
    projection falls back to the full complement of the span.

    ``c_ker`` overrides the budget-derived value sqrt(c_norm^2 - |beta_s|^2);
    when the budget is too small the value clamps to zero with a warning.
    """
    if m_seen_mode not in ("pooled", "decompose"):
        raise ValueError("m_seen_mode must be 'pooled' or 'decompose'")
    if c_ker is None and c_norm <= 0:
        raise ValueError("c_norm must be positive")
    moments = dataset_moments(data)
    ref = data.reference_index
    if min(data.counts) < 2:
        raise ValueError("every environment needs at least 2 samples")

    seen = shift_space_from_moments(moments, ref, rank_spec)
    comp = orthogonal_complement(seen)
    if m_test is not None:
        dec = decompose_test_bound(
            m_test, seen, 1.0, 1.0,
            rank_spec=rank_spec if not isinstance(rank_spec, (int, np.integer)) else 1e-8,
            unseen_rank_spec=unseen_rank_spec,
        )
        unseen_projection = dec.unseen_projection
        m_seen_decomposed = dec.m_seen
    else:
        unseen_projection = projection(comp)
        m_seen_decomposed = None

    if m_seen_mode == "decompose":
        if m_seen_decomposed is None:
            raise ValueError("m_seen_mode='decompose' requires m_test")
        m_seen = m_seen_decomposed
    else:
        p_seen = projection(seen)
        m_seen = psd_clip(p_seen @ _pooled_seen_bound(moments, ref) @ p_seen)

    beta_s = identified_beta_from_moments(moments, ref, seen)
    if c_ker is None:
        gap = c_norm**2 - float(beta_s @ beta_s)
        if gap < 0:
            warnings.warn(
                "norm budget is below the identified coefficient norm; "
                "clamping the kernel budget to zero",
                stacklevel=2,
            )
        c_ker = math.sqrt(max(0.0, gap))
    return NuisanceEstimates(seen, comp, m_seen, unseen_projection, beta_s, float(c_ker))


def worst_case_loss_from_moments(beta, phi, ref_moments, gamma, gamma_prime):
    """Worst-case robust loss with the reference risk taken from given moments."""
    beta = np.asarray(beta, dtype=float).ravel()
    ref_risk = float(
        beta @ ref_moments.second_x @ beta
        - 2.0 * beta @ ref_moments.cross_xy
        + ref_moments.second_y
    )
    resid = phi.beta_s - beta
    seen_pen = gamma * float(resid @ phi.m_seen @ resid)
    unseen_norm = float(np.linalg.norm(phi.unseen_projection @ beta))
    unseen_pen = gamma_prime * (phi.c_ker + unseen_norm) ** 2
    return ref_risk + seen_pen + unseen_pen


def empirical_worst_case_loss(beta, phi, data, gamma, gamma_prime):
    """Sample worst-case robust loss: reference mean squared error plus the
    seen-shift alignment penalty plus the non-identifiability penalty."""
    ref = EnvMoments.from_samples(*data.environment(data.reference_index))
    return worst_case_loss_from_moments(beta, phi, ref, gamma, gamma_prime)


@dataclass(frozen=True)
class SolverConfig:
    """Accelerated proximal gradient settings.

    ``initial_step`` defaults to 1/trace of the smooth quadratic; backtracking
    shrinks the step by ``step_shrink`` until the local upper bound holds.
    """

    max_iters: int = 50_000
    rel_tol: float = 1e-10
    initial_step: float = None
    step_shrink: float = 0.5
    restart: bool = True

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if not 0.0 < self.step_shrink < 1.0:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass(frozen=True)
class SolverResult:
    beta: np.ndarray
    loss: float
    n_iter: int
    converged: bool
    loss_history: np.ndarray = field(repr=False, default=None)


def solve_composite(q_matrix, q_vector, c0, gamma_prime, c_ker, unseen_projection, cfg=None):
    """Minimize b' Q b - 2 q' b + c0 + gamma_prime (c_ker + |P b|)^2.

    The quadratic part of the penalty joins the smooth term (keeping it
    strictly convex); what remains is the group norm 2 gamma_prime c_ker |P b|
    with P an orthogonal projection, whose proximal map shrinks the norm of
    the P-block. Smooth instances (zero group-norm weight) are solved exactly
    in closed form. Accepted iterates never increase the loss; iteration stops
    once the relative loss decrease drops below ``rel_tol``.
    """
    cfg = cfg or SolverConfig()
    q_matrix = 0.5 * (np.asarray(q_matrix, dtype=float) + np.asarray(q_matrix, dtype=float).T)
    q_vector = np.asarray(q_vector, dtype=float).ravel()
    p = np.asarray(unseen_projection, dtype=float)
    gamma_prime = float(gamma_prime)
    c_ker = float(c_ker)
    if gamma_prime < 0 or c_ker < 0:
        raise ValueError("gamma_prime and c_ker must be nonnegative")

    smooth_q = q_matrix + gamma_prime * p
    const = float(c0) + gamma_prime * c_ker**2
    lam = 2.0 * gamma_prime * c_ker  # group-norm weight

    def smooth(b):
        return float(b @ smooth_q @ b - 2.0 * q_vector @ b + const)

    def total(b):
        return smooth(b) + lam * float(np.linalg.norm(p @ b))

    if lam == 0.0:
        beta = np.linalg.solve(smooth_q, q_vector)
        loss = total(beta)
        return SolverResult(beta, loss, 0, True, np.array([loss]))

    def prox(v, step):
        block = p @ v
        norm = float(np.linalg.norm(block))
        if norm <= step * lam:
            return v - block
        return v - (step * lam / norm) * block

    step = cfg.initial_step
    if step is None:
        step = 1.0 / max(float(np.trace(smooth_q)), 1e-12)

    x = np.linalg.solve(smooth_q, q_vector)  # smooth minimizer is a cheap warm start
    x_prev = x.copy()
    f_x = total(x)
    history = [f_x]
    t = 1.0
    converged = False
    n_iter = 0

    for n_iter in range(1, cfg.max_iters + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x + ((t - 1.0) / t_next) * (x - x_prev)

        def bt_step(point, start_step):
            s = start_step
            g = 2.0 * (smooth_q @ point - q_vector)
            f_point = smooth(point)
            while True:
                z = prox(point - s * g, s)
                diff = z - point
                if smooth(z) <= f_point + g @ diff + diff @ diff / (2.0 * s):
                    return z, s
                s *= cfg.step_shrink

        z, step = bt_step(y, step)
        f_z = total(z)
        if f_z > f_x:
            # momentum overshoot: fall back to a plain proximal step, which
            # cannot increase the loss
            z, step = bt_step(x, step)
            f_z = total(z)
            t_next = 1.0
        if cfg.restart and (y - z) @ (z - x) > 0:
            t_next = 1.0

        if f_z > f_x:  # no progress representable at this precision
            history.append(f_x)
            converged = True
            break
        x_prev, x = x, z
        decrease = f_x - f_z
        f_x = f_z
        t = t_next
        history.append(f_x)
        if decrease < cfg.rel_tol * max(1.0, abs(f_x)):
            converged = True
            break

    history = np.asarray(history)
    assert np.all(np.diff(history) <= 0.0), "solver loss increased"
    return SolverResult(x, f_x, n_iter, converged, history)


@dataclass(frozen=True)
class WorstCaseFit:
    beta: np.ndarray
    minimax: float
    nuisance: NuisanceEstimates
    solver: SolverResult


def fit_worst_case_robust(
    data: Dataset,
    m_test=None,
    c_norm=1.0,
    gamma=0.0,
    gamma_prime=0.0,
    rank_spec=1e-8,
    cfg=None,
    *,
    c_ker=None,
    unseen_rank_spec=None,
    m_seen_mode="pooled",
):
    """Estimate nuisances, assemble the empirical worst-case loss and solve it.

    Returns the fitted coefficient, the attained loss (the estimated minimax
    hardness of the problem) and the nuisance estimates.
    """
    phi = estimate_nuisance(
        data,
        m_test,
        c_norm,
        rank_spec,
        c_ker=c_ker,
        unseen_rank_spec=unseen_rank_spec,
        m_seen_mode=m_seen_mode,
    )
    ref = EnvMoments.from_samples(*data.environment(data.reference_index))
    gamma = float(gamma)
    q_matrix = ref.second_x + gamma * phi.m_seen
    q_vector = ref.cross_xy + gamma * phi.m_seen @ phi.beta_s
    c0 = ref.second_y + gamma * float(phi.beta_s @ phi.m_seen @ phi.beta_s)
    res = solve_composite(
        q_matrix, q_vector, c0, gamma_prime, phi.c_ker, phi.unseen_projection, cfg
    )
    return WorstCaseFit(res.beta, res.loss, phi, res)


def _anchor_from_moments(moments, gamma):
    d = moments[0].mean_x.size
    total = float(sum(m.count for m in moments))
    gram = np.zeros((d, d))
    rhs = np.zeros(d)
    for mom in moments:
        w = mom.count / total
        gram += w * (mom.second_x + (gamma - 1.0) * np.outer(mom.mean_x, mom.mean_x))
        rhs += w * (mom.cross_xy + (gamma - 1.0) * mom.mean_x * mom.mean_y)
    return np.linalg.solve(0.5 * (gram + gram.T), rhs)


def _drig_from_moments(moments, reference_index, gamma, dominance_tol):
    ref = moments[reference_index]
    d = ref.mean_x.size
    total = float(sum(m.count for m in moments))
    pooled_gram = np.zeros((d, d))
    pooled_cross = np.zeros(d)
    for mom in moments:
        w = mom.count / total
        pooled_gram += w * mom.second_x
        pooled_cross += w * mom.cross_xy
    if not loewner_leq(ref.second_x, pooled_gram, tol=dominance_tol):
        raise ValueError(
            "reference second moment is not dominated by the pooled environments; "
            "the bound requires sigma_0 <= sum_e w_e (sigma_e + mu_e mu_e')"
        )
    gram = ref.second_x + gamma * (pooled_gram - ref.second_x)
    rhs = ref.cross_xy + gamma * (pooled_cross - ref.cross_xy)
    return np.linalg.solve(0.5 * (gram + gram.T), rhs)


def fit_baseline(data: Dataset, method, gamma=None, dominance_tol=1e-2):
    """Pooled OLS, anchor regression or DRIG coefficients.

    ``ols`` minimizes the pooled mean squared error with weights n_e / n;
    ``anchor`` adds (gamma - 1) times the mean-shift penalty; ``drig``
    interpolates between the reference and pooled second moments, which also
    accounts for covariance shifts. The DRIG dominance check runs at
    ``dominance_tol`` to absorb sampling noise in the moment difference.
    """
    moments = dataset_moments(data)
    if method == "ols":
        return _anchor_from_moments(moments, 1.0)
    if method == "anchor":
        if gamma is None:
            raise ValueError("anchor requires gamma")
        return _anchor_from_moments(moments, float(gamma))
    if method == "drig":
        if gamma is None:
            raise ValueError("drig requires gamma")
        return _drig_from_moments(moments, data.reference_index, float(gamma), dominance_tol)
    raise ValueError(f"unknown baseline method {method!r}")


def reference_reduction(data: Dataset):
    """Designate the minimal-covariance environment as reference and recenter.

    Picks the environment with the smallest sample covariance trace, then
    subtracts its covariate and target means from every environment, so
    downstream moment differences measure shifts relative to that environment.
    """
    moments = dataset_moments(data)
    traces = [float(np.trace(m.cov_x)) for m in moments]
    ref = int(np.argmin(traces))
    x_center = moments[ref].mean_x
    y_center = moments[ref].mean_y
    xs = tuple(x - x_center for x in data.xs)
    ys = tuple(y - y_center for y in data.ys)
    return Dataset(xs, ys, ref, data.labels)
