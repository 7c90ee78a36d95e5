"""Data generating process for multi-environment linear regression.

Invariant model parameters with correlated noise, per-environment additive
covariate shifts, exact population moments, Gaussian sampling, the reduction
of a linear structural causal model to the additive-shift form, and seeded
synthetic instance generators.

Shift and noise laws are Gaussian: population risks in this setting depend on
first and second moments only, and a Gaussian is the simplest law realizing
any prescribed moment pair.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linalg import SubspaceBasis, check_psd_matrix, projection, range_basis

__all__ = [
    "ModelParams",
    "EnvironmentShift",
    "ScmSpec",
    "Dataset",
    "PopulationMoments",
    "AdversarialInstance",
    "check_shift_collection",
    "shift_span",
    "scm_to_dgp",
    "induced_shift",
    "population_moments",
    "sample_environment",
    "sample_dataset",
    "random_instance",
    "adversarial_params",
]


@dataclass(frozen=True)
class ModelParams:
    """Invariant parameters: linear coefficient plus joint noise covariance.

    The joint (d+1)x(d+1) noise covariance assembled from ``sigma_eta``,
    ``sigma_eta_xi`` and ``sigma_xi_sq`` must be full-rank PSD.
    """

    beta_star: np.ndarray
    sigma_eta: np.ndarray
    sigma_eta_xi: np.ndarray
    sigma_xi_sq: float

    def __post_init__(self):
        beta = np.asarray(self.beta_star, dtype=float).ravel()
        cross = np.asarray(self.sigma_eta_xi, dtype=float).ravel()
        cov = check_psd_matrix(self.sigma_eta, "sigma_eta", sym_tol=1e-9)
        object.__setattr__(self, "beta_star", beta)
        object.__setattr__(self, "sigma_eta", cov)
        object.__setattr__(self, "sigma_eta_xi", cross)
        object.__setattr__(self, "sigma_xi_sq", float(self.sigma_xi_sq))
        d = beta.size
        if cov.shape != (d, d) or cross.size != d:
            raise ValueError("parameter blocks have inconsistent dimensions")
        w = np.linalg.eigvalsh(self.joint_covariance)
        if w[0] <= 1e-10 * w[-1]:
            raise ValueError("joint noise covariance must be full-rank PSD")

    @property
    def dim(self):
        return self.beta_star.size

    @property
    def joint_covariance(self):
        d = self.dim
        joint = np.empty((d + 1, d + 1))
        joint[:d, :d] = self.sigma_eta
        joint[:d, d] = self.sigma_eta_xi
        joint[d, :d] = self.sigma_eta_xi
        joint[d, d] = self.sigma_xi_sq
        return joint


@dataclass(frozen=True)
class EnvironmentShift:
    """First and second moments of one environment's additive covariate shift."""

    mu: np.ndarray
    sigma: np.ndarray
    weight: float
    is_reference: bool = False

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        sigma = check_psd_matrix(self.sigma, "sigma", sym_tol=1e-9)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "weight", float(self.weight))
        if sigma.shape[0] != mu.size:
            raise ValueError("mu and sigma dimensions disagree")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        if self.is_reference and (
            np.abs(mu).max(initial=0.0) > 1e-12
            or np.abs(sigma).max(initial=0.0) > 1e-12
        ):
            raise ValueError("reference environment must have zero mean and covariance")

    @classmethod
    def reference(cls, dim, weight):
        return cls(np.zeros(dim), np.zeros((dim, dim)), weight, is_reference=True)

    @property
    def second_moment(self):
        return self.sigma + np.outer(self.mu, self.mu)


def check_shift_collection(shifts, require_reference=True):
    """Validate a shift collection; return the reference index (or None)."""
    if not shifts:
        raise ValueError("shift collection is empty")
    total = sum(s.weight for s in shifts)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"environment weights must sum to 1, got {total!r}")
    ref = [i for i, s in enumerate(shifts) if s.is_reference]
    if len(ref) > 1:
        raise ValueError("at most one reference environment is allowed")
    if not ref:
        if require_reference:
            raise ValueError("shift collection has no reference environment")
        return None
    return ref[0]


def shift_span(shifts, rank_spec=1e-8):
    """Span of all shift directions: range of the summed shift second moments."""
    dims = {s.mu.size for s in shifts}
    if len(dims) != 1:
        raise ValueError("shifts have inconsistent dimensions")
    d = dims.pop()
    total = np.zeros((d, d))
    for s in shifts:
        if not s.is_reference:
            total += s.second_moment
    return range_basis(total, rank_spec)


@dataclass(frozen=True)
class ScmSpec:
    """Structural model over (X, Y, H) with exogenous shifts entering X.

    Block structure of the structural matrix: X may depend on X, Y and H; Y
    depends on X and H; H is exogenous. ``z_moments`` holds per-environment
    (mean, covariance) pairs of the shift input Z.
    """

    b_xx: np.ndarray
    b_xy: np.ndarray
    b_xh: np.ndarray
    b_yx: np.ndarray
    b_yh: np.ndarray
    noise_cov: np.ndarray
    z_moments: tuple = ()

    def __post_init__(self):
        b_xx = np.atleast_2d(np.asarray(self.b_xx, dtype=float))
        d = b_xx.shape[0]
        b_xy = np.asarray(self.b_xy, dtype=float).reshape(d)
        b_yx = np.asarray(self.b_yx, dtype=float).reshape(d)
        b_xh = np.asarray(self.b_xh, dtype=float).reshape(d, -1)
        h = b_xh.shape[1]
        b_yh = np.asarray(self.b_yh, dtype=float).reshape(h)
        noise = check_psd_matrix(self.noise_cov, "noise_cov", sym_tol=1e-9)
        if noise.shape[0] != d + 1 + h:
            raise ValueError(
                f"noise_cov must be {(d + 1 + h)}x{(d + 1 + h)} for d={d}, h={h}"
            )
        for name, val in [
            ("b_xx", b_xx), ("b_xy", b_xy), ("b_xh", b_xh),
            ("b_yx", b_yx), ("b_yh", b_yh), ("noise_cov", noise),
        ]:
            object.__setattr__(self, name, val)

    @property
    def n_covariates(self):
        return self.b_xx.shape[0]

    @property
    def n_hidden(self):
        return self.b_xh.shape[1]

    def structural_matrix(self):
        d, h = self.n_covariates, self.n_hidden
        b = np.zeros((d + 1 + h, d + 1 + h))
        b[:d, :d] = self.b_xx
        b[:d, d] = self.b_xy
        b[:d, d + 1:] = self.b_xh
        b[d, :d] = self.b_yx
        b[d, d + 1:] = self.b_yh
        return b


def scm_to_dgp(spec):
    """Reduce a structural model to additive-shift form.

    Returns the induced invariant parameters and the matrix mapping shift
    input moments to induced covariate-shift moments (see ``induced_shift``).
    """
    d, h = spec.n_covariates, spec.n_hidden
    b = spec.structural_matrix()
    eye = np.eye(d + 1 + h)
    if np.linalg.cond(eye - b) > 1e12:
        raise ValueError("structural matrix not invertible")
    c = np.linalg.inv(eye - b)

    c_x = c[:d, :]
    # H is exogenous, so the target noise is B_YH @ eps_H + eps_Y.
    c_xi = np.concatenate([np.zeros(d), [1.0], spec.b_yh])
    sigma_eta = c_x @ spec.noise_cov @ c_x.T
    sigma_eta_xi = c_x @ spec.noise_cov @ c_xi
    sigma_xi_sq = float(c_xi @ spec.noise_cov @ c_xi)
    params = ModelParams(spec.b_yx.copy(), sigma_eta, sigma_eta_xi, sigma_xi_sq)
    return params, c[:d, :d]


def induced_shift(shift_map, mu_z, sigma_z, weight, is_reference=False):
    """Covariate-shift moments induced by shift-input moments through the SCM."""
    mu_z = np.asarray(mu_z, dtype=float).ravel()
    sigma_z = np.asarray(sigma_z, dtype=float)
    mu = shift_map @ mu_z
    sigma = shift_map @ sigma_z @ shift_map.T
    return EnvironmentShift(mu, 0.5 * (sigma + sigma.T), weight, is_reference)


class PopulationMoments(NamedTuple):
    mean_x: np.ndarray
    second_x: np.ndarray
    cross_xy: np.ndarray
    second_y: float
    mean_y: float


def population_moments(theta, shift):
    """Exact first and second moments of (X, Y) in one environment."""
    if shift.mu.size != theta.dim:
        raise ValueError("shift and model dimensions disagree")
    second_a = shift.second_moment
    second_x = second_a + theta.sigma_eta
    cross_xy = second_x @ theta.beta_star + theta.sigma_eta_xi
    second_y = float(
        theta.beta_star @ second_x @ theta.beta_star
        + 2.0 * theta.beta_star @ theta.sigma_eta_xi
        + theta.sigma_xi_sq
    )
    mean_y = float(theta.beta_star @ shift.mu)
    return PopulationMoments(shift.mu.copy(), second_x, cross_xy, second_y, mean_y)


def _psd_factor(m):
    """Any factor L with L @ L.T = m; rank-deficient inputs allowed."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w)


def sample_environment(theta, shift, n, seed):
    """Draw ``n`` Gaussian samples (X, y) from one environment.

    The shift and the noise are independent; the draw is deterministic given
    ``seed`` (an int or anything accepted by ``numpy.random.default_rng``).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    d = theta.dim
    shift_factor = _psd_factor(shift.sigma)
    a = shift.mu + rng.standard_normal((n, d)) @ shift_factor.T
    noise_factor = _psd_factor(theta.joint_covariance)
    noise = rng.standard_normal((n, d + 1)) @ noise_factor.T
    x = a + noise[:, :d]
    y = x @ theta.beta_star + noise[:, d]
    return x, y


@dataclass(frozen=True)
class Dataset:
    """Per-environment sample blocks with a designated reference environment."""

    xs: tuple
    ys: tuple
    reference_index: int
    labels: tuple = None

    def __post_init__(self):
        xs = tuple(np.asarray(x, dtype=float) for x in self.xs)
        ys = tuple(np.asarray(y, dtype=float).ravel() for y in self.ys)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if not xs:
            raise ValueError("dataset must contain at least one environment")
        if len(xs) != len(ys):
            raise ValueError("xs and ys have different numbers of environments")
        d = xs[0].shape[1] if xs[0].ndim == 2 else None
        for x, y in zip(xs, ys):
            if x.ndim != 2 or x.shape[1] != d:
                raise ValueError("all environment blocks must share one dimension")
            if x.shape[0] != y.size:
                raise ValueError("X and y lengths disagree within an environment")
        if not 0 <= self.reference_index < len(xs):
            raise ValueError("reference_index out of range")
        if self.labels is not None:
            labels = tuple(str(l) for l in self.labels)
            if len(labels) != len(xs):
                raise ValueError("labels length disagrees with environments")
            object.__setattr__(self, "labels", labels)

    @property
    def n_envs(self):
        return len(self.xs)

    @property
    def dim(self):
        return self.xs[0].shape[1]

    @property
    def counts(self):
        return tuple(x.shape[0] for x in self.xs)

    @property
    def weights(self):
        counts = np.array(self.counts, dtype=float)
        return counts / counts.sum()

    def environment(self, index):
        return self.xs[index], self.ys[index]

    def pooled(self):
        return np.vstack(self.xs), np.concatenate(self.ys)

    def label_index(self, label):
        if self.labels is None:
            raise ValueError("dataset has no environment labels")
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ValueError(f"unknown environment label {label!r}") from None

    @classmethod
    def from_arrays(cls, x, y, env, reference):
        """Group pooled arrays by environment label; labels sorted for determinism."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        env = np.asarray(env)
        if x.shape[0] != y.size or env.size != y.size:
            raise ValueError("x, y and env must have matching lengths")
        labels = sorted({str(e) for e in env})
        if str(reference) not in labels:
            raise ValueError(f"unknown reference label {reference!r}")
        env = np.array([str(e) for e in env])
        xs, ys = [], []
        for lab in labels:
            mask = env == lab
            xs.append(x[mask])
            ys.append(y[mask])
        return cls(tuple(xs), tuple(ys), labels.index(str(reference)), tuple(labels))


def sample_dataset(theta, shifts, n_per_env, seed, labels=None):
    """Sample every environment; per-environment streams derive from the seed."""
    check_shift_collection(shifts)
    m = len(shifts)
    if np.isscalar(n_per_env):
        counts = [int(n_per_env)] * m
    else:
        counts = [int(n) for n in n_per_env]
        if len(counts) != m:
            raise ValueError("n_per_env length disagrees with shifts")
    xs, ys = [], []
    for e, (shift, n) in enumerate(zip(shifts, counts)):
        x, y = sample_environment(theta, shift, n, [seed, e])
        xs.append(x)
        ys.append(y)
    ref = next(i for i, s in enumerate(shifts) if s.is_reference)
    if labels is None:
        labels = tuple(f"e{i}" for i in range(m))
    return Dataset(tuple(xs), tuple(ys), ref, tuple(labels))


def _haar_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_instance(d, m, c_norm, seed, eigen_spec=None):
    """Random model parameters plus a reference and m-1 unit-norm mean shifts.

    The joint noise covariance is a random orthogonal conjugation of the
    prescribed eigenvalues (default: evenly spaced in [0.5, 2]); the initial
    coefficient has norm ``c_norm``. Deterministic given ``seed``.
    """
    if m < 1:
        raise ValueError("need at least one environment")
    rng = np.random.default_rng(seed)
    if eigen_spec is None:
        eigen_spec = np.linspace(0.5, 2.0, d + 1)
    eigen_spec = np.asarray(eigen_spec, dtype=float).ravel()
    if eigen_spec.size != d + 1 or (eigen_spec <= 0).any():
        raise ValueError("eigen_spec must give d+1 positive eigenvalues")

    q = _haar_orthogonal(rng, d + 1)
    joint = (q * eigen_spec) @ q.T
    beta = rng.standard_normal(d)
    beta *= c_norm / np.linalg.norm(beta)
    params = ModelParams(beta, joint[:d, :d], joint[:d, d], joint[d, d])

    weight = 1.0 / m
    shifts = [EnvironmentShift.reference(d, weight)]
    zero = np.zeros((d, d))
    for _ in range(m - 1):
        mu = rng.standard_normal(d)
        mu /= np.linalg.norm(mu)
        shifts.append(EnvironmentShift(mu, zero, weight))
    return params, shifts


@dataclass(frozen=True)
class AdversarialInstance:
    """Result of adversarial reparameterization; ``degenerate`` marks the case
    where the unidentified direction vanishes and no adversary exists."""

    params: ModelParams
    degenerate: bool


def adversarial_params(theta_init, seen_span, c_norm):
    """Hardest causal parameter consistent with the training moments.

    Keeps the coefficient on the seen span, points it opposite to the noise
    regression direction on the complement with total norm ``c_norm``, and
    adjusts the noise blocks so all training-environment moments are
    preserved.
    """
    from .risk import equivalent_params, identified_params

    p_seen = projection(seen_span)
    beta_seen = p_seen @ theta_init.beta_star
    seen_norm = float(np.linalg.norm(beta_seen))
    if seen_norm > c_norm * (1.0 + 1e-12):
        raise ValueError("identified part exceeds norm budget")

    direction = np.linalg.solve(theta_init.sigma_eta, theta_init.sigma_eta_xi)
    direction = direction - p_seen @ direction
    dir_norm = float(np.linalg.norm(direction))
    theta_seen = identified_params(theta_init, seen_span)
    if dir_norm <= 1e-12 * max(1.0, float(np.linalg.norm(theta_init.sigma_eta_xi))):
        degenerate = seen_span.dim < seen_span.ambient_dim
        alpha = np.zeros(theta_init.dim)
        return AdversarialInstance(equivalent_params(theta_seen, alpha), degenerate)

    radius = math.sqrt(max(0.0, c_norm**2 - seen_norm**2))
    alpha = -radius / dir_norm * direction
    return AdversarialInstance(equivalent_params(theta_seen, alpha), False)
