"""Subspace and positive semidefinite matrix machinery.

Ranges of PSD matrices, orthogonal complements, projections, Loewner-order
comparisons, and the decomposition of a test-shift bound into directions
inside and outside the span of the training shifts. All operations are pure
functions over immutable values and are safe to call concurrently.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import subspace_angles

__all__ = [
    "SubspaceBasis",
    "TestBoundDecomposition",
    "check_psd_matrix",
    "range_basis",
    "orthogonal_complement",
    "projection",
    "decompose_test_bound",
    "loewner_leq",
    "max_principal_angle",
    "psd_clip",
]

#: Orthonormality tolerance for basis columns.
ORTHO_TOL = 1e-10
#: Default relative eigenvalue cut-off used for numerical rank decisions.
DEFAULT_RANK_TOL = 1e-8


def _as_matrix(m, name):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    return m


def _canonical_signs(cols):
    """Flip column signs so the largest-magnitude entry is positive."""
    cols = np.array(cols, dtype=float)
    for j in range(cols.shape[1]):
        i = int(np.argmax(np.abs(cols[:, j])))
        if cols[i, j] < 0:
            cols[:, j] = -cols[:, j]
    return cols


def check_psd_matrix(m, name="matrix", sym_tol=1e-12, neg_tol=1e-10):
    """Validate symmetry and positive semidefiniteness; return a symmetrized copy.

    Symmetry is required within ``sym_tol`` relative to the matrix magnitude,
    and the smallest eigenvalue must be at least ``-neg_tol`` times the largest.
    """
    m = _as_matrix(m, name)
    scale = float(np.abs(m).max()) if m.size else 0.0
    if not np.allclose(m, m.T, rtol=0.0, atol=sym_tol * max(scale, 1.0)):
        raise ValueError(f"{name} must be symmetric")
    m = 0.5 * (m + m.T)
    w = np.linalg.eigvalsh(m)
    if w.size and w[0] < -neg_tol * max(w[-1], 0.0):
        raise ValueError(
            f"{name} must be positive semidefinite (min eigenvalue {w[0]:.3e})"
        )
    return m


def psd_clip(m):
    """Symmetrize and clip negative eigenvalues at zero."""
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.T


@dataclass(frozen=True)
class SubspaceBasis:
    """Semi-orthogonal column basis of a subspace of R^d.

    ``columns`` is a d-by-k matrix with orthonormal columns; k = 0 encodes the
    trivial subspace, in which case the associated projection is zero.
    """

    ambient_dim: int
    columns: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=float)
        if cols.ndim != 2:
            cols = cols.reshape(self.ambient_dim, -1)
        object.__setattr__(self, "columns", cols)
        d = int(self.ambient_dim)
        if d <= 0:
            raise ValueError("ambient_dim must be a positive integer")
        if cols.shape[0] != d:
            raise ValueError(
                f"columns have {cols.shape[0]} rows, expected ambient_dim={d}"
            )
        k = cols.shape[1]
        if k > d:
            raise ValueError(f"subspace dimension {k} exceeds ambient dimension {d}")
        if k:
            gram = cols.T @ cols
            if not np.allclose(gram, np.eye(k), rtol=0.0, atol=ORTHO_TOL):
                raise ValueError("basis columns must be orthonormal")

    @property
    def dim(self):
        return self.columns.shape[1]

    @classmethod
    def empty(cls, ambient_dim):
        return cls(ambient_dim, np.empty((ambient_dim, 0)))

    @classmethod
    def full(cls, ambient_dim):
        return cls(ambient_dim, np.eye(ambient_dim))


@dataclass(frozen=True)
class TestBoundDecomposition:
    """Test-shift bound split into seen and unseen parts.

    ``m_seen`` is a PSD matrix supported on the span of training shifts and
    scaled by ``gamma``; ``unseen_basis`` spans the shift directions orthogonal
    to it, scaled by ``gamma_prime``.
    """

    gamma: float
    m_seen: np.ndarray
    gamma_prime: float
    unseen_basis: SubspaceBasis

    def __post_init__(self):
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "gamma_prime", float(self.gamma_prime))
        object.__setattr__(
            self, "m_seen", check_psd_matrix(self.m_seen, "m_seen", sym_tol=1e-9)
        )
        if self.gamma < 0 or self.gamma_prime < 0:
            raise ValueError("shift strengths must be nonnegative")
        if self.m_seen.shape[0] != self.unseen_basis.ambient_dim:
            raise ValueError("m_seen and unseen_basis dimensions disagree")

    @property
    def unseen_projection(self):
        return projection(self.unseen_basis)


def range_basis(m, rank_spec=DEFAULT_RANK_TOL):
    """Orthonormal basis of the numerical range of a symmetric matrix.

    ``rank_spec`` is either an exact rank (integer, keeps exactly that many
    top eigenvectors) or a relative eigenvalue threshold in (0, 1) applied
    against the largest eigenvalue.
    """
    m = _as_matrix(m, "m")
    scale = float(np.abs(m).max()) if m.size else 0.0
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-8 * max(scale, 1.0)):
        raise ValueError("range_basis requires a symmetric matrix")
    m = 0.5 * (m + m.T)
    d = m.shape[0]
    w, v = np.linalg.eigh(m)
    w, v = w[::-1], v[:, ::-1]

    if isinstance(rank_spec, bool):
        raise TypeError("rank_spec must be an integer rank or a float threshold")
    if isinstance(rank_spec, (int, np.integer)):
        r = int(rank_spec)
        if r < 0 or r > d:
            raise ValueError(f"exact rank must lie in [0, {d}], got {r}")
        cols = v[:, :r]
    elif isinstance(rank_spec, (float, np.floating)):
        t = float(rank_spec)
        if not 0.0 < t < 1.0:
            raise ValueError("relative eigenvalue threshold must lie in (0, 1)")
        if w.size and w[0] > 0:
            cols = v[:, w > t * w[0]]
        else:
            cols = v[:, :0]
    else:
        raise TypeError("rank_spec must be an integer rank or a float threshold")
    return SubspaceBasis(d, _canonical_signs(cols))


def orthogonal_complement(b):
    """Orthonormal basis of the orthogonal complement of ``b``."""
    d, k = b.ambient_dim, b.dim
    if k == 0:
        return SubspaceBasis.full(d)
    if k == d:
        return SubspaceBasis.empty(d)
    u, _, _ = np.linalg.svd(b.columns, full_matrices=True)
    return SubspaceBasis(d, _canonical_signs(u[:, k:]))


def projection(b):
    """Orthogonal projection matrix onto the span of ``b`` (zero for k = 0)."""
    return b.columns @ b.columns.T


def decompose_test_bound(
    m_test,
    seen_span,
    gamma,
    gamma_prime,
    rank_spec=DEFAULT_RANK_TOL,
    unseen_rank_spec=None,
):
    """Split a test-shift bound along a span of training shifts.

    The seen part is the projection onto the range of ``P_S @ m_test`` and the
    unseen basis spans the range of ``P_S_perp @ m_test``; singular values are
    cut relative to the spectral norm of ``m_test``. ``unseen_rank_spec``
    optionally overrides the cut on the unseen side with an exact rank, for
    settings where the number of new shift directions is known.
    """
    m = check_psd_matrix(m_test, "m_test")
    d = m.shape[0]
    if seen_span.ambient_dim != d:
        raise ValueError("m_test and seen_span dimensions disagree")
    gamma, gamma_prime = float(gamma), float(gamma_prime)
    if gamma < 0 or gamma_prime < 0:
        raise ValueError("shift strengths must be nonnegative")

    scale = float(np.linalg.eigvalsh(m)[-1]) if m.size else 0.0
    scale = max(scale, 0.0)
    p_seen = projection(seen_span)

    def _left_vectors(prod, spec):
        u, s, _ = np.linalg.svd(prod)
        if spec is None or isinstance(spec, (float, np.floating)):
            tol = float(spec) if spec is not None else DEFAULT_RANK_TOL
            keep = s > tol * scale if scale > 0 else s > 0
            return u[:, keep]
        r = int(spec)
        if r < 0 or r > d:
            raise ValueError(f"exact rank must lie in [0, {d}], got {r}")
        return u[:, :r]

    u_seen = _left_vectors(p_seen @ m, rank_spec)
    m_seen = u_seen @ u_seen.T
    u_unseen = _left_vectors(
        (np.eye(d) - p_seen) @ m,
        unseen_rank_spec if unseen_rank_spec is not None else rank_spec,
    )
    unseen = SubspaceBasis(d, _canonical_signs(u_unseen))
    return TestBoundDecomposition(gamma, m_seen, gamma_prime, unseen)


def loewner_leq(a, b, tol=1e-10):
    """Whether ``a`` precedes ``b`` in the Loewner order, up to ``tol``.

    True iff the smallest eigenvalue of ``b - a`` is at least ``-tol`` times
    the largest eigenvalue of ``b``.
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = 0.5 * (b + b.T) - 0.5 * (a + a.T)
    w_min = float(np.linalg.eigvalsh(diff)[0])
    b_max = float(np.linalg.eigvalsh(0.5 * (b + b.T))[-1])
    return bool(w_min >= -tol * max(b_max, 0.0))


def max_principal_angle(b1, b2):
    """Largest principal angle between two subspaces of equal dimension."""
    if b1.ambient_dim != b2.ambient_dim:
        raise ValueError("subspaces live in different ambient spaces")
    if b1.dim != b2.dim:
        raise ValueError("subspaces have different dimensions")
    if b1.dim == 0:
        return 0.0
    return float(subspace_angles(b1.columns, b2.columns).max())
