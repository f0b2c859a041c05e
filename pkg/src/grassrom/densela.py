"""Small dense linear-algebra layer with deterministic sign conventions.

LAPACK (through numpy) does the heavy lifting; this module only enforces the
conventions the rest of the package relies on: nonnegative ``R`` diagonals in
QR, descending spectra, and column signs chosen so the largest-magnitude entry
of every singular/eigen vector is positive.
"""
import numpy as np
from scipy.linalg import subspace_angles

from .exceptions import ContractError, RankDeficiencyError

RANK_TOL = 1e-14


def make_rng(seed=None):
    """Return a seeded ``numpy.random.Generator`` (PCG64)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def rng_uniform(rng, lo, hi, size=None):
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    return rng.uniform(lo, hi, size)


def rng_normal(rng, size=None):
    return rng.standard_normal(size)


def _check_finite(a, name="a"):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def _fix_signs(u, *others):
    # Flip each column so its largest-magnitude entry is positive; apply the
    # same flips to the paired factors.
    if u.size == 0:
        return (u,) + others
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return (u * signs,) + tuple(o * signs for o in others)


def thin_qr(a):
    """Reduced QR factorization with ``diag(r) >= 0``.

    Parameters
    ----------
    a : array_like, shape (m, k), m >= k

    Returns
    -------
    q : ndarray, shape (m, k)
    r : ndarray, shape (k, k)

    Raises
    ------
    RankDeficiencyError
        If some ``|r_ii|`` falls below ``1e-14 * ||a||_F``.
    """
    a = _check_finite(a)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise ValueError(f"thin_qr needs an m x k array with m >= k, got {a.shape}")
    q, r = np.linalg.qr(a, mode="reduced")
    d = np.diag(r)
    scale = np.linalg.norm(a)
    if a.shape[1] and (scale == 0 or np.min(np.abs(d)) < RANK_TOL * scale):
        raise RankDeficiencyError("matrix is numerically rank deficient")
    signs = np.where(d < 0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def svd(a, full=False):
    """Singular value decomposition ``a = u @ diag(sigma) @ v.T``.

    ``sigma`` is descending. With ``full=True`` the factors are square, which
    gives a complete orthonormal basis for the column space complement.
    """
    a = _check_finite(a)
    u, s, vt = np.linalg.svd(a, full_matrices=full)
    v = vt.T.copy()
    r = s.size
    u[:, :r], v[:, :r] = _fix_signs(u[:, :r], v[:, :r])
    if full:
        if u.shape[1] > r:
            u[:, r:] = _fix_signs(u[:, r:])[0]
        if v.shape[1] > r:
            v[:, r:] = _fix_signs(v[:, r:])[0]
    return u, s, v


def sym_eig(c):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    c = _check_finite(c, "c")
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got {c.shape}")
    scale = np.max(np.abs(c)) if c.size else 0.0
    if np.max(np.abs(c - c.T), initial=0.0) > 1e-10 * scale:
        raise ContractError("sym_eig input is not symmetric")
    lam, w = np.linalg.eigh(c)
    lam, w = lam[::-1], w[:, ::-1]
    (w,) = _fix_signs(w)
    return lam.copy(), w


def principal_angles(u1, u2):
    """Principal angles (radians, descending) between two column spaces."""
    return subspace_angles(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
