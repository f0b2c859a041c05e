"""Active subspaces from Jacobian samples.

The gradient second-moment matrix ``C = E[Df^T Df]`` is never formed
explicitly; its eigenpairs come from the SVD of the scaled, stacked transposed
Jacobians, which is better conditioned when the spectrum is small.
"""
from dataclasses import dataclass

import numpy as np

from .densela import make_rng, svd
from .exceptions import DegenerateSpectrumError, DimensionError


@dataclass(frozen=True)
class SpectralInfo:
    """Eigenvalues (descending, clamped at 0) and eigenvectors of ``C``."""

    eigenvalues: np.ndarray
    w: np.ndarray
    k_split: int

    @property
    def w1(self):
        return self.w[:, :self.k_split]

    @property
    def w2(self):
        return self.w[:, self.k_split:]


def check_basis(u, tol=1e-10):
    """Validate that ``u`` (m x k) has orthonormal columns; return it as float."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] > u.shape[0] or u.shape[1] < 1:
        raise DimensionError(f"basis must be m x k with 1 <= k <= m, got {u.shape}")
    err = np.max(np.abs(u.T @ u - np.eye(u.shape[1])))
    if not err <= tol:
        raise DimensionError(f"basis columns are not orthonormal (error {err:.3e})")
    return u


def assemble_gradient_matrix(data):
    """Stack ``Df(x_l)^T / sqrt(M)`` side by side into an ``m x nM`` matrix."""
    jac = data.require_jacobians()
    M, n, m = jac.shape
    if M < 1:
        raise DimensionError("need at least one sample")
    # block l occupies columns l*n:(l+1)*n and equals Df(x_l)^T
    return jac.transpose(2, 0, 1).reshape(m, M * n) / np.sqrt(M)


def active_subspace(data, k):
    """First ``k`` eigenvectors of the empirical gradient second-moment matrix.

    Parameters
    ----------
    data : Dataset
        Must carry Jacobians.
    k : int
        Subspace dimension, ``1 <= k <= m``.

    Returns
    -------
    basis : ndarray, shape (m, k)
    spectral : SpectralInfo
    """
    a = assemble_gradient_matrix(data)
    m = a.shape[0]
    if not 1 <= k <= m:
        raise DimensionError(f"k must satisfy 1 <= k <= m={m}, got {k}")
    # full left factor only when the column count is short; W must be m x m
    u, s, _ = svd(a, full=a.shape[1] < m)
    u = u[:, :m]
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateSpectrumError("all gradient samples are zero")
    lam = np.zeros(m)
    lam[:s.size] = s[:m] ** 2
    lam = np.maximum(lam, 0.0)
    spectral = SpectralInfo(lam, u, k)
    return u[:, :k].copy(), spectral


def rotated_gradient_energy(data, spectral, k):
    """Mean squared gradient norms along ``W1`` and ``W2``.

    Returns ``(e_y, e_z)`` with ``e_y = mean_l ||Df(x_l) W1||_F^2`` and
    ``e_z`` the same for the complement ``W2``.
    """
    jac = data.require_jacobians()
    w = np.asarray(spectral.w)
    M, n, m = jac.shape
    if w.shape != (m, m):
        raise DimensionError(f"spectral.w must be {m} x {m}, got {w.shape}")
    if not 0 <= k <= m:
        raise DimensionError(f"k must lie in [0, {m}], got {k}")
    e_y = np.sum((jac @ w[:, :k]) ** 2) / M
    e_z = np.sum((jac @ w[:, k:]) ** 2) / M
    return float(e_y), float(e_z)


@dataclass(frozen=True)
class Sampler:
    """Distribution of the inactive coordinates ``z`` given ``y``.

    ``kind`` is ``"normal"`` (independent standard normal), ``"uniform"``
    (independent uniform on ``[low, high]``) or ``"fixed"`` (all mass at
    ``value``, which defaults to the origin).
    """

    kind: str = "normal"
    low: float = -1.0
    high: float = 1.0
    value: tuple = None

    def draw(self, rng, n_mc, dim):
        if self.kind == "normal":
            return rng.standard_normal((n_mc, dim))
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, (n_mc, dim))
        if self.kind == "fixed":
            z = np.zeros(dim) if self.value is None else np.asarray(self.value, float)
            return np.tile(z, (n_mc, 1))
        raise ValueError(f"unknown sampler kind {self.kind!r}")


def complement_basis(basis):
    """Orthonormal basis of the orthogonal complement of ``span(basis)``."""
    basis = check_basis(basis)
    m, k = basis.shape
    u, _, _ = svd(basis, full=True)
    return u[:, k:]


def conditional_expectation_oracle(f, basis, y, sampler=Sampler(), n_mc=1000,
                                   rng=None):
    """Monte Carlo estimate of ``E[f(W1 y + W2 z) | y]``.

    Test utility only: every evaluation happens in the ambient dimension.
    The inactive directions ``W2`` are any orthonormal completion of ``basis``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    basis = check_basis(basis)
    rng = make_rng(rng)
    w2 = complement_basis(basis)
    y = np.asarray(y, dtype=float).reshape(-1)
    z = sampler.draw(rng, n_mc, w2.shape[1])
    xs = basis @ y + z @ w2.T
    vals = np.array([np.atleast_1d(f(x)) for x in xs], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("f returned a non-finite value")
    return vals.mean(axis=0)
