"""Optimization over the Grassmann manifold Gr(k, m).

Points are represented by ``m x k`` matrices with orthonormal columns. The
tangent space at ``U`` is ``{xi : U^T xi = 0}``; retraction is the Q factor
of ``U + xi``.
"""
from dataclasses import dataclass, field

import numpy as np

from .densela import thin_qr
from .exceptions import DimensionError, RankDeficiencyError


class RetractionError(RankDeficiencyError):
    """``U + xi`` lost rank, so no retraction exists for this step."""


def _check_dims(m, k):
    if not 1 <= k <= m:
        raise DimensionError(f"need 1 <= k <= m, got m={m}, k={k}")


def init_identity(m, k):
    """``[I_k; 0]``: the first ``k`` coordinate directions."""
    _check_dims(m, k)
    return np.eye(m, k)


def init_random(m, k, rng):
    """Q factor of an ``m x k`` standard-normal matrix (uniform on Gr(k, m))."""
    _check_dims(m, k)
    q, _ = thin_qr(rng.standard_normal((m, k)))
    return q


def project_tangent(u, g):
    """Project ``g`` onto the tangent space at ``u``: ``(I - U U^T) g``."""
    g = np.asarray(g, dtype=float)
    if g.shape != u.shape:
        raise DimensionError(f"shape mismatch: basis {u.shape}, direction {g.shape}")
    return g - u @ (u.T @ g)


def retract(u, xi):
    """QR retraction of the tangent vector ``xi`` at ``u``."""
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return u.copy()
    try:
        q, _ = thin_qr(u + xi)
    except RankDeficiencyError as exc:
        raise RetractionError(str(exc)) from exc
    return q


def euclidean_grad_u(params, basis, x, f):
    """Gradient in ``U`` of the mean squared residual (no regularizer).

    For ``y_l = U^T x_l`` and ``r_l = f(x_l) - g(y_l)`` this is
    ``-(2/M) sum_l x_l (J_g(y_l)^T r_l)^T``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = np.asarray(f, dtype=float).reshape(x.shape[0], -1)
    M = x.shape[0]
    y = x @ basis
    z = y @ params.a1.T + params.b1
    mask = z > 0
    r = f - (np.where(mask, z, 0.0) @ params.a2.T + params.b2)
    dy = ((r @ params.a2) * mask) @ params.a1
    return (-2.0 / M) * (x.T @ dy)


def data_loss(params, basis, x, f):
    """Mean squared residual of ``g(U^T x)``; the subspace subproblem loss."""
    y = x @ basis
    z = np.maximum(y @ params.a1.T + params.b1, 0.0)
    r = f - (z @ params.a2.T + params.b2)
    return float(np.sum(r * r) / x.shape[0])


@dataclass
class DescentOptions:
    """Line-search and stopping settings for :func:`steepest_descent`."""

    tol: float = 1e-6
    max_iters: int = 100
    armijo: float = 1e-4
    contraction: float = 0.5
    initial_step: float = 1.0
    optimism: float = 2.0
    min_step: float = 1e-16
    ortho_tol: float = 1e-10


@dataclass
class DescentResult:
    basis: np.ndarray
    iterations: int
    grad_norm: float
    loss: float
    stalled: bool = False
    losses: list = field(default_factory=list)
    ortho_errors: list = field(default_factory=list)


def steepest_descent(loss, grad, u0, opts=None):
    """Riemannian steepest descent with Armijo backtracking.

    Parameters
    ----------
    loss : callable
        ``loss(U) -> float``.
    grad : callable
        ``grad(U) -> (m, k)`` Euclidean gradient; projected internally.
    u0 : ndarray, shape (m, k)
        Starting point with orthonormal columns.
    opts : DescentOptions, optional

    Notes
    -----
    The first trial step is ``opts.initial_step``. Later trials start from
    ``opts.optimism`` times the step at which a quadratic model through the
    previous decrease ``delta`` would be minimized, ``2 delta / ||grad||^2``,
    then contract until the Armijo test passes. Doubling the last accepted
    step instead can lock onto a step that overshoots the minimizer by the
    same amount every time and stagnate.

    Returns
    -------
    DescentResult
        ``stalled`` is set when backtracking shrank the step below
        ``opts.min_step``; the best iterate so far is returned either way.
    """
    opts = opts or DescentOptions()
    u = np.array(u0, dtype=float)
    cur = loss(u)
    losses = [cur]
    ortho = [float(np.max(np.abs(u.T @ u - np.eye(u.shape[1]))))]
    step0 = opts.initial_step
    rg = project_tangent(u, grad(u))
    gnorm = float(np.linalg.norm(rg))
    it = 0
    stalled = False
    while gnorm > opts.tol and it < opts.max_iters:
        gsq = gnorm * gnorm
        step = step0
        accepted = False
        while step >= opts.min_step:
            try:
                cand = retract(u, -step * rg)
            except RetractionError:
                step *= opts.contraction
                continue
            new = loss(cand)
            # compare the decrease itself; cur - c*t*g^2 can round back to cur
            if np.isfinite(new) and cur - new >= opts.armijo * step * gsq:
                accepted = True
                break
            step *= opts.contraction
        if not accepted:
            stalled = True
            break
        decrease = cur - new
        u, cur = cand, new
        err = float(np.max(np.abs(u.T @ u - np.eye(u.shape[1]))))
        if err > opts.ortho_tol:
            raise ArithmeticError(f"basis lost orthonormality ({err:.3e})")
        ortho.append(err)
        losses.append(cur)
        it += 1
        rg = project_tangent(u, grad(u))
        gnorm = float(np.linalg.norm(rg))
        if gnorm > 0 and decrease > 0:
            step0 = opts.optimism * 2.0 * decrease / (gnorm * gnorm)
        else:
            step0 = step
    return DescentResult(u, it, gnorm, cur, stalled, losses, ortho)


def fit_basis(params, basis, x, f, opts=None):
    """Solve the subspace subproblem for a fixed network."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = np.asarray(f, dtype=float).reshape(x.shape[0], -1)
    return steepest_descent(lambda u: data_loss(params, u, x, f),
                            lambda u: euclidean_grad_u(params, u, x, f),
                            basis, opts)
