"""Data factories: the cubic 3-D toy system and a synthetic noisy ridge.

The toy vector field is an exact ridge function of two directions, so its
true reduced basis and reduced map are known in closed form.

Trajectories are integrated with a Dormand-Prince 5(4) pair. All
trajectories advance together in numpy arrays, but every trajectory keeps its
own time, step size and error control, and all arithmetic is elementwise, so
a trajectory's samples do not depend on which other trajectories share the
batch.
"""
import numpy as np

from .dataset import Dataset
from .densela import make_rng
from .exceptions import IntegrationError
from .grassmann import init_random

_R2 = np.sqrt(2.0)

TOY_CENTER = (4.0, 3.0, -2.0)
TOY_WIDTH = 2.0
TOY_T_END = 5.0
TOY_N_STAMPS = 202


def toy_rhs(x):
    """``[x2^3, -((x1 + x3)/2)^3 - x2/5, x2^3]`` for a state or a batch of states."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    c = x2 * x2 * x2
    s = 0.5 * (x1 + x3)
    return np.stack([c, -(s * s * s) - x2 / 5.0, c], axis=-1)


def toy_jacobian(x):
    """Analytic Jacobian, shape ``(3, 3)`` or ``(B, 3, 3)``."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    d2 = 3.0 * x2 * x2
    s = 0.5 * (x1 + x3)
    ds = -1.5 * s * s
    zero = np.zeros_like(x1)
    rows = [
        np.stack([zero, d2, zero], axis=-1),
        np.stack([ds, np.full_like(x1, -0.2), ds], axis=-1),
        np.stack([zero, d2, zero], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def toy_exact_basis():
    return np.array([[1 / _R2, 0.0], [0.0, 1.0], [1 / _R2, 0.0]])


def toy_exact_g(y):
    """Reduced map with ``toy_rhs(x) == toy_exact_g(U^T x)``."""
    y = np.asarray(y, dtype=float)
    y1, y2 = y[..., 0], y[..., 1]
    c = y2 * y2 * y2
    s = y1 / _R2
    return np.stack([c, -(s * s * s) - y2 / 5.0, c], axis=-1)


# -- Dormand-Prince 5(4) ---------------------------------------------------

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
# 5th-order minus embedded 4th-order weights, seven stages (FSAL stage last)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# Shampine's continuous extension: y(t0 + s h) = y0 + h sum_j K_j P_j(s)
_P = (
    (1.0, -8048581381 / 2820520608, 8663915743 / 2820520608,
     -12715105075 / 11282082432),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 131558114200 / 32700410799, -68118460800 / 10900136933,
     87487479700 / 32700410799),
    (0.0, -1754552775 / 470086768, 14199869525 / 1410260304,
     -10690763975 / 1880347072),
    (0.0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632),
    (0.0, -282668133 / 205662961, 2019193451 / 616988883,
     -1453857185 / 822651844),
    (0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423),
)
_SAFETY, _MIN_FACTOR, _MAX_FACTOR = 0.9, 0.2, 10.0


def _combo(coeffs, ks):
    # Fixed-order elementwise accumulation; avoids BLAS so each row's result
    # is independent of the batch it sits in.
    acc = None
    for c, k in zip(coeffs, ks):
        if c == 0.0:
            continue
        acc = c * k if acc is None else acc + c * k
    return acc


def _rms(v):
    return np.sqrt(np.mean(v * v, axis=-1))


def _initial_step(fun, y0, f0, rtol, atol, t_span):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h0 = np.minimum(h0, t_span)
    y1 = y0 + h0[:, None] * f0
    d2 = _rms((fun(y1) - f0) / scale) / h0
    big = np.maximum(d1, d2)
    h1 = np.where(big <= 1e-15, np.maximum(1e-6, h0 * 1e-3),
                  (0.01 / np.maximum(big, 1e-300)) ** (1 / 5))
    return np.minimum(np.minimum(100 * h0, h1), t_span)


def dopri5(fun, y0, t_eval, rtol=1e-9, atol=1e-9, max_steps=10_000_000):
    """Integrate the autonomous system ``y' = fun(y)`` for a batch of states.

    Parameters
    ----------
    fun : callable
        Maps ``(B, d)`` states to ``(B, d)`` derivatives, row-wise.
    y0 : ndarray, shape (B, d)
    t_eval : ndarray, shape (S,)
        Increasing output times; ``t_eval[0]`` is the start time.

    Returns
    -------
    ndarray, shape (B, S, d)
        States at ``t_eval``; the first stamp is ``y0`` exactly.
    """
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    t_eval = np.asarray(t_eval, dtype=float)
    B, d = y0.shape
    S = t_eval.size
    t0, t_end = t_eval[0], t_eval[-1]
    out = np.empty((B, S, d))
    out[:, 0] = y0
    if S == 1 or t_end == t0:
        out[:] = y0[:, None, :]
        return out

    y = y0.copy()
    f = fun(y)
    t = np.full(B, t0)
    h = _initial_step(fun, y, f, rtol, atol, np.full(B, t_end - t0))
    nxt = np.ones(B, dtype=np.int64)          # next stamp to fill
    rejected = np.zeros(B, dtype=bool)
    active = np.arange(B)
    steps = 0
    while active.size:
        steps += 1
        if steps > max_steps:
            raise IntegrationError("step budget exhausted", int(active[0]))
        ya, fa, ta = y[active], f[active], t[active]
        ha = np.minimum(h[active], t_end - ta)
        last = ta + ha >= t_end
        hc = ha[:, None]
        ks = [fa]
        for a in _A[1:]:
            ks.append(fun(ya + hc * _combo(a, ks)))
        y_new = ya + hc * _combo(_B, ks)
        f_new = fun(y_new)
        ks.append(f_new)
        err = hc * _combo(_E, ks)
        scale = atol + np.maximum(np.abs(ya), np.abs(y_new)) * rtol
        en = _rms(err / scale)
        en = np.where(np.isfinite(en), en, np.inf)  # overflowed stages: reject, shrink hard
        ok = en < 1.0
        with np.errstate(divide="ignore"):
            grow = np.where(en == 0.0, _MAX_FACTOR,
                            np.minimum(_MAX_FACTOR, _SAFETY * en ** -0.2))
            shrink = np.maximum(_MIN_FACTOR, _SAFETY * en ** -0.2)
        grow = np.where(rejected[active], np.minimum(grow, 1.0), grow)

        # rejected steps
        bad = active[~ok]
        if bad.size:
            h[bad] = ha[~ok] * shrink[~ok]
            rejected[bad] = True
            tiny = h[bad] < 10 * np.spacing(np.abs(t[bad]) + 1.0)
            if np.any(tiny):
                raise IntegrationError("step size underflow", int(bad[tiny][0]))

        # accepted steps: dense output at every stamp passed
        if np.any(ok):
            good = active[ok]
            t_new = np.where(last[ok], t_end, ta[ok] + ha[ok])
            hg = ha[ok]
            yo = ya[ok]
            kg = [k[ok] for k in ks]
            q = [_combo([_P[s][p] for s in range(7)], kg) for p in range(4)]
            while True:
                idx = nxt[good]
                pending = idx < S
                stamp = t_eval[np.minimum(idx, S - 1)]
                hit = pending & (stamp <= t_new)
                if not np.any(hit):
                    break
                rows = np.nonzero(hit)[0]
                th = (stamp[rows] - ta[ok][rows]) / hg[rows]
                th = th[:, None]
                poly = q[0][rows] * th
                pw = th
                for p in range(1, 4):
                    pw = pw * th
                    poly = poly + q[p][rows] * pw
                out[good[rows], idx[rows]] = yo[rows] + hg[rows][:, None] * poly
                nxt[good[rows]] += 1
            y[good] = y_new[ok]
            f[good] = f_new[ok]
            t[good] = t_new
            h[good] = hg * grow[ok]
            rejected[good] = False
            if not np.all(np.isfinite(y_new[ok])):
                bad_row = good[~np.all(np.isfinite(y_new[ok]), axis=1)][0]
                raise IntegrationError("state became non-finite", int(bad_row))
        active = active[(t[active] < t_end) | (nxt[active] < S)]
    return out


def generate_trajectories(n_traj, center=TOY_CENTER, width=TOY_WIDTH,
                          t_end=TOY_T_END, n_stamps=TOY_N_STAMPS, seed=None,
                          rtol=1e-9, atol=1e-9):
    """Sample toy-system trajectories from uniform initial states.

    Each trajectory draws its initial state from its own child stream of
    ``seed``, so the dataset is identical however the work is split.

    Returns
    -------
    Dataset
        ``n_traj * n_stamps`` samples with analytic outputs, Jacobians and
        trajectory ids ``0..n_traj-1``.
    """
    if n_traj < 1 or n_stamps < 1:
        raise ValueError("n_traj and n_stamps must be >= 1")
    if width < 0:
        raise ValueError("width must be nonnegative")
    center = np.asarray(center, dtype=float)
    children = np.random.SeedSequence(seed).spawn(n_traj)
    x0 = np.array([center + make_rng(c).uniform(-1.0, 1.0, center.size) * width
                   if width > 0 else center.copy() for c in children])
    t_eval = np.linspace(0.0, t_end, n_stamps)
    states = dopri5(toy_rhs, x0, t_eval, rtol=rtol, atol=atol)
    x = states.reshape(-1, center.size)
    ids = np.repeat(np.arange(n_traj), n_stamps)
    return Dataset(x, toy_rhs(x), toy_jacobian(x), ids)


def ridge_profile(y):
    """Nonlinear scalar profile used by :func:`make_noisy_ridge` (needs k >= 3)."""
    y1, y2, y3 = y[:, 0], y[:, 1], y[:, 2]
    return np.exp(y1) + np.sin(3.0 * y2) + 2.0 * y3 * y3 + y1 * y2


def ridge_profile_grad(y):
    y1, y2, y3 = y[:, 0], y[:, 1], y[:, 2]
    g = np.zeros_like(y)
    g[:, 0] = np.exp(y1) + y2
    g[:, 1] = 3.0 * np.cos(3.0 * y2) + y1
    g[:, 2] = 4.0 * y3
    return g


def make_noisy_ridge(n_points, m=18, k=3, noise=0.05, seed=None):
    """Scalar ridge ``f(x) = p(U^T x)`` plus Gaussian output noise.

    Inputs are uniform on ``[-1, 1]^m`` and ``U`` is a random point of
    Gr(k, m). The noise standard deviation is ``noise`` times the RMS of the
    clean outputs. Jacobians are those of the clean function.

    Returns
    -------
    data : Dataset
    basis : ndarray, shape (m, k)
        The true ridge directions.
    """
    if k < 3:
        raise ValueError("the ridge profile uses three directions; need k >= 3")
    rng = make_rng(seed)
    basis = init_random(m, k, rng)
    x = rng.uniform(-1.0, 1.0, (n_points, m))
    y = x @ basis
    clean = ridge_profile(y)
    sigma = noise * np.sqrt(np.mean(clean * clean))
    f = clean + sigma * rng.standard_normal(n_points)
    jac = (ridge_profile_grad(y) @ basis.T)[:, None, :]
    return Dataset(x, f[:, None], jac), basis
