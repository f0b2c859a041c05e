"""Two-layer ReLU network on reduced coordinates, plus the bowtie baseline.

The surrogate is ``g(y) = A2 relu(A1 y + b1) + b2`` evaluated at
``y = U^T x``. The bowtie network replaces the orthonormal ``U^T`` by a free
``k x m`` matrix ``A0``. Everything here works on batches: ``x`` is
``(B, m)``, ``y`` is ``(B, k)``, outputs are ``(B, n)``.
"""
from dataclasses import dataclass, fields

import numpy as np

from .exceptions import DimensionError


@dataclass
class NetParams:
    a1: np.ndarray  # (h, k)
    b1: np.ndarray  # (h,)
    a2: np.ndarray  # (n, h)
    b2: np.ndarray  # (n,)

    @property
    def k(self):
        return self.a1.shape[1]

    @property
    def h(self):
        return self.a1.shape[0]

    @property
    def n(self):
        return self.a2.shape[0]

    def arrays(self):
        return [getattr(self, f.name) for f in fields(self)]

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, theta):
        """New parameters of the same shapes filled from a flat vector."""
        theta = np.asarray(theta, dtype=float)
        out, pos = [], 0
        for a in self.arrays():
            out.append(theta[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != theta.size:
            raise DimensionError(f"expected {pos} entries, got {theta.size}")
        return type(self)(*out)

    def copy(self):
        return type(self)(*[a.copy() for a in self.arrays()])

    def sq_norm(self):
        return float(sum(np.sum(a * a) for a in self.arrays()))

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __len__(self):
        return sum(a.size for a in self.arrays())


@dataclass
class BowtieParams(NetParams):
    a0: np.ndarray = None  # (k, m), unconstrained

    @property
    def m(self):
        return self.a0.shape[1]

    def net(self):
        """The network part, sharing memory with ``self``."""
        return NetParams(self.a1, self.b1, self.a2, self.b2)


def param_count(k, h, n):
    return h * (k + n + 1) + n


def bowtie_param_count(k, h, n, m):
    return k * m + h * (k + 1) + n * (h + 1)


def init_params(k, h, n, rng):
    """Fan-in uniform init: layer 1 on ``[-1/sqrt(k), 1/sqrt(k)]``, layer 2 on
    ``[-1/sqrt(h), 1/sqrt(h)]``; biases share their layer's bound."""
    if min(k, h, n) < 1:
        raise DimensionError("k, h and n must all be >= 1")
    s1, s2 = 1.0 / np.sqrt(k), 1.0 / np.sqrt(h)
    a1 = rng.uniform(-s1, s1, (h, k))
    b1 = rng.uniform(-s1, s1, h)
    a2 = rng.uniform(-s2, s2, (n, h))
    b2 = rng.uniform(-s2, s2, n)
    return NetParams(a1, b1, a2, b2)


def init_bowtie_params(k, h, n, m, rng):
    """Network init as :func:`init_params`; ``A0`` on ``[-1/sqrt(m), 1/sqrt(m)]``."""
    net = init_params(k, h, n, rng)
    s0 = 1.0 / np.sqrt(m)
    a0 = rng.uniform(-s0, s0, (k, m))
    return BowtieParams(net.a1, net.b1, net.a2, net.b2, a0)


def _as_batch(y, dim):
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != dim:
        raise DimensionError(f"expected inputs with {dim} columns, got {y.shape}")
    return y, single


def forward(params, y):
    """Evaluate ``g`` at ``y`` (a single ``k``-vector or a ``(B, k)`` batch).

    Row ``l`` of a batched result is bit-identical to evaluating row ``l``
    alone (einsum avoids BLAS, whose blocking depends on the batch size).
    """
    yb, single = _as_batch(y, params.k)
    hid = np.maximum(np.einsum("bk,hk->bh", yb, params.a1) + params.b1, 0.0)
    out = np.einsum("bh,nh->bn", hid, params.a2) + params.b2
    return out[0] if single else out


def predict(params, basis, x):
    """Surrogate ``g(U^T x)`` for a batch ``x`` of shape ``(B, m)``, row-exact."""
    xb, single = _as_batch(x, basis.shape[0])
    out = forward(params, np.einsum("bm,mk->bk", xb, basis))
    return out[0] if single else out


def predict_fast(params, y):
    # BLAS path for full-set objectives and metrics
    hid = np.maximum(y @ params.a1.T + params.b1, 0.0)
    return hid @ params.a2.T + params.b2


def objective(params, basis, x, f, lambda_reg):
    """Mean squared residual plus ``lambda_reg * ||theta||^2``.

    ``basis`` is never regularized.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("objective of an empty dataset")
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    r = np.asarray(f, dtype=float).reshape(x.shape[0], -1) - predict_fast(params, x @ basis)
    return float(np.sum(r * r) / x.shape[0] + lambda_reg * params.sq_norm())


def _net_backward(params, y, f, lambda_reg):
    # Returns (loss, NetParams gradient, gradient w.r.t. y). ReLU'(0) := 0.
    B = y.shape[0]
    z = y @ params.a1.T + params.b1
    mask = z > 0
    hid = np.where(mask, z, 0.0)
    r = f - (hid @ params.a2.T + params.b2)
    loss = np.sum(r * r) / B + lambda_reg * params.sq_norm()
    dout = (-2.0 / B) * r                      # (B, n)
    ga2 = dout.T @ hid
    gb2 = dout.sum(axis=0)
    dz = (dout @ params.a2) * mask             # (B, h)
    ga1 = dz.T @ y
    gb1 = dz.sum(axis=0)
    dy = dz @ params.a1                        # (B, k)
    two_lam = 2.0 * lambda_reg
    grad = NetParams(ga1 + two_lam * params.a1, gb1 + two_lam * params.b1,
                     ga2 + two_lam * params.a2, gb2 + two_lam * params.b2)
    return float(loss), grad, dy


def backward(params, basis, x, f, lambda_reg):
    """Objective value and its exact gradient with respect to the network.

    Returns
    -------
    loss : float
    grad : NetParams
        Same shapes as ``params``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = np.asarray(f, dtype=float).reshape(x.shape[0], -1)
    loss, grad, _ = _net_backward(params, x @ basis, f, lambda_reg)
    return loss, grad


def bowtie_forward(params, x):
    """Evaluate the bowtie network at ``x``; row-exact like :func:`forward`."""
    xb, single = _as_batch(x, params.m)
    out = forward(params.net(), np.einsum("bm,km->bk", xb, params.a0))
    return out[0] if single else out


def bowtie_predict_fast(params, x):
    # BLAS path, see predict_fast
    return predict_fast(params, x @ params.a0.T)


def bowtie_objective(params, x, f, lambda_reg):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("objective of an empty dataset")
    r = np.asarray(f, dtype=float).reshape(x.shape[0], -1) - bowtie_predict_fast(params, x)
    return float(np.sum(r * r) / x.shape[0] + lambda_reg * params.sq_norm())


def bowtie_backward(params, x, f, lambda_reg):
    """Like :func:`backward` but also differentiates the free layer ``A0``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = np.asarray(f, dtype=float).reshape(x.shape[0], -1)
    net = params.net()
    loss, g, dy = _net_backward(net, x @ params.a0.T, f, 0.0)
    two_lam = 2.0 * lambda_reg
    grad = BowtieParams(g.a1 + two_lam * params.a1, g.b1 + two_lam * params.b1,
                        g.a2 + two_lam * params.a2, g.b2 + two_lam * params.b2,
                        dy.T @ x + two_lam * params.a0)
    return float(loss + lambda_reg * params.sq_norm()), grad


# -- serialization ---------------------------------------------------------

MODEL_MAGIC = "grassrom-model"
MODEL_VERSION = "v1"


def _rows(a):
    a = np.atleast_2d(a)
    return ["" if a.shape[1] == 0 else " ".join(repr(float(v)) for v in row)
            for row in a]


def dump_model(params, basis, path):
    """Write ``basis`` and ``params`` as plain text.

    Layout: header ``grassrom-model v1 m n k h`` followed by U (m rows),
    A1 (h rows), b1 (1 row), A2 (n rows), b2 (1 row). Floats use the
    shortest repr that round-trips exactly.
    """
    basis = np.asarray(basis, dtype=float)
    m, k = basis.shape
    if k != params.k:
        raise DimensionError("basis and network disagree on k")
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION} {m} {params.n} {k} {params.h}"]
    lines += _rows(basis) + _rows(params.a1) + _rows(params.b1)
    lines += _rows(params.a2) + _rows(params.b2)
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def load_model(path):
    """Inverse of :func:`dump_model`; returns ``(params, basis)``."""
    if hasattr(path, "read"):
        lines = path.read().splitlines()
    else:
        with open(path) as fh:
            lines = fh.read().splitlines()
    head = lines[0].split()
    if len(head) != 6 or head[0] != MODEL_MAGIC or head[1] != MODEL_VERSION:
        raise ValueError(f"not a {MODEL_MAGIC} {MODEL_VERSION} file")
    m, n, k, h = (int(v) for v in head[2:])
    body = iter(lines[1:])

    def take(rows, cols):
        out = np.array([[float(v) for v in next(body).split()] for _ in range(rows)])
        return out.reshape(rows, cols)

    basis = take(m, k)
    a1 = take(h, k)
    b1 = take(1, h)[0]
    a2 = take(n, h)
    b2 = take(1, n)[0]
    return NetParams(a1, b1, a2, b2), basis
