"""Training: ADAM, data splits, error metrics and the alternating scheme.

One outer iteration trains the network for ``inner_iters`` epochs with the
basis frozen, then moves the basis by Riemannian steepest descent with the
network frozen, then shrinks the learning rate by 0.9 and restarts ADAM.
"""
import csv
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import activesub, grassmann, ridgenet
from .densela import make_rng
from .exceptions import DataContractError, DimensionError, NumericalError

U_INITS = ("identity", "random", "active_subspace")


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    ``n_train``/``n_val`` are counts when integers and fractions of the pool
    when floats below 1. Counts are trajectories if the dataset carries
    trajectory ids, samples otherwise. ``batch_unit`` decides the same for
    ``batch_size``; ``"auto"`` batches whole trajectories when ids exist.
    """

    k: int = 2
    h: int = 8
    lambda_reg: float = 1e-7
    lr: float = 1e-3
    outer_iters: int = 10
    inner_iters: int = 5000
    batch_size: int = 16
    batch_unit: str = "auto"
    seed: int = 0
    u_init: str = "active_subspace"
    n_train: float = 0.8
    n_val: float = 0.2
    lr_decay: float = 0.9
    subspace_tol: float = 1e-6
    subspace_max_iters: int = 100
    patience: int = None

    def __post_init__(self):
        for name in ("k", "h", "outer_iters", "batch_size", "subspace_max_iters"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.inner_iters < 0:
            raise ValueError("inner_iters must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        if self.u_init not in U_INITS:
            raise ValueError(f"u_init must be one of {U_INITS}")
        if self.batch_unit not in ("auto", "sample", "trajectory"):
            raise ValueError("batch_unit must be auto, sample or trajectory")

    def to_dict(self):
        return asdict(self)


# -- ADAM -----------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size):
        return cls(np.zeros(size), np.zeros(size))


def adam_step(state, theta, grad, lr):
    """One bias-corrected ADAM update on flat vectors.

    Returns the new state and parameters; inputs are not modified.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != theta.shape:
        raise DimensionError("gradient and parameter shapes differ")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient in ADAM step")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), theta


# -- splitting and metrics ------------------------------------------------

def _resolve(req, pool):
    if isinstance(req, float) and 0 < req < 1:
        return int(round(req * pool))
    return int(req)


def split_dataset(data, n_train, n_val, seed=0):
    """Random disjoint train / validation / rest split.

    Whole trajectories go to one side when ``data.trajectory_ids`` is set.
    """
    rng = make_rng(seed)
    if data.trajectory_ids is not None:
        groups = np.unique(data.trajectory_ids)
    else:
        groups = np.arange(data.n_samples)
    pool = groups.size
    a, b = _resolve(n_train, pool), _resolve(n_val, pool)
    if a < 1 or b < 0 or a + b > pool:
        raise ValueError(f"cannot split {pool} groups into {a} train and {b} validation")
    order = groups[rng.permutation(pool)]
    parts = (order[:a], order[a:a + b], order[a + b:])
    if data.trajectory_ids is None:
        return tuple(data.subset(np.sort(p)) for p in parts)
    out = []
    for p in parts:
        out.append(data.subset(np.nonzero(np.isin(data.trajectory_ids, p))[0]))
    return tuple(out)


def mean_sq_norm(f):
    f = np.asarray(f, dtype=float)
    return float(np.sum(f * f) / f.shape[0])


def rel_error_validation(params, basis, validation, whole):
    """Root of validation mean squared residual over mean ``||f||^2`` on ``whole``.

    ``whole`` may be a Dataset or the precomputed denominator.
    """
    denom = whole if np.isscalar(whole) else mean_sq_norm(whole.outputs)
    if denom == 0:
        raise ZeroDivisionError("outputs of the normalizing set are all zero")
    if validation.n_samples == 0:
        raise ValueError("empty validation set")
    r = validation.outputs - ridgenet.predict_fast(params, validation.inputs @ basis)
    return float(np.sqrt(np.sum(r * r) / validation.n_samples / denom))


def rel_error_dataset(model, data):
    """``sqrt(sum ||f - model(x)||^2 / sum ||f||^2)`` over one dataset."""
    f = data.outputs
    denom = float(np.sum(f * f))
    if denom == 0:
        raise ZeroDivisionError("outputs are all zero")
    r = f - np.asarray(model(data.inputs), dtype=float).reshape(f.shape)
    return float(np.sqrt(np.sum(r * r) / denom))


# -- trace ----------------------------------------------------------------

@dataclass
class EpochRecord:
    outer: int
    inner: int
    epoch: int
    train_objective: float
    val_relerror: float


@dataclass
class SubspaceStep:
    outer: int
    objective_before: float
    objective_after: float
    iterations: int
    grad_norm: float
    stalled: bool
    max_ortho_error: float


@dataclass
class TrainTrace:
    """Everything recorded during a run.

    ``bases[p]`` is the basis used during the network phase of outer
    iteration ``p + 1``; the final basis is ``basis``.
    """

    records: list = field(default_factory=list)
    bases: list = field(default_factory=list)
    subspace_steps: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    initial_val_relerror: float = float("nan")
    params: object = None
    basis: np.ndarray = None
    config: TrainConfig = None

    @property
    def val_relerrors(self):
        return np.array([r.val_relerror for r in self.records])

    @property
    def train_objectives(self):
        return np.array([r.train_objective for r in self.records])

    def final_val_relerror(self):
        return self.records[-1].val_relerror if self.records else self.initial_val_relerror

    def min_val_relerror(self):
        return float(np.min(self.val_relerrors)) if self.records else self.initial_val_relerror

    def write_csv(self, path):
        """One row per epoch: ``outer,epoch,train_objective,val_relerror``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["outer", "epoch", "train_objective", "val_relerror"])
            for r in self.records:
                w.writerow([r.outer, r.epoch, f"{r.train_objective:.17g}",
                            f"{r.val_relerror:.17g}"])


def write_subspace_csv(trace, path):
    """One row per basis update: objective before/after, iterations, stall flag
    and the worst ``||U^T U - I||_max`` seen during the descent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outer", "objective_before", "objective_after", "iterations",
                    "grad_norm", "stalled", "max_ortho_error"])
        for s in trace.subspace_steps:
            w.writerow([s.outer, f"{s.objective_before:.17g}", f"{s.objective_after:.17g}",
                        s.iterations, f"{s.grad_norm:.17g}", int(s.stalled),
                        f"{s.max_ortho_error:.17g}"])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["outer"]), 0, int(r["epoch"]), float(r["train_objective"]),
                        float(r["val_relerror"])) for r in rows]


# -- helpers --------------------------------------------------------------

def _streams(seed):
    # split, network init, basis init, minibatch shuffling
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def _batches(train, cfg):
    """Index groups that form the minibatch units of ``train``."""
    by_traj = (cfg.batch_unit == "trajectory"
               or (cfg.batch_unit == "auto" and train.trajectory_ids is not None))
    if by_traj:
        if train.trajectory_ids is None:
            raise DataContractError("batch_unit='trajectory' needs trajectory ids")
        ids = train.trajectory_ids
        uniq, inv = np.unique(ids, return_inverse=True)
        return [np.nonzero(inv == g)[0] for g in range(uniq.size)]
    return [np.array([i]) for i in range(train.n_samples)]


def _epoch_batches(units, batch_size, rng):
    size = min(batch_size, len(units))
    order = rng.permutation(len(units))
    for start in range(0, len(units), size):
        chunk = order[start:start + size]
        yield units[chunk[0]] if chunk.size == 1 else np.concatenate([units[c] for c in chunk])


def initial_basis(train, cfg, rng):
    m = train.m
    if cfg.u_init == "identity":
        return grassmann.init_identity(m, cfg.k)
    if cfg.u_init == "random":
        return grassmann.init_random(m, cfg.k, rng)
    basis, _ = activesub.active_subspace(train, cfg.k)
    return basis


def _check(value, what, trace):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what}", trace)


# -- alternating minimization ---------------------------------------------

def fit_alternating(train, validation, denom, cfg, basis=None, params=None,
                    rng_batches=None, rng_init=None):
    """Run the alternating scheme on an explicit train/validation pair.

    ``denom`` normalizes the validation RelError. ``basis``/``params`` default
    to the configured initializers.
    """
    rng_init = rng_init or make_rng(cfg.seed)
    rng_batches = rng_batches or make_rng(cfg.seed + 1)
    if params is None:
        params = ridgenet.init_params(cfg.k, cfg.h, train.n, rng_init)
    if basis is None:
        basis = initial_basis(train, cfg, rng_init)
    basis = activesub.check_basis(basis)

    x, f = train.inputs, train.outputs
    units = _batches(train, cfg)
    trace = TrainTrace(config=cfg)
    trace.initial_val_relerror = rel_error_validation(params, basis, validation, denom)
    theta = params.flatten()
    opts = grassmann.DescentOptions(tol=cfg.subspace_tol, max_iters=cfg.subspace_max_iters)
    epoch = 0
    for p in range(1, cfg.outer_iters + 1):
        lr = cfg.lr * cfg.lr_decay ** (p - 1)
        trace.bases.append(basis.copy())
        trace.learning_rates.append(lr)
        state = AdamState.fresh(theta.size)
        best, since = np.inf, 0
        for n in range(1, cfg.inner_iters + 1):
            for idx in _epoch_batches(units, cfg.batch_size, rng_batches):
                _, g = ridgenet.backward(params, basis, x[idx], f[idx], cfg.lambda_reg)
                try:
                    state, theta = adam_step(state, theta, g.flatten(), lr)
                except NumericalError as exc:
                    exc.trace = trace
                    raise
                params = params.unflatten(theta)
            epoch += 1
            obj = ridgenet.objective(params, basis, x, f, cfg.lambda_reg)
            err = rel_error_validation(params, basis, validation, denom)
            trace.records.append(EpochRecord(p, n, epoch, obj, err))
            _check(obj, "training objective", trace)
            if cfg.patience:
                if err < best:
                    best, since = err, 0
                else:
                    since += 1
                    if since >= cfg.patience:
                        break

        before = grassmann.data_loss(params, basis, x, f)
        res = grassmann.fit_basis(params, basis, x, f, opts)
        _check(res.loss, "subspace objective", trace)
        trace.subspace_steps.append(SubspaceStep(
            p, before, res.loss, res.iterations, res.grad_norm, res.stalled,
            max(res.ortho_errors)))
        basis = res.basis

    trace.params, trace.basis = params, basis
    return trace


def alternating_fit(data, cfg):
    """Split ``data`` per ``cfg`` and run :func:`fit_alternating`.

    The validation RelError is normalized by the mean squared output norm of
    the whole dataset. Runs with the same seed share split, network init and
    batch order regardless of ``cfg.u_init``.
    """
    rs, rn, ru, rb = _streams(cfg.seed)
    train, val, _ = split_dataset(data, cfg.n_train, cfg.n_val, seed=rs)
    if val.n_samples == 0:
        val = train
    params = ridgenet.init_params(cfg.k, cfg.h, data.n, rn)
    basis = initial_basis(train, cfg, ru)
    return fit_alternating(train, val, mean_sq_norm(data.outputs), cfg,
                           basis=basis, params=params, rng_batches=rb)


# -- bowtie baseline ------------------------------------------------------

def fit_bowtie(train, validation, denom, cfg, params=None, rng_batches=None,
               rng_init=None, freeze_a0=False):
    """Plain ADAM on the bowtie network for ``outer_iters * inner_iters`` epochs.

    The learning rate decays (and ADAM restarts) every ``inner_iters`` epochs,
    matching the constrained model's schedule.
    """
    rng_init = rng_init or make_rng(cfg.seed)
    rng_batches = rng_batches or make_rng(cfg.seed + 1)
    if params is None:
        params = ridgenet.init_bowtie_params(cfg.k, cfg.h, train.n, train.m, rng_init)
    x, f = train.inputs, train.outputs
    units = _batches(train, cfg)
    trace = TrainTrace(config=cfg)

    def relerr(pr):
        r = validation.outputs - ridgenet.bowtie_predict_fast(pr, validation.inputs)
        return float(np.sqrt(np.sum(r * r) / validation.n_samples / denom))

    trace.initial_val_relerror = relerr(params)
    theta = params.flatten()
    n_a0 = params.a0.size
    epoch = 0
    for p in range(1, cfg.outer_iters + 1):
        lr = cfg.lr * cfg.lr_decay ** (p - 1)
        trace.learning_rates.append(lr)
        state = AdamState.fresh(theta.size)
        for n in range(1, cfg.inner_iters + 1):
            for idx in _epoch_batches(units, cfg.batch_size, rng_batches):
                _, g = ridgenet.bowtie_backward(params, x[idx], f[idx], cfg.lambda_reg)
                flat = g.flatten()
                if freeze_a0:
                    flat[-n_a0:] = 0.0
                try:
                    state, theta = adam_step(state, theta, flat, lr)
                except NumericalError as exc:
                    exc.trace = trace
                    raise
                params = params.unflatten(theta)
            epoch += 1
            obj = ridgenet.bowtie_objective(params, x, f, cfg.lambda_reg)
            trace.records.append(EpochRecord(p, n, epoch, obj, relerr(params)))
            _check(obj, "training objective", trace)
    trace.params = params
    return trace


def bowtie_fit(data, cfg):
    """Bowtie counterpart of :func:`alternating_fit` (same split and batches)."""
    rs, rn, _, rb = _streams(cfg.seed)
    train, val, _ = split_dataset(data, cfg.n_train, cfg.n_val, seed=rs)
    if val.n_samples == 0:
        val = train
    params = ridgenet.init_bowtie_params(cfg.k, cfg.h, data.n, data.m, rn)
    return fit_bowtie(train, val, mean_sq_norm(data.outputs), cfg, params=params,
                      rng_batches=rb)
