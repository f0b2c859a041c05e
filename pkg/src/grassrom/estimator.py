"""scikit-learn estimators wrapping the training routines.

``GrassmannRidgeRegressor`` learns ``f(x) ~ g(U^T x)`` with ``U`` orthonormal;
``transform`` returns the reduced coordinates ``U^T x``. ``BowtieRegressor``
is the unconstrained baseline with a free linear compression layer.
"""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import ridgenet, trainer
from .dataset import Dataset
from .densela import make_rng


def _seed(random_state):
    if random_state is None:
        return int(np.random.SeedSequence().generate_state(1)[0])
    return int(random_state)


class _BaseRidgeNet(RegressorMixin, BaseEstimator):

    def _config(self, u_init="random"):
        return trainer.TrainConfig(
            k=self.n_components, h=self.hidden, lambda_reg=self.alpha,
            lr=self.learning_rate, outer_iters=self.outer_iters,
            inner_iters=self.inner_iters, batch_size=self.batch_size,
            batch_unit="sample" if self._groups is None else "trajectory",
            seed=self._seed, u_init=u_init)

    def _prepare(self, X, y, jacobians, groups, eval_set):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._single_output = y.ndim == 1
        Y = y.reshape(len(y), -1)
        self._groups = groups
        self._seed = _seed(self.random_state)
        train = Dataset(X, Y, jacobians, groups)
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, multi_output=True, y_numeric=True)
            val = Dataset(Xv, yv.reshape(len(yv), -1))
        else:
            val = train
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        return train, val

    def _finish(self, out):
        return out.ravel() if self._single_output else out


class GrassmannRidgeRegressor(TransformerMixin, _BaseRidgeNet):
    """Shallow ReLU network on a learned orthonormal reduced basis.

    Parameters
    ----------
    n_components : int, default=2
        Dimension ``k`` of the reduced basis.
    hidden : int, default=8
        Hidden width ``h``.
    alpha : float, default=1e-7
        Weight of the squared-norm penalty on the network parameters.
    learning_rate : float, default=1e-3
        Initial ADAM learning rate, multiplied by 0.9 after every outer
        iteration.
    outer_iters : int, default=10
    inner_iters : int, default=5000
        ADAM epochs per outer iteration.
    batch_size : int, default=16
        Minibatch size in samples, or in trajectories when ``groups`` is
        passed to :meth:`fit`.
    u_init : {"auto", "identity", "random", "active_subspace"}, default="auto"
        ``"auto"`` uses the active subspace when Jacobians are given and a
        random basis otherwise.
    random_state : int or None

    Attributes
    ----------
    basis_ : ndarray, shape (n_features, n_components)
    params_ : NetParams
    trace_ : TrainTrace
    """

    def __init__(self, n_components=2, hidden=8, alpha=1e-7, learning_rate=1e-3,
                 outer_iters=10, inner_iters=5000, batch_size=16, u_init="auto",
                 random_state=None):
        self.n_components = n_components
        self.hidden = hidden
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.outer_iters = outer_iters
        self.inner_iters = inner_iters
        self.batch_size = batch_size
        self.u_init = u_init
        self.random_state = random_state

    def fit(self, X, y, jacobians=None, groups=None, eval_set=None):
        """Train on ``(X, y)``.

        ``jacobians`` has shape ``(n_samples, n_outputs, n_features)``;
        ``groups`` labels trajectories for minibatching; ``eval_set`` is an
        optional ``(X_val, y_val)`` pair used for the per-epoch RelError.
        """
        train, val = self._prepare(X, y, jacobians, groups, eval_set)
        u_init = self.u_init
        if u_init == "auto":
            u_init = "active_subspace" if jacobians is not None else "random"
        cfg = self._config(u_init)
        rs = [make_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3)]
        params = ridgenet.init_params(cfg.k, cfg.h, train.n, rs[0])
        basis = trainer.initial_basis(train, cfg, rs[1])
        self.trace_ = trainer.fit_alternating(
            train, val, trainer.mean_sq_norm(train.outputs), cfg,
            basis=basis, params=params, rng_batches=rs[2])
        self.basis_ = self.trace_.basis
        self.params_ = self.trace_.params
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        return X @ self.basis_

    def predict(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        return self._finish(ridgenet.predict(self.params_, self.basis_, X))


class BowtieRegressor(_BaseRidgeNet):
    """Same network with an unconstrained linear layer in place of ``U^T``.

    Trained by plain ADAM for ``outer_iters * inner_iters`` epochs with the
    same learning-rate decay schedule as :class:`GrassmannRidgeRegressor`.
    """

    def __init__(self, n_components=2, hidden=8, alpha=1e-7, learning_rate=1e-3,
                 outer_iters=10, inner_iters=5000, batch_size=16, random_state=None):
        self.n_components = n_components
        self.hidden = hidden
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.outer_iters = outer_iters
        self.inner_iters = inner_iters
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y, groups=None, eval_set=None):
        train, val = self._prepare(X, y, None, groups, eval_set)
        cfg = self._config()
        rs = [make_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2)]
        params = ridgenet.init_bowtie_params(cfg.k, cfg.h, train.n, train.m, rs[0])
        self.trace_ = trainer.fit_bowtie(
            train, val, trainer.mean_sq_norm(train.outputs), cfg, params=params,
            rng_batches=rs[1])
        self.params_ = self.trace_.params
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        return self._finish(ridgenet.bowtie_forward(self.params_, X))
