"""Estimator-style wrappers over the functional core.

These follow the scikit-learn contract (constructor stores parameters
verbatim, ``fit`` learns state into trailing-underscore attributes and
returns self, ``get_params``/``set_params`` work for free via
BaseEstimator), which makes the reconstructor and the mapper usable in
generic tooling. The physics stays in the functional modules.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InvalidInputError
from .metrics import nrmse
from .modl import (
    DEFAULT_HIDDEN_CHANNELS,
    DEFAULT_HIDDEN_LAYERS,
    DEFAULT_KERNEL_SIZE,
    DEFAULT_LAMBDA_INIT,
    TrainConfig,
    TrainSample,
    init_modl_params,
    modl_reconstruct,
    train,
)
from .qalas import QalasTiming, build_dictionary, fit_parameter_maps


def _as_samples(X, y=None):
    """Normalize estimator input into TrainSample objects.

    Each element of X is a (data, ops) pair; the matching element of y, when
    given, is the ground-truth contrast stack.
    """
    samples = []
    for i, entry in enumerate(X):
        if isinstance(entry, TrainSample):
            samples.append(entry)
            continue
        if y is None:
            raise InvalidInputError(
                "targets are required to build training samples from raw pairs"
            )
        data, ops = entry
        samples.append(TrainSample(tuple(data), tuple(ops), np.asarray(y[i])))
    return samples


class WaveModlReconstructor(BaseEstimator):
    """Trainable unrolled reconstructor with the estimator interface.

    ``fit(X, y)`` consumes per-sample (k-space, operators) pairs with truth
    stacks; ``predict(X)`` reconstructs new samples. All hyperparameters
    mirror the functional ``init_modl_params`` / ``TrainConfig`` knobs.
    """

    def __init__(self, n_contrasts=1, n_outer=10, cg_iters=10,
                 hidden_channels=DEFAULT_HIDDEN_CHANNELS,
                 hidden_layers=DEFAULT_HIDDEN_LAYERS,
                 kernel_size=DEFAULT_KERNEL_SIZE,
                 lambda_init=DEFAULT_LAMBDA_INIT,
                 learning_rate=1e-2, steps=200, contrast_weights=None, seed=0):
        self.n_contrasts = n_contrasts
        self.n_outer = n_outer
        self.cg_iters = cg_iters
        self.hidden_channels = hidden_channels
        self.hidden_layers = hidden_layers
        self.kernel_size = kernel_size
        self.lambda_init = lambda_init
        self.learning_rate = learning_rate
        self.steps = steps
        self.contrast_weights = contrast_weights
        self.seed = seed

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate, steps=self.steps,
            seed=self.seed, contrast_weights=self.contrast_weights,
            cg_iters=self.cg_iters,
        )

    def fit(self, X, y=None):
        samples = _as_samples(X, y)
        for s in samples:
            if s.n_contrasts != self.n_contrasts:
                raise InvalidInputError(
                    f"sample has {s.n_contrasts} contrasts, estimator is "
                    f"configured for {self.n_contrasts}"
                )
        params = init_modl_params(
            self.n_contrasts, seed=self.seed, n_outer=self.n_outer,
            hidden_channels=self.hidden_channels,
            hidden_layers=self.hidden_layers, kernel_size=self.kernel_size,
            lambda_init=self.lambda_init,
        )
        params, history = train(params, samples, self._train_config())
        self.params_ = params
        self.loss_history_ = history
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise InvalidInputError("estimator is not fitted; call fit first")

    def predict(self, X):
        """Reconstruct each (data, ops) pair; returns a list of stacks."""
        self._check_fitted()
        out = []
        for entry in X:
            if isinstance(entry, TrainSample):
                data, ops = entry.data, entry.ops
            else:
                data, ops = entry
            out.append(
                modl_reconstruct(self.params_, data, ops, cg_iters=self.cg_iters)
            )
        return out

    def score(self, X, y):
        """Negative mean NRMSE (percent) so that greater is better."""
        recons = self.predict(X)
        errors = [nrmse(r, np.asarray(t)) for r, t in zip(recons, y)]
        return -float(np.mean(errors))


class QalasParameterMapper(BaseEstimator):
    """Dictionary-matching T1/T2/PD mapper with the estimator interface.

    ``fit`` builds the dictionary from the timing and grids; ``predict``
    matches five-contrast magnitude stacks.
    """

    def __init__(self, t1_grid=None, t2_grid=None, timing=None):
        self.t1_grid = t1_grid
        self.t2_grid = t2_grid
        self.timing = timing

    def fit(self, X=None, y=None):
        timing = self.timing if self.timing is not None else QalasTiming()
        self.dictionary_ = build_dictionary(self.t1_grid, self.t2_grid, timing)
        return self

    def _check_fitted(self):
        if not hasattr(self, "dictionary_"):
            raise InvalidInputError("mapper is not fitted; call fit first")

    def predict(self, X, mask=None):
        """Fit parameter maps for one (5, nx, ny, nz) magnitude stack."""
        self._check_fitted()
        return fit_parameter_maps(X, self.dictionary_, mask=mask)

    def transform(self, X, mask=None):
        maps = self.predict(X, mask=mask)
        return np.stack([maps.t1_ms, maps.t2_ms, maps.pd], axis=0)
