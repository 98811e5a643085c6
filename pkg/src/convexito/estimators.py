"""Estimator-style wrappers for pipelines that expect ``fit``/``transform``.

The computations are stateless, so ``fit`` only validates parameters and
records the input dimension. Inputs are path ensembles of shape
``(n_paths, n_steps + 1, d)`` or :class:`SemimartingalePath` objects.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import as_path_array
from .convex_core import PLConvex, as_oracle
from .decomposition_lab import decompose_pl, selection_map
from .exceptions import InvalidInputError
from .ito_engine import ito_integral, local_time_occupation, local_time_tanaka
from .path_sim import SemimartingalePath, TimeGrid


def _as_path(X, horizon):
    if isinstance(X, SemimartingalePath):
        return X
    arr = as_path_array(X, "X")
    grid = TimeGrid.uniform(arr.shape[1] - 1, horizon)
    return SemimartingalePath(grid, arr[0, 0], arr - arr[:, :1], np.zeros_like(arr))


class LocalTimeTransformer(TransformerMixin, BaseEstimator):
    """Terminal local time at ``level`` for each scalar path.

    Raw arrays are read as pure martingale paths on ``[0, horizon]``.
    """

    def __init__(self, level=0.0, method="tanaka", bandwidth=None, horizon=1.0):
        self.level = level
        self.method = method
        self.bandwidth = bandwidth
        self.horizon = horizon

    def fit(self, X, y=None):
        if self.method not in ("tanaka", "occupation"):
            raise InvalidInputError(f"unknown method {self.method!r}")
        self.n_features_in_ = _as_path(X, self.horizon).dim
        return self

    def transform(self, X):
        if not hasattr(self, "n_features_in_"):
            raise NotFittedError("call fit first")
        x = _as_path(X, self.horizon)
        if self.method == "tanaka":
            return local_time_tanaka(x, self.level).terminal[:, None]
        return local_time_occupation(x, self.level, self.bandwidth)[:, None]


class ConvexDecomposer(TransformerMixin, BaseEstimator):
    """Terminal ``(N, S)`` of ``f(X) - f(X_0) = N + S`` per path.

    PL functions with ``selection="min_index_pl"`` use the exact piecewise
    decomposition; everything else integrates the chosen selection.
    """

    def __init__(self, f=None, selection="min_index_pl", horizon=1.0):
        self.f = f
        self.selection = selection
        self.horizon = horizon

    def fit(self, X, y=None):
        if self.f is None:
            raise InvalidInputError("f is required")
        self.oracle_ = as_oracle(self.f)
        self.n_features_in_ = _as_path(X, self.horizon).dim
        if self.n_features_in_ != self.oracle_.dim:
            raise InvalidInputError("path dimension does not match f")
        return self

    def transform(self, X):
        if not hasattr(self, "oracle_"):
            raise NotFittedError("call fit first")
        x = _as_path(X, self.horizon)
        pl = self.f if isinstance(self.f, PLConvex) else self.oracle_.pl
        if self.selection == "min_index_pl" and pl is not None:
            res = decompose_pl(pl, x)
            return np.column_stack([res.n.terminal, res.s[:, -1]])
        H = selection_map(self.oracle_, self.selection)(x.x)
        N = ito_integral(H, x).terminal
        fx = self.oracle_.eval(x.x)
        return np.column_stack([N, fx[:, -1] - fx[:, 0] - N])
