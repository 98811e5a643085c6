"""Discrete stochastic calculus on a time grid.

Itô integrals use the left-endpoint rule exclusively. All ensemble reductions
run in a fixed order so results depend only on the seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_path_array
from .exceptions import InsufficientDataError, InvalidInputError, UnsupportedDimensionError
from .path_sim import PerturbedPath, SemimartingalePath, TimeGrid
from .rng import as_generator

MIN_PATHS = 100
Z_CRIT = 4.0
CORR_CRIT = 0.1


@dataclass(frozen=True, eq=False)
class IntegralPath:
    grid: TimeGrid
    values: np.ndarray
    integrand_label: str = ""

    @property
    def terminal(self):
        return self.values[:, -1]

    @property
    def n_paths(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class QVPath:
    grid: TimeGrid
    values: np.ndarray

    @property
    def terminal(self):
        return self.values[:, -1]


@dataclass(frozen=True, eq=False)
class LocalTimePath:
    grid: TimeGrid
    values: np.ndarray
    method: str = "tanaka"
    level: float = 0.0

    @property
    def terminal(self):
        return self.values[:, -1]


def _grid_of(obj, n_points):
    if isinstance(obj, (SemimartingalePath, PerturbedPath)):
        return obj.grid
    return TimeGrid(np.linspace(0.0, 1.0, n_points))


def _running_sum(incr):
    out = np.zeros((incr.shape[0], incr.shape[1] + 1))
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def ito_integral(h, m, grid=None, label=""):
    """Left-point Itô sum ``value[j+1] = value[j] + <h[j], m[j+1] - m[j]>``.

    ``h`` and ``m`` are arrays of shape ``(n_paths, n_steps + 1, d)`` (or
    anything :func:`as_path_array` accepts); ``h[:, -1]`` is never used.
    """
    if isinstance(m, (SemimartingalePath, PerturbedPath)):
        grid = m.grid
        m = m.result.m if isinstance(m, PerturbedPath) else m.m
    h = as_path_array(h, "h")
    m = as_path_array(m, "m")
    if h.shape != m.shape:
        raise InvalidInputError(f"integrand shape {h.shape} does not match integrator {m.shape}")
    grid = grid if grid is not None else _grid_of(None, m.shape[1])
    if len(grid) != m.shape[1]:
        raise InvalidInputError("integrator length does not match the grid")
    incr = np.einsum("pjd,pjd->pj", h[:, :-1], np.diff(m, axis=1))
    return IntegralPath(grid, _running_sum(incr), label)


def quadratic_covariation(m, n, grid=None):
    """Running sum of ``<dm_j, dn_j>`` (trace over coordinates)."""
    m = as_path_array(m, "m")
    n = as_path_array(n, "n")
    if m.shape != n.shape:
        raise InvalidInputError("paths must share a grid and dimension")
    incr = np.einsum("pjd,pjd->pj", np.diff(m, axis=1), np.diff(n, axis=1))
    return _running_sum(incr)


def quadratic_variation(m, grid=None):
    """Running sum of squared increments, summed over coordinates."""
    if isinstance(m, (SemimartingalePath, PerturbedPath)):
        grid = m.grid
        m = m.result.m if isinstance(m, PerturbedPath) else m.m
    m = as_path_array(m, "m")
    grid = grid if grid is not None else _grid_of(None, m.shape[1])
    return QVPath(grid, _running_sum(np.sum(np.diff(m, axis=1) ** 2, axis=2)))


def total_variation(a):
    """Sum over steps and coordinates of ``|a[j+1] - a[j]|``, one value per path."""
    a = as_path_array(a, "a")
    return np.sum(np.abs(np.diff(a, axis=1)), axis=(1, 2))


def sgn(v):
    """-1 on ``v <= 0`` and +1 otherwise."""
    return np.where(v > 0, 1.0, -1.0)


def _scalar_path(x):
    if isinstance(x, PerturbedPath):
        x = x.result
    if isinstance(x, SemimartingalePath):
        if x.dim != 1:
            raise UnsupportedDimensionError("local time is defined here for d = 1 only")
        return x.grid, x.x[:, :, 0]
    arr = as_path_array(x, "x")
    if arr.shape[2] != 1:
        raise UnsupportedDimensionError("local time is defined here for d = 1 only")
    return _grid_of(None, arr.shape[1]), arr[:, :, 0]


def local_time_tanaka(x, level=0.0):
    """Discrete Tanaka local time at ``level``.

    ``L[j] = |x[j]-c| - |x[0]-c| - sum_{i<j} sgn(x[i]-c) (x[i+1]-x[i])``.
    Each increment equals ``|y'| - sgn(y) y'`` with ``y' = x[i+1]-c``, which is
    non-negative and vanishes unless the step changes sign.
    """
    grid, X = _scalar_path(x)
    Y = X - level
    incr = np.abs(Y[:, 1:]) - sgn(Y[:, :-1]) * Y[:, 1:]
    return LocalTimePath(grid, _running_sum(incr), "tanaka", float(level))


def local_time_tanaka_direct(x, level=0.0):
    """The same estimator written literally as ``|Y_t| - |Y_0| - int sgn(Y) dY``."""
    grid, X = _scalar_path(x)
    Y = X - level
    stoch = _running_sum(sgn(Y[:, :-1]) * np.diff(Y, axis=1))
    return LocalTimePath(grid, np.abs(Y) - np.abs(Y[:, :1]) - stoch, "tanaka", float(level))


def default_bandwidth(grid):
    return 4.0 * float(np.sqrt(np.mean(grid.dt)))


def local_time_occupation(x, level=0.0, bandwidth=None):
    """Occupation-density estimate of the terminal local time, one value per path."""
    grid, X = _scalar_path(x)
    h = default_bandwidth(grid) if bandwidth is None else bandwidth
    if h <= 0:
        raise InvalidInputError("bandwidth must be positive")
    near = np.abs(X[:, :-1] - level) < h
    return np.sum(near * np.diff(X, axis=1) ** 2, axis=1) / (2.0 * h)


@dataclass(frozen=True)
class HpEstimate:
    p: float
    value: float
    n_paths: int
    std_error: float


def hp_norm_estimate(m, a, p=2.0, n_boot=200, rng=0):
    """Ensemble ``L^p`` norm of ``<M>_T^{1/2} + int_0^T |dA|`` with a bootstrap error."""
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    m = as_path_array(m, "m")
    a = as_path_array(a, "a")
    if m.shape[0] == 0:
        raise InsufficientDataError("empty ensemble")
    z = np.sqrt(np.sum(np.diff(m, axis=1) ** 2, axis=(1, 2))) + total_variation(a)
    value = float(np.mean(z ** p) ** (1.0 / p))
    gen = as_generator(rng)
    idx = gen.integers(0, z.size, size=(n_boot, z.size))
    boot = np.mean(z[idx] ** p, axis=1) ** (1.0 / p)
    return HpEstimate(float(p), value, int(z.size), float(np.std(boot, ddof=1)))


@dataclass(frozen=True)
class MartingaleTestReport:
    checkpoints: tuple
    increment_means: np.ndarray
    std_errors: np.ndarray
    z: np.ndarray
    max_abs_z: float
    lag1_corr: float
    verdict: bool
    z_crit: float = Z_CRIT
    corr_crit: float = CORR_CRIT

    def to_records(self):
        return [{"checkpoint_t": float(t), "mean_increment": float(mu),
                 "std_error": float(se), "z": float(z)}
                for t, mu, se, z in zip(self.checkpoints[1:], self.increment_means,
                                        self.std_errors, self.z)]


def martingale_test(ensemble, checkpoints=(0.0, 0.25, 0.5, 0.75, 1.0),
                    z_crit=Z_CRIT, corr_crit=CORR_CRIT, min_paths=MIN_PATHS):
    """Fixed-checkpoint test of the martingale property across paths.

    For each consecutive checkpoint pair the mean increment gets a z-score;
    consecutive increments are also tested for lag-1 correlation.
    """
    if isinstance(ensemble, IntegralPath):
        grid, vals = ensemble.grid, ensemble.values
    else:
        vals = np.asarray(ensemble, dtype=float)
        grid = _grid_of(None, vals.shape[1])
    n = vals.shape[0]
    if n < min_paths:
        raise InsufficientDataError(f"martingale test needs >= {min_paths} paths, got {n}")
    cps = tuple(float(t) for t in checkpoints)
    idx = [grid.index_of(t) for t in cps]
    inc = np.stack([vals[:, j1] - vals[:, j0] for j0, j1 in zip(idx[:-1], idx[1:])], axis=1)
    mean = inc.mean(axis=0)
    se = inc.std(axis=0, ddof=1) / np.sqrt(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean / np.where(se > 0, se, 1.0),
                     np.where(mean == 0, 0.0, np.inf))
    corr = 0.0
    if inc.shape[1] > 1:
        c = inc - mean
        sd = np.sqrt(np.mean(c ** 2, axis=0))
        pairs = [(np.mean(c[:, i] * c[:, i + 1]) / (sd[i] * sd[i + 1]))
                 for i in range(inc.shape[1] - 1) if sd[i] > 0 and sd[i + 1] > 0]
        corr = float(np.mean(pairs)) if pairs else 0.0
    max_z = float(np.max(np.abs(z)))
    verdict = bool(max_z <= z_crit and abs(corr) <= corr_crit)
    return MartingaleTestReport(cps, mean, se, z, max_z, corr, verdict, z_crit, corr_crit)
