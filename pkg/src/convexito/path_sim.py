"""Discrete-time continuous semimartingales with tracked martingale and
finite-variation parts, Brownian perturbation and exit-time localization.

Paths are stored as ensembles: arrays of shape ``(n_paths, n_steps + 1, d)``.
A single path is an ensemble of size one.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed

from ._validation import as_path_array
from .exceptions import ConfigError, InvalidInputError
from .rng import as_streams

DEFAULT_STEPS = 2 ** 12


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        if t.size < 2:
            raise InvalidInputError("a time grid needs at least two points")
        if t[0] != 0.0:
            raise InvalidInputError("time grids start at 0")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("grid times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, n_steps=DEFAULT_STEPS, horizon=1.0):
        return cls(np.linspace(0.0, horizon, int(n_steps) + 1))

    @property
    def n_steps(self):
        return self.times.size - 1

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def dt(self):
        return np.diff(self.times)

    @property
    def is_uniform(self):
        d = self.dt
        return bool(np.allclose(d, d[0], rtol=1e-9, atol=0.0))

    def index_of(self, t):
        """Grid index nearest to time ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def coarsen(self, factor):
        if self.n_steps % factor:
            raise InvalidInputError(f"{self.n_steps} steps do not divide by {factor}")
        return TimeGrid(self.times[::factor])

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True, eq=False)
class SemimartingalePath:
    """``x = x0 + m + a`` with ``m[:, 0] = a[:, 0] = 0``.

    ``x`` is derived in the constructor so the identity holds bit for bit.
    """
    grid: TimeGrid
    x0: np.ndarray
    m: np.ndarray
    a: np.ndarray
    x: np.ndarray = field(init=False)

    def __post_init__(self):
        m = as_path_array(self.m, "m")
        a = as_path_array(self.a, "a")
        if m.shape != a.shape:
            raise InvalidInputError(f"m has shape {m.shape} but a has shape {a.shape}")
        if m.shape[1] != len(self.grid):
            raise InvalidInputError("path length does not match the grid")
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=float).reshape(-1), (m.shape[2],))
        if np.any(m[:, 0] != 0) or np.any(a[:, 0] != 0):
            raise InvalidInputError("m and a must start at 0")
        for arr in (m, a):
            arr.setflags(write=False)
        x = x0 + m + a
        x.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x0", x0.copy())
        object.__setattr__(self, "x", x)

    @property
    def n_paths(self):
        return self.m.shape[0]

    @property
    def dim(self):
        return self.m.shape[2]

    def __getitem__(self, item):
        sel = np.arange(self.n_paths)[item]
        sel = np.atleast_1d(sel)
        return SemimartingalePath(self.grid, self.x0, self.m[sel], self.a[sel])

    def coarsen(self, factor):
        return SemimartingalePath(self.grid.coarsen(factor), self.x0,
                                  self.m[:, ::factor], self.a[:, ::factor])

    def stopped(self, record):
        """Freeze every path after its stopping index."""
        idx = np.asarray(record.index)
        j = np.arange(len(self.grid))
        keep = np.minimum(j[None, :], idx[:, None])
        take = lambda arr: np.take_along_axis(arr, keep[:, :, None].repeat(self.dim, 2), 1)
        return SemimartingalePath(self.grid, self.x0, take(self.m), take(self.a))


@dataclass(frozen=True, eq=False)
class PerturbedPath:
    """``result = base`` with martingale part ``m + epsilon * b``."""
    base: SemimartingalePath
    epsilon: float
    b: np.ndarray
    result: SemimartingalePath

    @property
    def x(self):
        return self.result.x

    @property
    def grid(self):
        return self.base.grid


class StopKind(enum.Enum):
    EXIT_RADIUS = "exit_radius"
    HORIZON = "horizon"
    MIN_OF = "min_of"


@dataclass(frozen=True, eq=False)
class StoppingRecord:
    """Per-path stopping indices and times; ``horizon_index`` marks no stop."""
    index: np.ndarray
    time: np.ndarray
    kind: StopKind
    horizon_index: int
    radius: Optional[float] = None
    parts: tuple = ()

    @property
    def hit(self):
        """Paths that stopped before the horizon."""
        return self.index < self.horizon_index


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

def _increments(gen, dt, d):
    return gen.standard_normal((dt.size, d)) * np.sqrt(dt)[:, None]


def _bm_paths(grid, d, streams, indices):
    dt = grid.dt
    out = np.zeros((len(indices), len(grid), d))
    for row, i in enumerate(indices):
        np.cumsum(_increments(streams.path_generator(i), dt, d), axis=0, out=out[row, 1:])
    return out


def simulate_bm(grid, d=1, rng=0, n_paths=1, start=0, n_jobs=1):
    """Standard Brownian paths, shape ``(n_paths, n_steps + 1, d)``.

    Path ``i`` is drawn from its own substream keyed by ``start + i``, so any
    chunking of the ensemble reproduces the same paths.
    """
    if d < 1:
        raise InvalidInputError("dimension must be >= 1")
    streams = as_streams(rng)
    idx = np.arange(start, start + n_paths)
    if n_jobs == 1 or n_paths < 2:
        return _bm_paths(grid, d, streams, idx)
    chunks = np.array_split(idx, min(n_paths, abs(n_jobs) if n_jobs > 0 else 8))
    parts = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_bm_paths)(grid, d, streams, c) for c in chunks)
    return np.concatenate(parts, axis=0)


SIGMAS = {
    "const": lambda x: np.ones_like(x),
    "sin": lambda x: 1.0 + 0.5 * np.sin(x),
    "tanh": lambda x: 1.0 + 0.5 * np.tanh(x),
}


@dataclass(frozen=True)
class ProcessRecipe:
    """Ingredients of a test semimartingale.

    martingale: ``"bm"`` (scale * B), ``"sigma"`` (Euler for int sigma(X) dB,
    sigma bounded, evaluated at the left endpoint) or ``"zero"``.
    drift: ``"zero"`` or ``"linear"`` (a(t) = drift_vector * t).
    frozen: time windows on which every increment is set to zero.
    """
    martingale: str = "bm"
    scale: float = 1.0
    sigma: Union[str, Callable] = "const"
    drift: str = "zero"
    drift_vector: Sequence[float] = (1.0,)
    frozen: Sequence[tuple] = ()
    dim: int = 1
    x0: Sequence[float] = (0.0,)

    def __post_init__(self):
        problems = []
        if self.martingale not in ("bm", "sigma", "zero"):
            problems.append(f"unknown martingale recipe {self.martingale!r}")
        if self.drift not in ("zero", "linear"):
            problems.append(f"unknown drift recipe {self.drift!r}")
        if isinstance(self.sigma, str) and self.sigma not in SIGMAS:
            problems.append(f"unknown sigma {self.sigma!r}; choose from {sorted(SIGMAS)}")
        for w in self.frozen:
            if len(w) != 2 or not w[0] < w[1]:
                problems.append(f"frozen window {w!r} must be (start, end) with start < end")
        if problems:
            raise ConfigError(problems)


def _frozen_mask(grid, windows):
    t = grid.times
    live = np.ones(grid.n_steps, dtype=bool)
    for lo, hi in windows:
        live &= ~((t[:-1] >= lo) & (t[1:] <= hi))
    return live


def build_semimartingale(recipe, grid, rng=0, n_paths=1, start=0, n_jobs=1):
    """Simulate ``n_paths`` paths of the process described by ``recipe``."""
    if not isinstance(recipe, ProcessRecipe):
        recipe = ProcessRecipe(**recipe)
    streams = as_streams(rng)
    d = recipe.dim
    x0 = np.broadcast_to(np.asarray(recipe.x0, dtype=float).reshape(-1), (d,))
    live = _frozen_mask(grid, recipe.frozen)
    shape = (n_paths, len(grid), d)

    a = np.zeros(shape)
    if recipe.drift == "linear":
        b = np.broadcast_to(np.asarray(recipe.drift_vector, dtype=float).reshape(-1), (d,))
        if live.all():
            a[:] = b * grid.times[:, None]
        else:
            a[:, 1:] = np.cumsum(b * (grid.dt * live)[:, None], axis=0)

    m = np.zeros(shape)
    if recipe.martingale != "zero":
        B = simulate_bm(grid, d, streams.child("martingale"), n_paths, start, n_jobs)
        dB = recipe.scale * np.diff(B, axis=1) * live[None, :, None]
        if recipe.martingale == "bm":
            m[:, 1:] = np.cumsum(dB, axis=1)
        else:
            sigma = SIGMAS[recipe.sigma] if isinstance(recipe.sigma, str) else recipe.sigma
            for j in range(grid.n_steps):
                m[:, j + 1] = m[:, j] + sigma(x0 + m[:, j] + a[:, j]) * dB[:, j]
    return SemimartingalePath(grid, x0, m, a)


def perturb(xpath, epsilon, rng=0):
    """Add ``epsilon * B`` with ``B`` an independent Brownian ensemble.

    ``B`` comes from the ``"perturbation"`` child stream, disjoint from the
    streams used to build ``xpath``. Reusing the same ``rng`` for several
    epsilons gives common random numbers.
    """
    if epsilon < 0:
        raise InvalidInputError("epsilon must be non-negative")
    streams = as_streams(rng).child("perturbation")
    b = simulate_bm(xpath.grid, xpath.dim, streams, xpath.n_paths)
    return perturb_with(xpath, epsilon, b)


def perturb_with(xpath, epsilon, b):
    """Perturb by a caller-supplied Brownian ensemble ``b``."""
    b = as_path_array(b, "b")
    if b.shape != xpath.m.shape:
        raise InvalidInputError(f"perturbation has shape {b.shape}, expected {xpath.m.shape}")
    result = SemimartingalePath(xpath.grid, xpath.x0, xpath.m + epsilon * b, xpath.a)
    return PerturbedPath(xpath, float(epsilon), b, result)


# --------------------------------------------------------------------------
# stopping times
# --------------------------------------------------------------------------

def _as_semimartingale(xpath):
    return xpath.result if isinstance(xpath, PerturbedPath) else xpath


def stop_at_exit(xpath, r):
    """First grid index with ``|x| >= r``, else the last index."""
    if r <= 0:
        raise InvalidInputError("radius must be positive")
    p = _as_semimartingale(xpath)
    out = np.linalg.norm(p.x, axis=-1) >= r
    n = len(p.grid) - 1
    idx = np.where(out.any(axis=1), np.argmax(out, axis=1), n)
    return StoppingRecord(idx, p.grid.times[idx], StopKind.EXIT_RADIUS, n, float(r))


def horizon_record(xpath):
    p = _as_semimartingale(xpath)
    n = len(p.grid) - 1
    idx = np.full(p.n_paths, n)
    return StoppingRecord(idx, p.grid.times[idx], StopKind.HORIZON, n)


def min_of(*records):
    """Pathwise minimum ``T_1 ^ T_2 ^ ...`` of stopping records on one grid."""
    if not records:
        raise InvalidInputError("min_of needs at least one record")
    idx = np.min([r.index for r in records], axis=0)
    src = np.argmin([r.index for r in records], axis=0)
    time = np.choose(src, [r.time for r in records])
    return StoppingRecord(idx, time, StopKind.MIN_OF, records[0].horizon_index,
                          parts=tuple(records))


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def path_header(d):
    return (["t"] + [f"x_{i}" for i in range(1, d + 1)]
            + [f"m_{i}" for i in range(1, d + 1)] + [f"a_{i}" for i in range(1, d + 1)])


def path_rows(xpath, long=True):
    """Rows for the path CSV dump; ``long`` prepends a ``path_id`` column."""
    p = _as_semimartingale(xpath)
    t = p.grid.times
    for k in range(p.n_paths):
        block = np.column_stack([t, p.x[k], p.m[k], p.a[k]])
        for row in block:
            yield ([k] if long else []) + [float(v) for v in row]
