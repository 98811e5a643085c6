"""Experiments on the decomposition ``f(X) = f(X_0) + N + S`` of a convex
function of a continuous semimartingale.

``N = int subgrad f(X) dM`` is the candidate martingale part and ``S`` the
residual.  Piecewise-linear functions are decomposed exactly; general
functions are reached through Moreau smoothing of a Brownian-perturbed path
and the limit of vanishing perturbation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex_core import (PLConvex, active_index, active_index_max, as_oracle,
                          empirical_lipschitz, smooth)
from .exceptions import InsufficientDataError, InvalidInputError
from .ito_engine import (MIN_PATHS, IntegralPath, ito_integral, local_time_tanaka,
                         martingale_test)
from .path_sim import (PerturbedPath, ProcessRecipe, SemimartingalePath, TimeGrid,
                       build_semimartingale, min_of, perturb_with, simulate_bm,
                       stop_at_exit)
from .rng import as_generator, as_streams

PATH_TOL = 1e-12
FLAT_TOL = 1e-9


def _running_sum(incr):
    out = np.zeros((incr.shape[0], incr.shape[1] + 1))
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def _pl_of(f):
    if isinstance(f, PLConvex):
        return f
    pl = getattr(f, "pl", None)
    if pl is None:
        raise InvalidInputError("this operation needs a piecewise-linear function")
    return pl


# --------------------------------------------------------------------------
# subgradient selections on paths
# --------------------------------------------------------------------------

SELECTIONS = ("min_index_pl", "mollified", "left_derivative_1d", "oracle")


def selection_map(f, selection="oracle", tol=PATH_TOL, theta=1e-9, samples=64, rng=0):
    """Return a batched map ``points (..., d) -> subgradients (..., d)``.

    ``min_index_pl``: gradient of the smallest-index active piece.
    ``mollified``: Gaussian average of the min-index selection around the
    point; PL functions only average where two or more pieces are active.
    ``left_derivative_1d``: left derivative on R.
    ``oracle``: the oracle's own selection. A callable is used as is.
    """
    if callable(selection):
        return selection
    oracle = as_oracle(f)
    pl = oracle.pl
    if selection == "oracle":
        return oracle.subgrad
    if selection == "min_index_pl":
        pl = _pl_of(f)
        return lambda x: pl.beta[np.asarray(active_index(pl, x, tol))]
    if selection == "left_derivative_1d":
        if oracle.dim != 1:
            raise InvalidInputError("left_derivative_1d needs d = 1")
        if pl is not None:
            def left(x):
                vals = pl.piece_values(x)
                act = vals >= vals.max(axis=-1, keepdims=True) - tol
                return np.where(act, pl.beta[:, 0], np.inf).min(axis=-1)[..., None]
            return left

        def left_quotient(x):
            lam = 1e-7 * (1.0 + np.abs(x))
            return ((oracle.eval(x) - oracle.eval(x - lam)) / lam[..., 0])[..., None]
        return left_quotient
    if selection == "mollified":
        N = as_generator(rng).standard_normal((samples, oracle.dim))

        def averaged(x):
            return oracle.subgrad(x[..., None, :] + theta * N).mean(axis=-2)

        if pl is None:
            return averaged

        def mollified_pl(x):
            vals = pl.piece_values(x)
            n_act = np.sum(vals >= vals.max(axis=-1, keepdims=True) - tol, axis=-1)
            out = pl.beta[np.asarray(active_index(pl, x, tol))]
            kink = n_act > 1
            if np.any(kink):
                out = np.array(out, copy=True)
                out[kink] = averaged(x[kink])
            return out
        return mollified_pl
    raise InvalidInputError(f"unknown selection {selection!r}; choose from {SELECTIONS}")


# --------------------------------------------------------------------------
# piecewise-linear decomposition
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecompositionResult:
    """``f(x) - f(x0) = n + s``; ``fv`` is the part of ``s`` driven by ``A``."""
    n: IntegralPath
    s: np.ndarray
    fv: np.ndarray
    f_label: str
    selection_label: str

    @property
    def local_time_part(self):
        return self.s - self.fv


def decompose_pl(f, x, tol=PATH_TOL, tie_break="min"):
    """Split ``f(X)`` into ``int beta_{i(X)} dM`` and a residual.

    ``tie_break="min"`` uses the smallest active index; ``"max"`` the largest,
    which is the ``sgn(0) = -1`` convention of the two-piece Tanaka argument.
    """
    pl = _pl_of(f)
    if isinstance(x, PerturbedPath):
        x = x.result
    if x.dim != pl.dim:
        raise InvalidInputError(f"path dimension {x.dim} does not match f ({pl.dim})")
    pick = active_index if tie_break == "min" else active_index_max
    H = pl.beta[np.asarray(pick(pl, x.x, tol))]
    n = ito_integral(H, x.m, grid=x.grid, label=f"beta[{tie_break}-index]")
    fx = pl.piece_values(x.x).max(axis=-1)
    s = fx - fx[:, :1] - n.values
    fv = _running_sum(np.einsum("pjd,pjd->pj", H[:, :-1], np.diff(x.a, axis=1)))
    return DecompositionResult(n, s, fv, f"pl(k={pl.k})", f"{tie_break}_index")


def two_piece_half_local_time(f, x, orientation="l1-l2"):
    """``L/2`` for ``W = l_1(X) - l_2(X)`` (or ``l_2 - l_1``) of a two-piece PL function.

    With no exact ties on the grid this equals the local-time part of
    :func:`decompose_pl`. At exact ties ``l1-l2`` pairs with ``tie_break="max"``
    and ``l2-l1`` with ``tie_break="min"``.
    """
    pl = _pl_of(f)
    if pl.k != 2:
        raise InvalidInputError("needs exactly two pieces")
    if isinstance(x, PerturbedPath):
        x = x.result
    vals = pl.piece_values(x.x)
    W = vals[..., 0] - vals[..., 1]
    if orientation == "l2-l1":
        W = -W
    elif orientation != "l1-l2":
        raise InvalidInputError("orientation is 'l1-l2' or 'l2-l1'")
    return 0.5 * local_time_tanaka(W[:, :, None]).values


@dataclass(frozen=True)
class FlatnessReport:
    ok: bool
    flat_ok: bool
    monotone_ok: bool
    qualifying_steps: int
    max_flat_increment: float
    max_decrease: float
    monotone_tol: float
    margin: float


def default_margin(f, grid):
    """``4 * max_ij |beta_i - beta_j| * sqrt(dt)``: an 8-sigma gap per step for BM paths."""
    pl = _pl_of(f)
    diffs = pl.beta[:, None, :] - pl.beta[None, :, :]
    spread = float(np.max(np.linalg.norm(diffs, axis=-1)))
    return 4.0 * spread * float(np.sqrt(np.max(grid.dt)))


def residual_flatness_check(result, f, x, margin=None):
    """The local-time part of ``S`` must be flat off the coincidence set and nondecreasing.

    A step qualifies when every pair of pieces is more than ``margin`` apart
    at both of its endpoints.
    """
    pl = _pl_of(f)
    if isinstance(x, PerturbedPath):
        x = x.result
    margin = default_margin(pl, x.grid) if margin is None else margin
    if margin <= 0:
        raise InvalidInputError("margin must be positive")
    ls = result.local_time_part
    d_ls = np.diff(ls, axis=1)
    if pl.k > 1:
        vals = pl.piece_values(x.x)
        iu = np.triu_indices(pl.k, 1)
        gaps = np.abs(vals[..., iu[0]] - vals[..., iu[1]]).min(axis=-1)
        far = gaps > margin
        qualifying = far[:, :-1] & far[:, 1:]
    else:
        qualifying = np.ones_like(d_ls, dtype=bool)
    max_flat = float(np.max(np.abs(d_ls[qualifying]), initial=0.0))
    dx = float(np.max(np.abs(np.diff(x.x, axis=1)), initial=0.0))
    mono_tol = 2.0 * dx * float(np.max(np.abs(pl.beta)))
    max_dec = float(np.max(-d_ls, initial=0.0))
    flat_ok = max_flat <= FLAT_TOL
    mono_ok = max_dec <= mono_tol
    return FlatnessReport(flat_ok and mono_ok, flat_ok, mono_ok, int(qualifying.sum()),
                          max_flat, max_dec, mono_tol, float(margin))


# --------------------------------------------------------------------------
# convergence curves
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceCurve:
    params: np.ndarray
    errors: np.ndarray
    stderrs: np.ndarray
    kind: str

    def monotone(self, k=2.0):
        """Each point is at most the previous one plus ``k`` of its own standard errors."""
        e, s = self.errors, self.stderrs
        return bool(np.all(e[1:] <= e[:-1] + k * s[1:]))

    def ratio(self):
        return float(self.errors[-1] / self.errors[0]) if self.errors[0] > 0 else 0.0

    def rows(self):
        return [(float(p), float(e), float(s))
                for p, e, s in zip(self.params, self.errors, self.stderrs)]


def _h2_curve(per_path, params, kind, n_boot, rng):
    """Square root of the ensemble mean of each column, bootstrap errors over paths."""
    per_path = np.asarray(per_path)  # (n_params, n_paths)
    errors = np.sqrt(per_path.mean(axis=1))
    gen = as_generator(rng)
    idx = gen.integers(0, per_path.shape[1], size=(n_boot, per_path.shape[1]))
    boot = np.sqrt(per_path[:, idx].mean(axis=2))
    return ConvergenceCurve(np.asarray(params, dtype=float), errors,
                            boot.std(axis=1, ddof=1), kind)


def _step_mask(index, n_steps):
    return np.arange(n_steps)[None, :] < np.asarray(index)[:, None]


def _point_mask(index, n_points):
    return np.arange(n_points)[None, :] <= np.asarray(index)[:, None]


def smoothing_convergence_experiment(f, xtilde, n_levels, r, selection="oracle",
                                     n_boot=200, rng=0):
    """H^2 distance between ``int grad f_n(X~) dM~`` and ``int subgrad f(X~) dM~``.

    Both integrals are stopped at the exit of the ball of radius ``r``; the
    distance is the square root of the ensemble mean of the discrete
    quadratic variation of their difference.
    """
    levels = np.asarray(n_levels, dtype=int)
    if np.any(np.diff(levels) <= 0):
        raise InvalidInputError("n_levels must be increasing")
    p = xtilde.result if isinstance(xtilde, PerturbedPath) else xtilde
    oracle = as_oracle(f)
    stop = stop_at_exit(p, r)
    live = _step_mask(stop.index, p.grid.n_steps)
    dM = np.diff(p.m, axis=1)
    X = p.x[:, :-1]
    g = selection_map(oracle, selection)(X)
    per_path = []
    for n in levels:
        gn = smooth(oracle, int(n)).smoothed_grad(X)
        q = (np.einsum("pjd,pjd->pj", gn - g, dM) * live) ** 2
        per_path.append(q.sum(axis=1))
    return _h2_curve(per_path, levels, "smoothing", n_boot, as_streams(rng).child("boot"))


@dataclass(frozen=True)
class ConditionReport:
    e1: float
    e2: float
    e3: float
    epsilon: float
    C_rprime: float
    K_rprime: float
    sup_b: float
    r: float
    r_prime: float

    @property
    def e1_bound(self):
        """``epsilon * K_{r'} * E sup_{t<=T} |B_t|``."""
        return self.epsilon * self.K_rprime * self.sup_b


def _common_b(x, rng):
    return simulate_bm(x.grid, x.dim, as_streams(rng).child("perturbation"), x.n_paths)


def condition_estimates(f, x, epsilon, r, r_prime, rng=0, b=None, selection="oracle",
                        lipschitz=None):
    """Monte Carlo estimates of the three perturbation conditions up to ``T = T_r ^ T~_r'``.

    e1 = E sup |f(X~) - f(X)|, e2 = E sup |N~|, e3 = E int |dS~|.
    """
    if not r_prime > r > 0:
        raise InvalidInputError("need r_prime > r > 0")
    if isinstance(x, PerturbedPath):
        x = x.base
    oracle = as_oracle(f)
    b = _common_b(x, rng) if b is None else b
    xt = perturb_with(x, epsilon, b).result
    T = min_of(stop_at_exit(x, r), stop_at_exit(xt, r_prime))
    upto = _point_mask(T.index, len(x.grid))
    live = _step_mask(T.index, x.grid.n_steps)
    fx, fxt = oracle.eval(x.x), oracle.eval(xt.x)
    e1 = np.max(np.abs(fxt - fx) * upto, axis=1).mean()
    G = selection_map(oracle, selection)(xt.x)
    incr = np.einsum("pjd,pjd->pj", G[:, :-1], np.diff(xt.m, axis=1)) * live
    N = _running_sum(incr)
    e2 = np.max(np.abs(N) * upto, axis=1).mean()
    dS = np.diff(fxt, axis=1) * live - incr
    e3 = np.sum(np.abs(dS), axis=1).mean()
    C = float(np.max(np.linalg.norm(G, axis=-1) * upto))
    if lipschitz is None:
        lipschitz = empirical_lipschitz(oracle, r_prime, rng=as_generator(as_streams(rng).child("lip")))
    sup_b = np.max(np.linalg.norm(b, axis=-1) * upto, axis=1).mean()
    return ConditionReport(float(e1), float(e2), float(e3), float(epsilon), C,
                           float(lipschitz), float(sup_b), float(r), float(r_prime))


def _eps_terms(oracle, x, xt, sel, r, r_prime):
    T_r = stop_at_exit(x, r)
    T = min_of(T_r, stop_at_exit(xt, r_prime))
    live_t = _step_mask(T.index, x.grid.n_steps)
    live_r = _step_mask(T_r.index, x.grid.n_steps)
    gt = sel(xt.x[:, :-1])
    g = sel(x.x[:, :-1])
    It = np.einsum("pjd,pjd->pj", gt, np.diff(xt.m, axis=1)) * live_t
    I = np.einsum("pjd,pjd->pj", g, np.diff(x.m, axis=1)) * live_r
    return It, I


def epsilon_convergence_experiment(f, x, eps_schedule, r, r_prime, rng=0, b=None,
                                   selection="oracle", n_boot=200):
    """H^2 distance between the stopped integrals for ``X + eps B`` and for ``X``.

    The same ``B`` is used for every epsilon.
    """
    eps = np.asarray(eps_schedule, dtype=float)
    if np.any(np.diff(eps) >= 0):
        raise InvalidInputError("eps_schedule must be decreasing")
    if not r_prime > r > 0:
        raise InvalidInputError("need r_prime > r > 0")
    if isinstance(x, PerturbedPath):
        x = x.base
    oracle = as_oracle(f)
    sel = selection_map(oracle, selection)
    b = _common_b(x, rng) if b is None else b
    per_path = []
    for e in eps:
        It, I = _eps_terms(oracle, x, perturb_with(x, e, b).result, sel, r, r_prime)
        per_path.append(np.sum((It - I) ** 2, axis=1))
    return _h2_curve(per_path, eps, "perturbation", n_boot, as_streams(rng).child("boot"))


def epsilon_distance_expanded(f, x, epsilon, r, r_prime, b, selection="oracle"):
    """Squared distance written as ``<N~> + <N> - 2 <N~, N>``, one value per path."""
    oracle = as_oracle(f)
    xt = perturb_with(x, epsilon, b).result
    It, I = _eps_terms(oracle, x, xt, selection_map(oracle, selection), r, r_prime)
    return np.sum(It ** 2, axis=1) + np.sum(I ** 2, axis=1) - 2.0 * np.sum(It * I, axis=1)


# --------------------------------------------------------------------------
# end-to-end verification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationReport:
    verdict: bool
    martingale: object
    levels: tuple
    tv_means: tuple
    growth: tuple
    growth_tol: float
    s_terminal_mean: float
    selection: str

    @property
    def finite_variation(self):
        return all(g < self.growth_tol for g in self.growth)


def verify_decomposition(f, recipe=None, selection="oracle", n_paths=400, rng=0,
                         levels=(10, 12, 14), horizon=1.0, growth_tol=1.25,
                         checkpoints=(0.0, 0.25, 0.5, 0.75, 1.0), x=None):
    """Check that ``N = int subgrad f(X) dM`` is a martingale and ``S`` has finite variation.

    Paths are simulated on the finest grid ``2**max(levels)`` and subsampled,
    so every level sees the same Brownian paths. The mean total variation of
    ``S`` must grow by less than ``growth_tol`` per refinement.
    """
    if n_paths < MIN_PATHS:
        raise InsufficientDataError(f"need >= {MIN_PATHS} paths, got {n_paths}")
    oracle = as_oracle(f)
    levels = tuple(sorted(levels))
    if x is None:
        recipe = recipe or ProcessRecipe(dim=oracle.dim, x0=(0.0,) * oracle.dim)
        x = build_semimartingale(recipe, TimeGrid.uniform(2 ** levels[-1], horizon),
                                 rng, n_paths)
    sel = selection_map(oracle, selection)
    label = selection if isinstance(selection, str) else getattr(selection, "__name__", "custom")
    tv, report, s_term = [], None, 0.0
    for lev in levels:
        xl = x.coarsen(2 ** (levels[-1] - lev))
        N = ito_integral(sel(xl.x), xl.m, grid=xl.grid, label=label)
        fx = oracle.eval(xl.x)
        S = fx - fx[:, :1] - N.values
        t = float(np.mean(np.sum(np.abs(np.diff(S, axis=1)), axis=1)))
        # variation at rounding level counts as none
        tv.append(0.0 if t <= FLAT_TOL else t)
        if lev == levels[-1]:
            report = martingale_test(N, checkpoints)
            s_term = float(S[:, -1].mean())
    growth = tuple(tv[i + 1] / tv[i] if tv[i] > 0 else (1.0 if tv[i + 1] == 0 else np.inf)
                   for i in range(len(tv) - 1))
    verdict = report.verdict and all(g < growth_tol for g in growth)
    return VerificationReport(bool(verdict), report, levels, tuple(tv), growth, growth_tol,
                              s_term, label)
