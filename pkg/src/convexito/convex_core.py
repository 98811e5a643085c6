"""Convex analysis on R^d: evaluation, directional derivatives, subgradients,
Moreau smoothing and the two canonical subgradient selections.

Functions are either :class:`PLConvex` (max of affine pieces, exact
structure) or :class:`ConvexOracle` (evaluation plus a subgradient selection
callback).  Every callback is batched: it takes points of shape ``(..., d)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from ._validation import as_points, as_vector, check_decreasing, geometric_schedule
from .exceptions import (ConvexityViolationError, InvalidInputError,
                         LimitFailureError, SmoothingError)
from .rng import as_generator

DEFAULT_LAMBDAS = geometric_schedule(1.0, 12)
DEFAULT_THETAS = geometric_schedule(1e-6, 12)
DEFAULT_EPSILONS = geometric_schedule(1e-6, 12)


# --------------------------------------------------------------------------
# piecewise-linear convex functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AffinePiece:
    alpha: float
    beta: tuple

    def __post_init__(self):
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        if len(beta) < 1 or not np.all(np.isfinite(beta)):
            raise InvalidInputError("beta must be a non-empty finite vector")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self):
        return len(self.beta)

    def __call__(self, x):
        x = as_points(x, self.dim)
        return self.alpha + x @ np.asarray(self.beta)


class PLConvex:
    """``f(x) = max_i (alpha_i + beta_i . x)``.

    Piece order matters: ties are resolved to the smallest index.
    """

    def __init__(self, pieces):
        pieces = [p if isinstance(p, AffinePiece) else AffinePiece(*p) for p in pieces]
        if not pieces:
            raise InvalidInputError("PLConvex needs at least one piece")
        dims = {p.dim for p in pieces}
        if len(dims) != 1:
            raise InvalidInputError(f"pieces disagree on dimension: {sorted(dims)}")
        self.pieces = tuple(pieces)
        self.dim = dims.pop()
        self.alpha = np.array([p.alpha for p in pieces])
        self.beta = np.array([p.beta for p in pieces])
        self.alpha.setflags(write=False)
        self.beta.setflags(write=False)

    @classmethod
    def from_arrays(cls, alpha, beta):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        beta = np.asarray(beta, dtype=float)
        if beta.ndim == 1:
            beta = beta[:, np.newaxis]
        if beta.shape[0] != alpha.shape[0]:
            raise InvalidInputError("alpha and beta must list the same number of pieces")
        return cls([AffinePiece(a, b) for a, b in zip(alpha, beta)])

    @property
    def k(self):
        return len(self.pieces)

    def piece_values(self, x):
        x = as_points(x, self.dim)
        return self.alpha + x @ self.beta.T

    def __call__(self, x):
        return eval_pl(self, x)

    def __eq__(self, other):
        return (isinstance(other, PLConvex) and self.pieces == other.pieces)

    def __hash__(self):
        return hash(self.pieces)

    def __repr__(self):
        return f"PLConvex(dim={self.dim}, k={self.k})"

    # serialization: shortest round-trip float repr keeps values exact
    def to_dict(self):
        return {"dim": self.dim,
                "pieces": [{"alpha": p.alpha, "beta": list(p.beta)} for p in self.pieces]}

    @classmethod
    def from_dict(cls, data):
        try:
            dim = int(data["dim"])
            pieces = [AffinePiece(p["alpha"], p["beta"]) for p in data["pieces"]]
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed PLConvex record: {exc}") from None
        f = cls(pieces)
        if f.dim != dim:
            raise InvalidInputError(f"declared dim {dim} but pieces have dim {f.dim}")
        return f

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def eval_pl(f, x):
    """Max over affine pieces. Returns a float for a single point."""
    vals = f.piece_values(x).max(axis=-1)
    return float(vals) if np.ndim(x) <= 1 and vals.size == 1 else vals


def active_index(f, x, tol=0.0):
    """Smallest (0-based) index whose piece is within ``tol`` of the max."""
    if tol < 0:
        raise InvalidInputError("tol must be non-negative")
    vals = f.piece_values(x)
    idx = np.argmax(vals >= vals.max(axis=-1, keepdims=True) - tol, axis=-1)
    return int(idx) if idx.ndim == 0 or (np.ndim(x) <= 1 and idx.size == 1) else idx


def active_index_max(f, x, tol=0.0):
    """Largest index within ``tol`` of the max (the sgn(0) = -1 tie convention)."""
    vals = f.piece_values(x)[..., ::-1]
    idx = f.k - 1 - np.argmax(vals >= vals.max(axis=-1, keepdims=True) - tol, axis=-1)
    return int(idx) if idx.ndim == 0 or (np.ndim(x) <= 1 and idx.size == 1) else idx


def subdifferential_pl(f, x, tol=0.0):
    """Distinct gradients of the pieces active at a single point ``x``.

    The subdifferential is the convex hull of the returned rows.
    """
    if tol < 0:
        raise InvalidInputError("tol must be non-negative")
    x = as_vector(x, f.dim)
    vals = f.piece_values(x)
    act = np.flatnonzero(vals >= vals.max() - tol)
    out = []
    for i in act:
        b = f.beta[i]
        if not any(np.array_equal(b, o) for o in out):
            out.append(b.copy())
    return np.array(out)


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvexOracle:
    """A convex function given by batched callbacks.

    ``prox(x, n)`` optionally returns ``argmin_z f(z) + n/2 |x - z|^2``;
    ``pl`` keeps the exact piece structure when the oracle wraps a PLConvex.
    """
    dim: int
    eval: Callable
    subgrad: Callable
    lipschitz_hint: Optional[Callable] = None
    prox: Optional[Callable] = None
    pl: Optional[PLConvex] = None
    label: str = "oracle"

    def __call__(self, x):
        return self.eval(as_points(x, self.dim))

    def value(self, x):
        """Scalar value at one point."""
        return float(np.reshape(self.eval(as_points(x, self.dim)), -1)[0])

    def gradient(self, x):
        return np.reshape(self.subgrad(as_points(x, self.dim)), (-1, self.dim))[0]

    @classmethod
    def from_pl(cls, f, tol=0.0, label=None):
        def ev(x):
            return f.piece_values(x).max(axis=-1)

        def sg(x):
            x = as_points(x, f.dim)
            return f.beta[np.asarray(active_index(f, x, tol))]

        lip = float(np.max(np.linalg.norm(f.beta, axis=1)))
        return cls(f.dim, ev, sg, lipschitz_hint=lambda r: lip, pl=f,
                   label=label or f"pl(k={f.k})")


def as_oracle(f):
    if isinstance(f, ConvexOracle):
        return f
    if isinstance(f, PLConvex):
        return ConvexOracle.from_pl(f)
    raise TypeError(f"expected ConvexOracle or PLConvex, got {type(f).__name__}")


def abs_oracle(at_zero=-1.0):
    """``|x|`` on R with the selection ``sgn(x)`` for ``x != 0`` and ``at_zero`` at 0."""
    if not -1.0 <= at_zero <= 1.0:
        raise InvalidInputError("the value at zero must lie in [-1, 1]")

    def ev(x):
        return np.abs(x[..., 0])

    def sg(x):
        return np.where(x > 0, 1.0, np.where(x < 0, -1.0, at_zero))

    def prox(x, n):
        return np.sign(x) * np.maximum(np.abs(x) - 1.0 / n, 0.0)

    return ConvexOracle(1, ev, sg, lipschitz_hint=lambda r: 1.0, prox=prox,
                        pl=PLConvex([(0.0, -1.0), (0.0, 1.0)]) if at_zero == -1.0 else None,
                        label=f"abs(at_zero={at_zero:g})")


def affine_oracle(alpha, beta):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    d = beta.size

    def ev(x):
        return alpha + x @ beta

    def sg(x):
        return np.broadcast_to(beta, x.shape).copy()

    def prox(x, n):
        return x - beta / n

    norm = float(np.linalg.norm(beta))
    return ConvexOracle(d, ev, sg, lipschitz_hint=lambda r: norm, prox=prox,
                        pl=PLConvex([(alpha, beta)]), label="affine")


def quadratic_oracle(Q):
    """``f(x) = x^T Q x / 2`` for symmetric positive semidefinite ``Q`` (or a scalar)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = Q.shape[0]
    if Q.shape != (d, d) or not np.allclose(Q, Q.T):
        raise InvalidInputError("Q must be a symmetric square matrix")
    if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
        raise InvalidInputError("Q must be positive semidefinite")
    top = float(np.max(np.abs(np.linalg.eigvalsh(Q))))

    def ev(x):
        return 0.5 * np.einsum("...i,ij,...j->...", x, Q, x)

    def sg(x):
        return x @ Q

    def prox(x, n):
        return np.linalg.solve(Q + n * np.eye(d), (n * x).reshape(-1, d).T).T.reshape(x.shape)

    return ConvexOracle(d, ev, sg, lipschitz_hint=lambda r: top * r, prox=prox,
                        label="quadratic")


def euclidean_norm_oracle(dim):
    """``|x|_2`` on R^d; selection ``x/|x|`` away from 0 and 0 at the origin."""

    def ev(x):
        return np.linalg.norm(x, axis=-1)

    def sg(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(r > 0, x / np.where(r > 0, r, 1.0), 0.0)

    def prox(x, n):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 1.0 / n, 1.0 - 1.0 / (n * np.where(r > 0, r, 1.0)), 0.0)
        return x * scale

    return ConvexOracle(dim, ev, sg, lipschitz_hint=lambda r: 1.0, prox=prox,
                        label=f"norm(d={dim})")


# --------------------------------------------------------------------------
# directional derivatives and the subgradient inequality
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionalDerivative:
    value: float
    gap: float
    quotients: np.ndarray
    lambdas: np.ndarray

    def __float__(self):
        return self.value


def _quotients(f, x, Y, lambdas):
    """Difference quotients, shape ``(len(Y), len(lambdas))``."""
    fx = np.reshape(f.eval(x[np.newaxis]), ())
    pts = x + lambdas[np.newaxis, :, np.newaxis] * Y[:, np.newaxis, :]
    return (f.eval(pts) - fx) / lambdas


def _monotone_violation(q, tol):
    # quotients must be nonincreasing as lambda shrinks
    rise = np.diff(q, axis=-1)
    scale = tol * (1.0 + np.abs(q[..., :-1]))
    return np.max(rise - scale, axis=-1, initial=-np.inf)


def directional_derivative(f, x, y, lambda_schedule=None, tol=1e-8):
    """One-sided derivative of convex ``f`` at ``x`` along ``y``.

    Returns the quotient at the smallest step, an upper bound on the limit;
    ``gap`` is the difference of the last two quotients.
    """
    f = as_oracle(f)
    x = as_vector(x, f.dim)
    y = as_vector(y, f.dim)
    if not np.any(y):
        raise InvalidInputError("direction must be non-zero")
    lambdas = check_decreasing(DEFAULT_LAMBDAS if lambda_schedule is None else lambda_schedule,
                               "lambda_schedule")
    q = _quotients(f, x, y[np.newaxis], lambdas)[0]
    if _monotone_violation(q, tol) > 0:
        raise ConvexityViolationError(
            "difference quotients increase as the step shrinks; the oracle is not convex",
            quotients=q)
    gap = float(abs(q[-1] - q[-2])) if q.size > 1 else float("nan")
    return DirectionalDerivative(float(q[-1]), gap, q, lambdas)


@dataclass(frozen=True)
class SubgradientCheck:
    ok: bool
    worst_margin: float
    worst_direction: np.ndarray

    def __bool__(self):
        return self.ok


def subgradient_check(f, x, g, dirs, tol=1e-9, lambda_schedule=None):
    """Sampled subgradient inequality ``Df(x)[y] >= <g, y> - tol`` over ``dirs``."""
    f = as_oracle(f)
    x = as_vector(x, f.dim)
    g = as_vector(g, f.dim)
    Y = np.atleast_2d(np.asarray(dirs, dtype=float))
    if Y.shape[0] == 0:
        raise InvalidInputError("dirs must be non-empty")
    if Y.shape[1] != f.dim:
        raise InvalidInputError(f"directions have dim {Y.shape[1]}, expected {f.dim}")
    lambdas = check_decreasing(DEFAULT_LAMBDAS if lambda_schedule is None else lambda_schedule,
                               "lambda_schedule")
    q = _quotients(f, x, Y, lambdas)
    margins = q[:, -1] - Y @ g
    w = int(np.argmin(margins))
    return SubgradientCheck(bool(margins[w] >= -tol), float(margins[w]), Y[w].copy())


def random_unit_vectors(n, dim, rng):
    rng = as_generator(rng)
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# --------------------------------------------------------------------------
# Moreau smoothing
# --------------------------------------------------------------------------

def _upper_hull_1d(f):
    """Lines on the max-envelope of a 1-d PLConvex, by increasing slope."""
    order = np.lexsort((-f.alpha, f.beta[:, 0]))
    slopes, icpts = [], []
    for i in order:
        s, c = f.beta[i, 0], f.alpha[i]
        if slopes and slopes[-1] == s:
            continue  # same slope, lower intercept
        while len(slopes) >= 2:
            s1, c1, s2, c2 = slopes[-2], icpts[-2], slopes[-1], icpts[-1]
            # drop line 2 when line 3 overtakes line 1 no later than line 2 does
            if (c1 - c) * (s2 - s1) <= (c1 - c2) * (s - s1):
                slopes.pop()
                icpts.pop()
            else:
                break
        slopes.append(s)
        icpts.append(c)
    s = np.array(slopes)
    c = np.array(icpts)
    breaks = (c[:-1] - c[1:]) / (s[1:] - s[:-1])
    return s, c, breaks


def _prox_pl_1d(f, x, n):
    s, _, b = _upper_hull_1d(f)
    x = np.asarray(x, dtype=float)
    if s.size == 1:
        return x - s[0] / n
    knots = np.empty(2 * b.size)
    knots[0::2] = b + s[:-1] / n
    knots[1::2] = b + s[1:] / n
    vals = np.repeat(b, 2)
    z = np.interp(x, knots, vals)
    z = np.where(x < knots[0], x - s[0] / n, z)
    return np.where(x > knots[-1], x - s[-1] / n, z)


def _prox_pl_active_set(f, x, n):
    """Exact prox of a PLConvex in any dimension by enumerating active sets.

    For each candidate set S the KKT system of
    ``min t + n/2 |z - x|^2  s.t.  l_i(z) <= t`` is linear; the solution with
    the smallest KKT violation is kept.
    """
    shape = x.shape
    X = x.reshape(-1, f.dim)
    m = X.shape[0]
    best_z = np.zeros_like(X)
    best_viol = np.full(m, np.inf)
    L = f.alpha[:, None] + f.beta @ X.T
    for size in range(1, min(f.k, f.dim + 1) + 1):
        for S in combinations(range(f.k), size):
            S = list(S)
            BS = f.beta[S]
            K = np.zeros((size + 1, size + 1))
            K[:size, :size] = BS @ BS.T / n
            K[:size, size] = 1.0
            K[size, :size] = 1.0
            if np.linalg.cond(K) > 1e12:
                continue
            rhs = np.vstack([L[S], np.ones((1, m))])
            sol = np.linalg.solve(K, rhs)
            lam, t = sol[:size], sol[size]
            Z = X - (BS.T @ lam).T / n
            vals = f.alpha[:, None] + f.beta @ Z.T
            scale = 1.0 + np.abs(t)
            viol = np.maximum(np.max(vals - t, axis=0), 0.0) / scale
            viol = np.maximum(viol, np.maximum(-lam.min(axis=0), 0.0))
            better = viol < best_viol
            best_viol[better] = viol[better]
            best_z[better] = Z[better]
    return best_z.reshape(shape), best_viol.reshape(shape[:-1])


def _prox_subgradient(f, x, n, iters=1000, tol=1e-8, radius=None):
    """Projected subgradient descent on ``f(z) + n/2|z - x|^2`` with step 1/(n k)."""
    z = x.copy()
    best = z.copy()
    best_obj = f.eval(z)
    resid = np.full(x.shape[:-1], np.inf)
    for k in range(1, iters + 1):
        g = f.subgrad(z) + n * (z - x)
        step = g / (n * k)
        z_new = z - step
        if radius is not None:
            d = z_new - x
            nd = np.linalg.norm(d, axis=-1, keepdims=True)
            z_new = np.where(nd > radius, x + d * (radius / np.maximum(nd, 1e-300)), z_new)
        resid = np.linalg.norm(z_new - z, axis=-1)
        z = z_new
        obj = f.eval(z) + 0.5 * n * np.sum((z - x) ** 2, axis=-1)
        improve = obj < best_obj
        best[improve] = z[improve]
        best_obj = np.where(improve, obj, best_obj)
        if np.all(resid < tol):
            break
    return best, resid


@dataclass(frozen=True)
class SmoothedConvex:
    """Moreau envelope ``f_n(x) = min_z f(z) + n/2 |x - z|^2`` and its gradient."""
    base: ConvexOracle
    level: int
    prox: Callable = field(repr=False)
    method: str = "closed_form"

    def smoothed_eval(self, x):
        x = as_points(x, self.base.dim)
        z = self.prox(x)
        return self.base.eval(z) + 0.5 * self.level * np.sum((x - z) ** 2, axis=-1)

    def smoothed_grad(self, x):
        x = as_points(x, self.base.dim)
        return self.level * (x - self.prox(x))

    def as_oracle(self):
        return ConvexOracle(self.base.dim, self.smoothed_eval, self.smoothed_grad,
                            lipschitz_hint=self.base.lipschitz_hint,
                            label=f"moreau({self.base.label}, n={self.level})")


def smooth(f, n, residual_tol=1e-8, iters=1000):
    """Moreau envelope of ``f`` at level ``n``.

    Uses a closed-form prox when the oracle provides one, the exact piecewise
    formula for 1-d PL functions, an exact active-set solve for PL functions
    in higher dimension, and projected subgradient descent otherwise.
    """
    if n < 1:
        raise InvalidInputError("smoothing level must be >= 1")
    base = as_oracle(f)
    n = int(n)
    if base.prox is not None:
        return SmoothedConvex(base, n, lambda x: base.prox(x, n), "closed_form")
    if base.pl is not None and base.dim == 1:
        pl = base.pl
        return SmoothedConvex(base, n, lambda x: _prox_pl_1d(pl, x[..., 0], n)[..., None],
                              "pl_1d")
    if base.pl is not None:
        pl = base.pl

        def prox(x):
            z, viol = _prox_pl_active_set(pl, x, n)
            if np.any(viol > 1e-9):
                raise SmoothingError("active-set prox left a KKT violation",
                                     residual=float(np.max(viol)))
            return z
        return SmoothedConvex(base, n, prox, "pl_active_set")

    def prox(x):
        radius = None
        if base.lipschitz_hint is not None:
            # |x - prox(x)| = |grad f_n(x)| / n is bounded by C_r / n nearby
            r = np.linalg.norm(x, axis=-1, keepdims=True) + 1.0
            radius = np.vectorize(lambda v: float(base.lipschitz_hint(v)))(r) / n
        z, resid = _prox_subgradient(base, x, n, iters=iters, tol=residual_tol, radius=radius)
        if np.any(resid > residual_tol):
            raise SmoothingError(
                f"subgradient descent stopped with step residual {np.max(resid):.3g}",
                residual=float(np.max(resid)))
        return z
    return SmoothedConvex(base, n, prox, "subgradient_descent")


# --------------------------------------------------------------------------
# subgradient selections
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MollifiedSubgradient:
    value: np.ndarray
    estimates: np.ndarray
    std_errors: np.ndarray
    thetas: np.ndarray
    converged: bool


def mollified_subgradient(f, x, theta_schedule=None, samples=256, rng=0):
    """Gaussian-averaged selection ``E[subgrad(x + theta N)]`` along a theta schedule.

    The same Gaussian draws are reused for every theta. ``converged`` is False
    when the last two estimates differ by more than three combined standard
    errors.
    """
    f = as_oracle(f)
    x = as_vector(x, f.dim)
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    thetas = check_decreasing(DEFAULT_THETAS if theta_schedule is None else theta_schedule,
                              "theta_schedule")
    N = as_generator(rng).standard_normal((samples, f.dim))
    G = f.subgrad(x + thetas[:, None, None] * N[None])
    est = G.mean(axis=1)
    se = G.std(axis=1, ddof=1) / np.sqrt(samples) if samples > 1 else np.zeros_like(est)
    converged = True
    if thetas.size > 1:
        diff = np.abs(est[-1] - est[-2])
        ci = 3.0 * np.sqrt(se[-1] ** 2 + se[-2] ** 2)
        converged = bool(np.all(diff <= ci + 1e-12))
    return MollifiedSubgradient(est[-1].copy(), est, se, thetas, converged)


def _in_convex_hull(point, vertices, tol=1e-8):
    """Feasibility of ``point`` in conv(vertices) via weighted NNLS."""
    V = np.atleast_2d(vertices)
    w = 1e3
    A = np.vstack([V.T, w * np.ones((1, V.shape[0]))])
    b = np.concatenate([point, [w]])
    _, resid = nnls(A, b)
    return resid <= tol * (1.0 + np.linalg.norm(point)), resid


@dataclass(frozen=True)
class DirectionalLimit:
    value: np.ndarray
    sequence: np.ndarray
    epsilons: np.ndarray
    oscillation: float
    member: bool


def directional_limit(f, x, y, eps_schedule=None, tol=1e-9, membership_tol=1e-7,
                      dirs=32, rng=0):
    """``lim_{eps -> 0} subgrad(x + eps y)`` and whether it lies in the subdifferential at ``x``.

    The last half of the schedule must be Cauchy within ``tol``. Membership is
    a hull feasibility solve for PL functions and a sampled subgradient check
    otherwise.
    """
    f = as_oracle(f)
    x = as_vector(x, f.dim)
    y = as_vector(y, f.dim)
    eps = check_decreasing(DEFAULT_EPSILONS if eps_schedule is None else eps_schedule,
                           "eps_schedule")
    seq = f.subgrad(x + eps[:, None] * y[None])
    tail = seq[len(seq) // 2:]
    osc = float(np.max(np.linalg.norm(tail - tail[-1], axis=1))) if len(tail) > 1 else 0.0
    if osc > tol * (1.0 + np.linalg.norm(tail[-1])):
        raise LimitFailureError(
            f"subgradients along the ray oscillate by {osc:.3g}", oscillation=osc)
    value = seq[-1].copy()
    if f.pl is not None:
        member, _ = _in_convex_hull(value, subdifferential_pl(f.pl, x, membership_tol))
    else:
        member = subgradient_check(f, x, value, random_unit_vectors(dirs, f.dim, rng),
                                   tol=membership_tol).ok
    return DirectionalLimit(value, seq, eps, osc, bool(member))


# --------------------------------------------------------------------------
# metric of uniform convergence on compact sets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RhoDistance:
    rho: float
    per_k: tuple
    tail_bound: float


def _ball_grid(K, density, dim):
    ticks = np.linspace(-K, K, 2 * K * density + 1)
    mesh = np.meshgrid(*([ticks] * dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return pts, np.linalg.norm(pts, axis=-1)


def estimate_rho(f, g, K, grid_density=16):
    """Truncated ``rho(f, g) = sum_k 2^-k rho_k`` with sup over a grid in each ball."""
    if K < 1:
        raise InvalidInputError("K must be >= 1")
    f, g = as_oracle(f), as_oracle(g)
    if f.dim != g.dim:
        raise InvalidInputError("functions have different dimensions")
    pts, norms = _ball_grid(int(K), int(grid_density), f.dim)
    gap = np.abs(f.eval(pts) - g.eval(pts))
    per_k = []
    for k in range(1, int(K) + 1):
        s = float(np.max(gap[norms <= k + 1e-12]))
        per_k.append(s / (1.0 + s))
    rho = float(sum(2.0 ** -k * r for k, r in enumerate(per_k, start=1)))
    return RhoDistance(rho, tuple(per_k), 2.0 ** -int(K))


def empirical_lipschitz(f, r, n_samples=2000, rng=0):
    """Empirical Lipschitz constant of ``f`` on the ball of radius ``r``.

    Max of random pairwise slopes and of slopes along the selected
    subgradient direction, both kept inside the ball.
    """
    f = as_oracle(f)
    gen = as_generator(rng)
    u = random_unit_vectors(n_samples, f.dim, gen)
    rad = r * gen.uniform(0, 1, n_samples) ** (1.0 / f.dim)
    X = u * rad[:, None]
    Y = np.roll(X, 1, axis=0)
    dist = np.linalg.norm(X - Y, axis=1)
    ok = dist > 1e-12
    pair = np.abs(f.eval(X[ok]) - f.eval(Y[ok])) / dist[ok]
    G = f.subgrad(X)
    gn = np.linalg.norm(G, axis=1)
    h = 1e-3 * r
    dirn = np.where(gn[:, None] > 0, G / np.where(gn > 0, gn, 1.0)[:, None], u)
    Xs = X * np.minimum(1.0, (r - h) / np.maximum(rad, 1e-300))[:, None]
    along = np.abs(f.eval(Xs + h * dirn) - f.eval(Xs)) / h
    return float(max(pair.max(initial=0.0), along.max(initial=0.0)))
