"""Named experiments behind the command line, and the artifact-writing driver."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, pieces_as_dicts
from .convex_core import (ConvexOracle, PLConvex, abs_oracle, affine_oracle,
                          directional_limit, empirical_lipschitz, euclidean_norm_oracle,
                          mollified_subgradient, quadratic_oracle, random_unit_vectors,
                          subgradient_check)
from .decomposition_lab import (condition_estimates, decompose_pl,
                                epsilon_convergence_experiment, residual_flatness_check,
                                smoothing_convergence_experiment,
                                two_piece_half_local_time, verify_decomposition)
from .exceptions import InsufficientDataError, InvalidInputError
from .io import ArtifactWriter
from .ito_engine import (MIN_PATHS, ito_integral, local_time_occupation, local_time_tanaka,
                         martingale_test)
from .path_sim import ProcessRecipe, TimeGrid, build_semimartingale, perturb, simulate_bm
from .rng import RandomStreams


@dataclass
class ExperimentResult:
    verdicts: dict
    curves: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    paths: object = None

    @property
    def passed(self):
        return all(self.verdicts.values())


@dataclass(frozen=True)
class RunManifest:
    config: dict
    version: str
    wall_time: float
    files: dict
    passed: bool

    def to_dict(self):
        return {"config": self.config, "version": self.version, "wall_time": self.wall_time,
                "files": self.files, "passed": self.passed}


def build_function(cfg):
    """The convex function named by the config."""
    if cfg.function == "abs":
        return abs_oracle()
    if cfg.function == "pl":
        return ConvexOracle.from_pl(
            PLConvex.from_dict({"dim": cfg.dim, "pieces": pieces_as_dicts(cfg)}), tol=1e-12)
    if cfg.function == "affine":
        p = pieces_as_dicts(cfg)
        if len(p) != 1:
            raise InvalidInputError("function 'affine' needs exactly one piece")
        return affine_oracle(p[0]["alpha"], p[0]["beta"])
    if cfg.function == "euclidean_norm":
        return euclidean_norm_oracle(cfg.dim)
    return quadratic_oracle(np.array(cfg.matrix, dtype=float) if cfg.matrix else np.eye(cfg.dim))


def build_recipe(cfg, dim):
    x0 = cfg.x0 if len(cfg.x0) == dim else (cfg.x0[0],) * dim
    drift = cfg.drift_vector if len(cfg.drift_vector) == dim else (cfg.drift_vector[0],) * dim
    return ProcessRecipe(martingale=cfg.martingale, scale=cfg.scale, sigma=cfg.sigma,
                         drift=cfg.drift, drift_vector=tuple(drift), dim=dim, x0=tuple(x0))


def _need_paths(cfg):
    if cfg.n_paths < MIN_PATHS:
        raise InsufficientDataError(
            f"{cfg.experiment} needs n_paths >= {MIN_PATHS}, got {cfg.n_paths}")


def _paths(cfg, dim, streams):
    grid = TimeGrid.uniform(cfg.n_steps, cfg.horizon)
    return build_semimartingale(build_recipe(cfg, dim), grid, streams.child("process"),
                                cfg.n_paths, n_jobs=cfg.n_jobs)


def _mtest_records(N):
    rep = martingale_test(N)
    return rep, rep.to_records(), {"max_abs_z": rep.max_abs_z, "lag1_corr": rep.lag1_corr}


def tanaka_baseline(cfg, streams):
    """Tanaka local time at 0 against an independent Monte Carlo of ``E|X_T| - |X_0|``."""
    _need_paths(cfg)
    x = _paths(cfg, 1, streams)
    L = local_time_tanaka(x, 0.0).terminal
    n = L.size
    z = streams.child("oracle").generator().standard_normal(n)
    x0 = float(x.x0[0])
    oracle = np.abs(x0 + cfg.scale * np.sqrt(cfg.horizon) * z) - abs(x0)
    se_l, se_o = L.std(ddof=1) / np.sqrt(n), oracle.std(ddof=1) / np.sqrt(n)
    combined = float(np.hypot(se_l, se_o))
    diff = float(abs(L.mean() - oracle.mean()))
    N = ito_integral(np.where(x.x > 0, 1.0, -1.0), x)
    rep, records, mt = _mtest_records(N)
    summary = {"local_time_mean": float(L.mean()), "local_time_stderr": float(se_l),
               "oracle_mean": float(oracle.mean()), "oracle_stderr": float(se_o),
               "difference": diff, "combined_stderr": combined,
               "occupation_mean": float(local_time_occupation(x, 0.0).mean()), **mt}
    if cfg.martingale != "bm" or cfg.drift != "zero":
        summary["note"] = "the oracle assumes a driftless Brownian martingale part"
    return ExperimentResult({"local_time_matches_oracle": diff <= 3.0 * combined,
                             "sgn_integral_martingale": rep.verdict},
                            records=records, summary=summary,
                            paths=x[:cfg.dump_paths] if cfg.dump_paths else None)


def pl_decomposition(cfg, streams):
    """Exact decomposition of a PL function of simulated paths."""
    f = build_function(cfg)
    if f.pl is None:
        raise InvalidInputError("pl_decomposition needs a piecewise-linear function")
    pl = f.pl
    x = _paths(cfg, pl.dim, streams)
    res = decompose_pl(pl, x, tie_break="min")
    fx = pl.piece_values(x.x).max(axis=-1)
    identity_gap = float(np.max(np.abs(fx - fx[:, :1] - res.n.values - res.s)))
    flat = residual_flatness_check(res, pl, x, cfg.margin)
    verdicts = {"identity": identity_gap <= cfg.identity_tol, "flatness": flat.flat_ok,
                "monotone": flat.monotone_ok}
    summary = {"identity_gap": identity_gap, "margin": flat.margin,
               "qualifying_steps": flat.qualifying_steps,
               "max_flat_increment": flat.max_flat_increment, "max_decrease": flat.max_decrease,
               "monotone_tol": flat.monotone_tol, "s_terminal_mean": float(res.s[:, -1].mean())}
    if pl.k == 2:
        # l1 - l2 pairs with the largest-index tie break, l2 - l1 with the smallest
        res_max = decompose_pl(pl, x, tie_break="max")
        gap_12 = float(np.max(np.abs(res_max.local_time_part
                                     - two_piece_half_local_time(pl, x, "l1-l2"))))
        gap_21 = float(np.max(np.abs(res.local_time_part
                                     - two_piece_half_local_time(pl, x, "l2-l1"))))
        verdicts["tanaka_match"] = max(gap_12, gap_21) <= cfg.identity_tol
        summary.update(tanaka_gap_l1_minus_l2=gap_12, tanaka_gap_l2_minus_l1=gap_21)
    records = []
    if cfg.n_paths >= MIN_PATHS:
        rep, records, mt = _mtest_records(res.n)
        verdicts["martingale"] = rep.verdict
        summary.update(mt)
    return ExperimentResult(verdicts, records=records, summary=summary,
                            paths=x[:cfg.dump_paths] if cfg.dump_paths else None)


def _curve_verdicts(curve, prefix=""):
    if len(curve.params) < 2:
        return {}
    return {f"{prefix}monotone": curve.monotone()}


def smoothing(cfg, streams):
    """Moreau-smoothed integrands on a perturbed path, one point per level ``n``."""
    _need_paths(cfg)
    f = build_function(cfg)
    x = _paths(cfg, f.dim, streams)
    xt = perturb(x, cfg.epsilon, streams.child("perturb"))
    curve = smoothing_convergence_experiment(f, xt, cfg.n_levels, cfg.r,
                                             rng=streams.child("bootstrap"))
    verdicts = _curve_verdicts(curve)
    if len(curve.params) > 1:
        verdicts["final_below_first_over_5"] = bool(curve.errors[-1] <= curve.errors[0] / 5)
    return ExperimentResult(verdicts, curves={"smoothing": curve},
                            summary={"epsilon": cfg.epsilon, "ratio": curve.ratio()})


def _bounds(f, cfg, streams):
    K = empirical_lipschitz(f, cfg.r_prime, rng=streams.child("lipschitz").generator())
    pts = random_unit_vectors(2000, f.dim, streams.child("bound_points").generator()) * cfg.r_prime
    C = float(np.max(np.linalg.norm(f.subgrad(pts), axis=-1)))
    return {"C_rprime": C, "K_rprime": K}


def epsilon_limit(cfg, streams):
    """Distance between stopped integrals for ``X + eps B`` and ``X`` as eps shrinks."""
    _need_paths(cfg)
    f = build_function(cfg)
    x = _paths(cfg, f.dim, streams)
    curve = epsilon_convergence_experiment(f, x, cfg.eps_schedule, cfg.r, cfg.r_prime,
                                           rng=streams.child("perturb"))
    verdicts = _curve_verdicts(curve)
    verdicts["final_within_tol"] = bool(curve.errors[-1] <= cfg.final_tol)
    return ExperimentResult(verdicts, curves={"epsilon": curve},
                            summary={"final_error": float(curve.errors[-1]),
                                     "final_tol": cfg.final_tol},
                            bounds=_bounds(f, cfg, streams))


def conditions(cfg, streams):
    """e1, e2, e3 along the epsilon schedule with one common perturbation."""
    _need_paths(cfg)
    f = build_function(cfg)
    x = _paths(cfg, f.dim, streams)
    b = simulate_bm(x.grid, x.dim, streams.child("perturb").child("perturbation"), x.n_paths,
                    n_jobs=cfg.n_jobs)
    K = empirical_lipschitz(f, cfg.r_prime, rng=streams.child("lipschitz").generator())
    reps = [condition_estimates(f, x, e, cfg.r, cfg.r_prime, b=b, lipschitz=K)
            for e in cfg.eps_schedule]
    e1_ok = all(r.e1 <= r.e1_bound * (1 + 1e-12) + 1e-12 for r in reps)
    e2 = np.array([r.e2 for r in reps])
    e3 = np.array([r.e3 for r in reps])
    verdicts = {"e1_bound": e1_ok,
                "e2_bounded": bool(e2.max() < 2 * e2.min()) if e2.min() > 0 else True,
                "e3_bounded": bool(e3.max() < 2 * e3.min()) if e3.min() > 0 else True}
    rows = [(r.epsilon, r.e1, r.e1_bound, r.e2, r.e3, r.sup_b) for r in reps]
    return ExperimentResult(
        verdicts, tables={"conditions.csv": (("epsilon", "e1", "e1_bound", "e2", "e3", "sup_b"),
                                             rows)},
        bounds={"C_rprime": max(r.C_rprime for r in reps), "K_rprime": K})


def mollified_selection(cfg, streams):
    """Refinement test of the decomposition under a chosen selection."""
    _need_paths(cfg)
    f = build_function(cfg)
    grid = TimeGrid.uniform(2 ** max(cfg.levels), cfg.horizon)
    x = build_semimartingale(build_recipe(cfg, f.dim), grid, streams.child("process"),
                             cfg.n_paths, n_jobs=cfg.n_jobs)
    rep = verify_decomposition(f, selection=cfg.selection, levels=cfg.levels, x=x)
    verdicts = {"martingale": rep.martingale.verdict, "finite_variation": rep.finite_variation}
    summary = {"tv_means": list(rep.tv_means), "growth": list(rep.growth),
               "s_terminal_mean": rep.s_terminal_mean, "max_abs_z": rep.martingale.max_abs_z,
               "lag1_corr": rep.martingale.lag1_corr}
    if cfg.function == "abs":
        Ns = [ito_integral(abs_oracle(c).subgrad(x.x), x).terminal for c in (-1.0, 0.0, 1.0)]
        clean = ~np.any(x.x[:, :-1, 0] == 0.0, axis=1)
        gap = float(max(np.max(np.abs(Ns[0] - N)[clean], initial=0.0) for N in Ns[1:]))
        verdicts["selection_independent"] = gap <= cfg.identity_tol
        summary.update(selection_gap=gap, zero_hitting_paths=int((~clean).sum()))
    return ExperimentResult(verdicts, records=rep.martingale.to_records(), summary=summary)


def directional_limit_experiment(cfg, streams):
    """Both canonical selections must satisfy the subgradient inequality."""
    f = build_function(cfg)
    gen = streams.child("points").generator()
    pts = gen.uniform(-cfg.r, cfg.r, (cfg.n_points, f.dim))
    pts[0] = 0.0
    dirs = random_unit_vectors(cfg.n_points, f.dim, gen)
    probe = random_unit_vectors(64, f.dim, streams.child("probe").generator())
    bad_lim = bad_mol = 0
    worst = 0.0
    for i, (p, y) in enumerate(zip(pts, dirs)):
        lim = directional_limit(f, p, y)
        mol = mollified_subgradient(f, p, rng=streams.child("mollify").path_generator(i))
        for g, counter in ((lim.value, "lim"), (mol.value, "mol")):
            chk = subgradient_check(f, p, g, probe, tol=1e-6)
            worst = min(worst, chk.worst_margin)
            if not chk.ok:
                if counter == "lim":
                    bad_lim += 1
                else:
                    bad_mol += 1
    return ExperimentResult({"directional_limit_subgradient": bad_lim == 0,
                             "mollified_subgradient": bad_mol == 0},
                            summary={"points": cfg.n_points, "violations_limit": bad_lim,
                                     "violations_mollified": bad_mol, "worst_margin": worst})


EXPERIMENT_FUNCS = {
    "tanaka_baseline": tanaka_baseline,
    "pl_decomposition": pl_decomposition,
    "smoothing": smoothing,
    "epsilon_limit": epsilon_limit,
    "conditions": conditions,
    "mollified_selection": mollified_selection,
    "directional_limit": directional_limit_experiment,
}


def execute(cfg):
    """Run the experiment in memory and return its result."""
    return EXPERIMENT_FUNCS[cfg.experiment](cfg, RandomStreams(cfg.seed))


def run(cfg: ExperimentConfig, out_dir=None):
    """Run the configured experiment, write its artifacts and return the manifest.

    Artifacts: ``report.json``, ``curves.csv`` (plus ``curves_<name>.csv`` for
    extra curves), ``records.csv``, experiment tables, ``paths.csv`` when
    ``dump_paths > 0``, and ``manifest.json`` listing sha256 digests.
    """
    start = time.perf_counter()
    result = execute(cfg)
    writer = ArtifactWriter(Path(out_dir or cfg.out_dir), cfg.seed, cfg.digest())
    for i, (label, curve) in enumerate(result.curves.items()):
        writer.write_curve(curve, "curves.csv" if i == 0 else f"curves_{label}.csv")
    if result.records:
        writer.write_records(result.records)
    for name, (header, rows) in result.tables.items():
        writer.write_csv(name, header, rows)
    if result.paths is not None:
        writer.write_paths(result.paths)
    writer.write_json("report.json", {
        "experiment": cfg.experiment,
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("out_dir", "n_jobs")},
        "verdicts": result.verdicts,
        "passed": result.passed,
        "curves": {k: {"param": c.params, "error": c.errors, "stderr": c.stderrs}
                   for k, c in result.curves.items()},
        "records": result.records,
        "summary": result.summary,
        "bounds": result.bounds,
        "version": __version__,
    })
    manifest = RunManifest(cfg.to_dict(), __version__, time.perf_counter() - start,
                           writer.digests(), result.passed)
    (writer.out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True, default=list) + "\n")
    return manifest
