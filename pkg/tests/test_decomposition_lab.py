import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convexito import (PLConvex, ProcessRecipe, TimeGrid, abs_oracle, affine_oracle,
                       build_semimartingale, condition_estimates, decompose_pl,
                       epsilon_convergence_experiment, ito_integral, local_time_tanaka,
                       perturb, quadratic_oracle, residual_flatness_check, simulate_bm,
                       smoothing_convergence_experiment, verify_decomposition)
from convexito.decomposition_lab import (ConvergenceCurve, default_margin,
                                         epsilon_distance_expanded, selection_map,
                                         two_piece_half_local_time)
from convexito.exceptions import InsufficientDataError, InvalidInputError
from convexito.rng import RandomStreams

from conftest import random_pl

SQRT_2_OVER_PI = 0.7978845608028654


def identity_gap(f, x, res):
    fx = f.piece_values(x.x).max(axis=-1)
    return np.max(np.abs(fx - fx[:, :1] - res.n.values - res.s))


class TestDecomposePL:
    def test_single_piece(self, bm_paths):
        f = PLConvex([(0.5, 2.0)])
        res = decompose_pl(f, bm_paths)
        np.testing.assert_allclose(res.s, 0.0, atol=1e-12)
        np.testing.assert_allclose(res.n.values, 2.0 * bm_paths.m[:, :, 0], atol=1e-12)

    def test_abs_is_tanaka(self, bm_paths, abs_pl):
        res = decompose_pl(abs_pl, bm_paths)
        np.testing.assert_allclose(res.s, local_time_tanaka(bm_paths, 0.0).values, atol=1e-12)
        sgn_int = ito_integral(np.where(bm_paths.x > 0, 1.0, -1.0), bm_paths)
        np.testing.assert_allclose(res.n.values, sgn_int.values, atol=1e-12)
        s1 = res.s[:, -1]
        assert abs(s1.mean() - SQRT_2_OVER_PI) <= 3 * s1.std(ddof=1) / np.sqrt(s1.size)

    def test_starts_at_zero(self, bm_paths, abs_pl):
        res = decompose_pl(abs_pl, bm_paths)
        assert np.all(res.n.values[:, 0] == 0) and np.all(res.s[:, 0] == 0)

    def test_two_piece_proof_identity(self, bm_paths, abs_pl):
        # BM from 0 sits exactly on the kink at t=0: the orientation fixes the tie rule
        res_max = decompose_pl(abs_pl, bm_paths, tie_break="max")
        res_min = decompose_pl(abs_pl, bm_paths, tie_break="min")
        np.testing.assert_allclose(res_max.local_time_part,
                                   two_piece_half_local_time(abs_pl, bm_paths, "l1-l2"),
                                   atol=1e-12, rtol=0)
        np.testing.assert_allclose(res_min.local_time_part,
                                   two_piece_half_local_time(abs_pl, bm_paths, "l2-l1"),
                                   atol=1e-12, rtol=0)

    def test_tie_rule_matters_at_exact_kink(self, bm_paths, abs_pl):
        res_min = decompose_pl(abs_pl, bm_paths, tie_break="min")
        half = two_piece_half_local_time(abs_pl, bm_paths, "l1-l2")
        assert np.max(np.abs(res_min.local_time_part - half)) > 1e-6

    def test_drift_goes_to_fv_part(self, grid_1024, abs_pl):
        x = build_semimartingale(ProcessRecipe(drift="linear", drift_vector=(0.8,)),
                                 grid_1024, rng=3, n_paths=50)
        res = decompose_pl(abs_pl, x)
        assert identity_gap(abs_pl, x, res) <= 1e-12
        np.testing.assert_allclose(res.local_time_part, local_time_tanaka(x, 0.0).values,
                                   atol=1e-12)

    @settings(max_examples=25)
    @given(st.integers(0, 2 ** 32), st.integers(1, 3), st.integers(1, 5))
    def test_identity_random(self, seed, d, k):
        rng = np.random.default_rng(seed)
        f = random_pl(rng, k, d)
        x = build_semimartingale(ProcessRecipe(dim=d, x0=tuple(rng.normal(size=d)),
                                               drift="linear", drift_vector=(0.3,) * d),
                                 TimeGrid.uniform(256), rng=seed, n_paths=8)
        assert identity_gap(f, x, decompose_pl(f, x)) <= 1e-12

    def test_dimension_mismatch(self, bm_paths):
        with pytest.raises(InvalidInputError):
            decompose_pl(PLConvex([(0.0, (1.0, 1.0))]), bm_paths)

    def test_needs_pl(self, bm_paths):
        with pytest.raises(InvalidInputError):
            decompose_pl(quadratic_oracle(1.0), bm_paths)


class TestFlatness:
    def test_single_piece_flat(self, bm_paths):
        f = PLConvex([(0.0, 1.0)])
        rep = residual_flatness_check(decompose_pl(f, bm_paths), f, bm_paths, margin=0.1)
        assert rep.ok and rep.qualifying_steps == bm_paths.n_paths * 1024

    def test_away_from_kink(self, grid_1024, abs_pl):
        x = build_semimartingale(ProcessRecipe(scale=0.1, x0=(5.0,)), grid_1024, rng=4,
                                 n_paths=20)
        res = decompose_pl(abs_pl, x)
        np.testing.assert_allclose(np.diff(res.s, axis=1), 0.0, atol=1e-12)
        assert residual_flatness_check(res, abs_pl, x, margin=1.0).ok

    def test_bm_default_margin(self, bm_paths, abs_pl):
        assert default_margin(abs_pl, bm_paths.grid) == pytest.approx(8 * np.sqrt(1 / 1024))
        rep = residual_flatness_check(decompose_pl(abs_pl, bm_paths), abs_pl, bm_paths)
        assert rep.ok and rep.flat_ok and rep.monotone_ok

    def test_random_four_pieces(self, grid_1024):
        f = random_pl(np.random.default_rng(5), 4, 1)
        x = build_semimartingale(ProcessRecipe(), grid_1024, rng=6, n_paths=300)
        assert residual_flatness_check(decompose_pl(f, x), f, x).ok

    def test_detects_bad_residual(self, bm_paths, abs_pl):
        res = decompose_pl(abs_pl, bm_paths)
        fake = type(res)(res.n, res.s + bm_paths.m[:, :, 0], res.fv, "f", "fake")
        assert not residual_flatness_check(fake, abs_pl, bm_paths).flat_ok

    def test_margin_positive(self, bm_paths, abs_pl):
        with pytest.raises(InvalidInputError):
            residual_flatness_check(decompose_pl(abs_pl, bm_paths), abs_pl, bm_paths, margin=0)


class TestSelections:
    def test_left_derivative(self):
        sel = selection_map(abs_oracle(), "left_derivative_1d")
        np.testing.assert_array_equal(sel(np.array([[-1.0], [0.0], [2.0]]))[:, 0], [-1, -1, 1])

    def test_left_derivative_generic_oracle(self):
        sel = selection_map(abs_oracle(at_zero=0.0), "left_derivative_1d")
        np.testing.assert_allclose(sel(np.array([[0.0], [2.0]]))[:, 0], [-1.0, 1.0], atol=1e-6)

    def test_left_derivative_needs_scalar(self):
        with pytest.raises(InvalidInputError):
            selection_map(PLConvex([(0.0, (1.0, 0.0))]), "left_derivative_1d")

    def test_mollified_only_touches_kinks(self):
        sel = selection_map(abs_oracle(), "mollified", samples=4000)
        out = sel(np.array([[-0.5], [0.0], [0.5]]))[:, 0]
        assert out[0] == -1.0 and out[2] == 1.0 and abs(out[1]) < 0.1

    def test_min_index(self, abs_pl):
        sel = selection_map(abs_pl, "min_index_pl")
        assert sel(np.array([[0.0]]))[0, 0] == -1.0

    def test_unknown(self):
        with pytest.raises(InvalidInputError):
            selection_map(abs_oracle(), "median")

    def test_selection_independence(self, bm_paths_offset):
        x = bm_paths_offset
        assert not np.any(x.x == 0.0)
        N = [ito_integral(abs_oracle(c).subgrad(x.x), x).terminal for c in (-1.0, 0.0, 1.0)]
        assert np.max(np.abs(N[0] - N[1])) <= 1e-12 and np.max(np.abs(N[0] - N[2])) <= 1e-12


class TestSmoothingCurve:
    def test_quadratic_envelope_factor(self, bm_paths):
        c = 3.0
        p = perturb(bm_paths, 0.25, rng=1)
        curve = smoothing_convergence_experiment(quadratic_oracle(c), p, [1, 2, 8, 64], r=4)
        levels = np.array([1, 2, 8, 64])
        # the gradient gap is c x * c / (n + c), so errors scale exactly by that factor
        np.testing.assert_allclose(curve.errors / curve.errors[0], (1 + c) / (levels + c),
                                   rtol=1e-10)

    def test_abs_decreasing(self, bm_paths):
        p = perturb(bm_paths, 0.25, rng=2)
        curve = smoothing_convergence_experiment(abs_oracle(), p, [1, 2, 4, 8, 16, 32, 64], r=4)
        assert curve.kind == "smoothing"
        assert curve.monotone() and curve.errors[-1] <= curve.errors[0] / 5
        assert np.all(curve.stderrs > 0)

    def test_single_level(self, bm_paths):
        curve = smoothing_convergence_experiment(abs_oracle(), perturb(bm_paths, 0.25), [4], 4)
        assert len(curve.params) == 1 and curve.monotone()

    def test_levels_increasing(self, bm_paths):
        with pytest.raises(InvalidInputError):
            smoothing_convergence_experiment(abs_oracle(), perturb(bm_paths, 0.25), [4, 2], 4)


class TestConditions:
    def test_zero_epsilon(self, bm_paths):
        rep = condition_estimates(abs_oracle(), bm_paths, 0.0, 4, 5)
        assert rep.e1 == 0.0

    def test_affine_exact(self, grid_1024):
        x = build_semimartingale(ProcessRecipe(drift="linear", drift_vector=(0.5,)), grid_1024,
                                 rng=7, n_paths=200)
        b = simulate_bm(grid_1024, 1, rng=8, n_paths=200)
        f = affine_oracle(0.2, -1.5)
        for eps in (0.5, 0.1):
            rep = condition_estimates(f, x, eps, 50, 60, b=b)
            assert rep.e1 == pytest.approx(1.5 * eps * np.abs(b).max(axis=1).mean(), rel=1e-12)
            assert rep.e1 == pytest.approx(rep.e1_bound, rel=1e-9)
            assert rep.e3 == pytest.approx(1.5 * 0.5, rel=1e-9)

    def test_abs_bound(self, bm_paths):
        # E sup_{t<=1}|B_t| = sqrt(pi/2) = 1.2533
        rep = condition_estimates(abs_oracle(), bm_paths, 0.1, 4, 5, rng=3)
        assert rep.e1 <= 0.1 * rep.K_rprime * rep.sup_b + 1e-12
        assert rep.sup_b == pytest.approx(np.sqrt(np.pi / 2), abs=0.1)
        assert rep.C_rprime == 1.0

    def test_bounded_along_schedule(self, bm_paths):
        b = simulate_bm(bm_paths.grid, 1, rng=9, n_paths=bm_paths.n_paths)
        reps = [condition_estimates(abs_oracle(), bm_paths, e, 4, 5, b=b)
                for e in (0.5, 0.25, 0.125, 0.0625)]
        for field in ("e2", "e3"):
            vals = np.array([getattr(r, field) for r in reps])
            assert vals.max() <= 2 * vals[0] and vals.min() >= 0

    def test_radii_order(self, bm_paths):
        with pytest.raises(InvalidInputError):
            condition_estimates(abs_oracle(), bm_paths, 0.1, 5, 4)


class TestEpsilonCurve:
    def test_affine_linear_in_eps(self, bm_paths):
        streams = RandomStreams(4)
        eps = [0.5, 0.25, 0.125]
        curve = epsilon_convergence_experiment(affine_oracle(0.0, 2.0), bm_paths, eps, 50, 60,
                                               rng=streams)
        b = simulate_bm(bm_paths.grid, 1, streams.child("perturbation"), bm_paths.n_paths)
        qv_b = np.sum(np.diff(b, axis=1) ** 2, axis=(1, 2)).mean()
        np.testing.assert_allclose(curve.errors, 2.0 * np.array(eps) * np.sqrt(qv_b), rtol=1e-10)

    def test_abs_decreasing(self, bm_paths):
        curve = epsilon_convergence_experiment(abs_oracle(), bm_paths,
                                               [2.0 ** -k for k in range(1, 9)], 4, 5)
        assert curve.kind == "perturbation"
        assert curve.monotone() and curve.errors[-1] <= curve.errors[0] / 5

    def test_expanded_square(self, bm_paths):
        b = simulate_bm(bm_paths.grid, 1, rng=5, n_paths=bm_paths.n_paths)
        curve = epsilon_convergence_experiment(abs_oracle(), bm_paths, [0.1], 4, 5, b=b)
        expanded = epsilon_distance_expanded(abs_oracle(), bm_paths, 0.1, 4, 5, b)
        assert np.sqrt(expanded.mean()) == pytest.approx(curve.errors[0], rel=1e-9)

    def test_single_point(self, bm_paths):
        curve = epsilon_convergence_experiment(abs_oracle(), bm_paths, [0.1], 4, 5)
        assert curve.params.tolist() == [0.1]

    def test_schedule_decreasing(self, bm_paths):
        with pytest.raises(InvalidInputError):
            epsilon_convergence_experiment(abs_oracle(), bm_paths, [0.1, 0.2], 4, 5)


class TestCurve:
    def test_monotone_rule(self):
        c = ConvergenceCurve(np.array([1.0, 2.0]), np.array([1.0, 1.15]), np.array([0.1, 0.1]),
                             "smoothing")
        assert c.monotone() and not c.monotone(k=1.0)
        assert c.rows() == [(1.0, 1.0, 0.1), (2.0, 1.15, 0.1)]


class TestVerify:
    def test_affine(self):
        rep = verify_decomposition(affine_oracle(1.0, 2.0), n_paths=200, levels=(8, 10))
        assert rep.verdict and rep.tv_means == (0.0, 0.0)

    def test_abs_left_derivative(self):
        rep = verify_decomposition(abs_oracle(), selection="left_derivative_1d", n_paths=400,
                                   rng=5)
        assert rep.verdict and rep.finite_variation
        assert rep.s_terminal_mean == pytest.approx(SQRT_2_OVER_PI, abs=0.1)

    def test_zero_integrand_negative_control(self):
        def zero(x):
            return np.zeros_like(x)
        rep = verify_decomposition(abs_oracle(), selection=zero, n_paths=400, rng=5)
        assert rep.martingale.verdict
        assert not rep.finite_variation and not rep.verdict
        assert all(g == pytest.approx(2.0, rel=0.1) for g in rep.growth)

    def test_insufficient_paths(self):
        with pytest.raises(InsufficientDataError):
            verify_decomposition(abs_oracle(), n_paths=50)
