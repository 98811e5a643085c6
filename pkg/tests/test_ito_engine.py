import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexito import (ProcessRecipe, SemimartingalePath, TimeGrid, build_semimartingale, hp_norm_estimate,
                       ito_integral, local_time_occupation, local_time_tanaka, martingale_test,
                       perturb, quadratic_covariation, quadratic_variation, simulate_bm,
                       total_variation)
from convexito.exceptions import (InsufficientDataError, InvalidInputError,
                                  UnsupportedDimensionError)
from convexito.ito_engine import IntegralPath, local_time_tanaka_direct, sgn

SQRT_2_OVER_PI = 0.7978845608028654


@pytest.fixture(scope="module")
def bm_1000():
    return build_semimartingale(ProcessRecipe(), TimeGrid.uniform(4096), rng=41, n_paths=1000)


def deterministic(values, grid):
    v = np.asarray(values, dtype=float).reshape(1, -1, 1)
    return SemimartingalePath(grid, v[0, 0, 0], np.zeros_like(v), v - v[:, :1])


class TestItoIntegral:
    def test_unit_integrand_telescopes(self, bm_paths):
        B2 = np.concatenate([bm_paths.m, 2 * bm_paths.m], axis=2)
        out = ito_integral(np.ones_like(B2), B2)
        np.testing.assert_allclose(out.values, 3 * bm_paths.m[:, :, 0], atol=1e-12)

    def test_zero_integrand(self, bm_paths):
        out = ito_integral(np.zeros_like(bm_paths.m), bm_paths)
        assert np.all(out.values == 0)

    def test_b_db(self):
        x = build_semimartingale(ProcessRecipe(), TimeGrid.uniform(1024), rng=42, n_paths=1000)
        out = ito_integral(x.m, x)
        B1 = x.m[:, -1, 0]
        rms = np.sqrt(np.mean((out.terminal - (B1 ** 2 - 1) / 2) ** 2))
        assert rms <= 3 * np.sqrt(x.grid.dt[0] / 2)

    def test_left_point_only(self, bm_paths):
        h = np.array(bm_paths.m)
        base = ito_integral(h, bm_paths).values
        h[:, -1] = 99.0
        assert np.array_equal(ito_integral(h, bm_paths).values, base)
        h[:, 500] = 7.0
        changed = ito_integral(h, bm_paths).values
        assert np.array_equal(changed[:, :501], base[:, :501])

    def test_shape_mismatch(self, bm_paths):
        with pytest.raises(InvalidInputError):
            ito_integral(np.zeros((3, 1025, 1)), bm_paths)

    def test_grid_mismatch(self, bm_paths):
        with pytest.raises(InvalidInputError):
            ito_integral(bm_paths.m, bm_paths.m, grid=TimeGrid.uniform(10))

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
    def test_linearity(self, a, b, seed):
        g = TimeGrid.uniform(64)
        m = simulate_bm(g, 2, rng=seed, n_paths=4)
        h1, h2 = np.sin(m), np.cos(3 * m)
        lhs = ito_integral(a * h1 + b * h2, m).values
        rhs = a * ito_integral(h1, m).values + b * ito_integral(h2, m).values
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-13)

    def test_isometry(self, bm_1000):
        t = bm_1000.grid.times
        h = np.broadcast_to((1 + np.sin(6 * t))[None, :, None], bm_1000.m.shape)
        term = ito_integral(h, bm_1000).terminal
        expected = np.sum(h[0, :-1, 0] ** 2 * bm_1000.grid.dt)
        rng = np.random.default_rng(0)
        boot = [term[rng.integers(0, term.size, term.size)].var() for _ in range(200)]
        assert abs(term.var() - expected) <= 3 * np.std(boot)

    def test_accepts_perturbed_path(self, bm_paths):
        p = perturb(bm_paths, 0.5, rng=3)
        out = ito_integral(np.ones_like(p.result.m), p)
        np.testing.assert_allclose(out.values, p.result.m[:, :, 0], atol=1e-12)


class TestVariation:
    def test_qv_of_bm(self, bm_1000):
        # P(|QV - 1| <= 0.07) = 0.9985 at dt = 2^-12 (normal approximation, variance 2 dt)
        qv = quadratic_variation(bm_1000).terminal
        assert np.mean(np.abs(qv - 1) <= 0.07) >= 0.99

    def test_qv_of_smooth_path(self):
        g = TimeGrid.uniform(1000)
        x = deterministic(g.times, g)
        assert quadratic_variation(x.a).terminal[0] == pytest.approx(1e-3, rel=1e-9)

    def test_qv_scaling(self, bm_1000):
        qv = quadratic_variation(0.1 * bm_1000.m).terminal
        assert qv.mean() == pytest.approx(0.01, rel=0.01)

    def test_qv_nondecreasing_and_additive(self, bm_paths):
        qv = quadratic_variation(bm_paths).values
        assert np.all(np.diff(qv, axis=1) >= 0)
        fine = quadratic_variation(bm_paths.m[:, :513]).terminal
        rest = quadratic_variation(bm_paths.m[:, 512:]).terminal
        np.testing.assert_allclose(fine + rest, qv[:, -1], rtol=1e-12)

    def test_covariation_symmetry_and_cauchy_schwarz(self, bm_paths):
        other = simulate_bm(bm_paths.grid, 1, rng=77, n_paths=bm_paths.n_paths)
        n = 0.6 * bm_paths.m + 0.8 * other
        c1 = quadratic_covariation(bm_paths.m, n)
        c2 = quadratic_covariation(n, bm_paths.m)
        assert np.array_equal(c1, c2)
        bound = np.sqrt(quadratic_variation(bm_paths.m).terminal
                        * quadratic_variation(n).terminal)
        assert np.all(np.abs(c1[:, -1]) <= bound * (1 + 1e-12))

    def test_total_variation_examples(self):
        g = TimeGrid.uniform(1000)
        assert total_variation(g.times[None, :, None])[0] == pytest.approx(1.0, abs=1e-12)
        assert total_variation(np.abs(g.times - 0.5)[None, :, None])[0] == pytest.approx(
            1.0, abs=1e-12)

    def test_total_variation_of_bm_diverges(self, bm_1000):
        N = bm_1000.grid.n_steps
        tv = total_variation(bm_1000.m)
        expected = SQRT_2_OVER_PI * N * np.sqrt(1 / N)
        assert tv.mean() == pytest.approx(expected, rel=0.01)
        coarse = total_variation(bm_1000.m[:, ::16]).mean()
        assert tv.mean() / coarse == pytest.approx(4.0, rel=0.03)


class TestLocalTime:
    def test_sgn_convention(self):
        np.testing.assert_array_equal(sgn(np.array([-1.0, 0.0, 2.0])), [-1.0, -1.0, 1.0])

    def test_bounded_away(self, bm_paths):
        far = local_time_tanaka(bm_paths, 10.0)
        assert np.all(far.values == 0.0)

    def test_mean_matches_oracle(self):
        L = []
        for start in range(0, 10_000, 2500):
            x = build_semimartingale(ProcessRecipe(), TimeGrid.uniform(4096), rng=43,
                                     n_paths=2500, start=start)
            L.append(local_time_tanaka(x, 0.0).terminal)
        assert np.concatenate(L).mean() == pytest.approx(SQRT_2_OVER_PI, abs=0.02)

    def test_deterministic_crossing(self):
        g = TimeGrid.uniform(1000)
        L = local_time_tanaka(deterministic(g.times - 0.5, g), 0.0).values
        # the single crossing step contributes twice its overshoot
        assert 0 <= L[0, -1] <= 2 * g.dt[0] + 1e-15

    def test_matches_literal_formula(self, bm_paths):
        a = local_time_tanaka(bm_paths, 0.1).values
        b = local_time_tanaka_direct(bm_paths, 0.1).values
        np.testing.assert_allclose(a, b, atol=1e-12)

    @pytest.mark.parametrize("level", [0.0, 0.3, -0.5])
    def test_nondecreasing_and_flat(self, bm_paths, level):
        L = local_time_tanaka(bm_paths, level)
        assert L.method == "tanaka" and L.level == level
        dL = np.diff(L.values, axis=1)
        assert np.all(dL >= -1e-9)
        dx = np.abs(np.diff(bm_paths.x[:, :, 0], axis=1)).max()
        far = np.abs(bm_paths.x[:, :, 0] - level) > dx
        assert np.all(dL[far[:, :-1] & far[:, 1:]] == 0.0)

    def test_needs_scalar_path(self):
        x = build_semimartingale(ProcessRecipe(dim=2, x0=(0.0, 0.0)), TimeGrid.uniform(8))
        with pytest.raises(UnsupportedDimensionError):
            local_time_tanaka(x)

    def test_occupation_agrees_with_tanaka(self, bm_1000):
        tanaka = local_time_tanaka(bm_1000, 0.0).terminal.mean()
        occ = local_time_occupation(bm_1000, 0.0, 0.05).mean()
        assert abs(occ - tanaka) / tanaka <= 0.15

    def test_occupation_bandwidth_robust(self, bm_1000):
        a = local_time_occupation(bm_1000, 0.0, 0.05).mean()
        b = local_time_occupation(bm_1000, 0.0, 0.10).mean()
        assert abs(b - a) / a < 0.10

    def test_occupation_far_path(self, bm_paths):
        assert np.all(local_time_occupation(bm_paths, 10.0, 0.05) == 0)
        with pytest.raises(InvalidInputError):
            local_time_occupation(bm_paths, 0.0, 0.0)


class TestHpNorm:
    def test_zero(self, bm_paths):
        z = np.zeros_like(bm_paths.m)
        assert hp_norm_estimate(z, z).value == 0.0

    def test_bm(self, bm_1000):
        est = hp_norm_estimate(bm_1000.m, bm_1000.a, p=2)
        assert est.value == pytest.approx(1.0, abs=0.01)
        assert est.n_paths == 1000 and est.std_error > 0

    @pytest.mark.parametrize("p", [1, 2, 4.5])
    def test_drift_only(self, p):
        g = TimeGrid.uniform(64)
        a = np.tile(g.times[None, :, None], (5, 1, 1))
        assert hp_norm_estimate(np.zeros_like(a), a, p=p).value == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_p(self, bm_paths):
        vals = [hp_norm_estimate(bm_paths.m, bm_paths.m, p=p).value for p in (1, 1.5, 2, 3, 6)]
        assert all(b >= a for a, b in zip(vals[:-1], vals[1:]))

    def test_p_below_one(self, bm_paths):
        with pytest.raises(InvalidInputError):
            hp_norm_estimate(bm_paths.m, bm_paths.a, p=0.5)


class TestMartingaleTest:
    def test_bm_passes(self, bm_1000):
        rep = martingale_test(IntegralPath(bm_1000.grid, bm_1000.m[:, :, 0]))
        assert rep.verdict

    def test_drift_fails(self, bm_1000):
        N = np.tile(bm_1000.grid.times, (1000, 1))
        rep = martingale_test(IntegralPath(bm_1000.grid, N))
        assert not rep.verdict and rep.max_abs_z == np.inf

    def test_noisy_drift_fails(self, bm_1000):
        N = bm_1000.m[:, :, 0] + bm_1000.grid.times
        rep = martingale_test(IntegralPath(bm_1000.grid, N))
        assert not rep.verdict and rep.max_abs_z > 10

    def test_sgn_integral_passes(self, bm_1000):
        N = ito_integral(sgn(bm_1000.x), bm_1000)
        assert martingale_test(N).verdict

    def test_verdict_matches_thresholds(self, bm_1000):
        rep = martingale_test(IntegralPath(bm_1000.grid, bm_1000.m[:, :, 0]))
        assert rep.verdict == (rep.max_abs_z <= rep.z_crit and abs(rep.lag1_corr) <= rep.corr_crit)

    def test_correlated_increments_fail(self, bm_1000):
        # retrace the path back to 0: zero-mean increments with lag-1 correlation -1
        B = bm_1000.m[:, :, 0]
        N = np.where(bm_1000.grid.times <= 0.5, B, B[:, ::-1])
        rep = martingale_test(IntegralPath(bm_1000.grid, N), checkpoints=(0, 0.5, 1.0))
        assert not rep.verdict and rep.lag1_corr < -0.9

    def test_records(self, bm_1000):
        rep = martingale_test(IntegralPath(bm_1000.grid, bm_1000.m[:, :, 0]))
        recs = rep.to_records()
        assert len(recs) == 4
        assert list(recs[0]) == ["checkpoint_t", "mean_increment", "std_error", "z"]
        assert recs[-1]["checkpoint_t"] == 1.0

    def test_too_few_paths(self, bm_1000):
        with pytest.raises(InsufficientDataError):
            martingale_test(IntegralPath(bm_1000.grid, bm_1000.m[:99, :, 0]))
