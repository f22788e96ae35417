"""Instrument projection, the moment statistic and its simulated null."""

import numpy as np
import pytest
from scipy import stats

from rkhstest.estimators import FitConfig, fit_constrained_ridge
from rkhstest.inference import (
    HypothesisPlan,
    SectionInstrumentPlan,
    SeriesInstrumentPlan,
    build_instruments,
    covariance_estimate,
    default_projection_rho,
    generalized_residuals,
    orthogonality_defect,
    p_value,
    project_instruments,
    project_on_features,
    run_test,
    series_feature_columns,
    simulate_null,
)
from rkhstest.inference import test_statistic as moment_statistic
from rkhstest.kernels import (
    CompositeKernel,
    ConstantKernel,
    GaussianRBF,
    LinearKernel,
    polynomial_series,
)
from rkhstest.losses import poisson_loss, rescaled_square_loss, square_loss

RNG = np.random.default_rng(99)


class TestResiduals:
    def test_perfect_fit_square(self):
        class Interp:
            def predict(self, x):
                return np.asarray(x)[:, 0]

        x = np.linspace(-1, 1, 5)[:, None]
        e0 = generalized_residuals(Interp(), x, x[:, 0], square_loss())
        assert np.array_equal(e0, np.zeros(5))

    def test_rescaled_square_sign(self):
        class Zero:
            def predict(self, x):
                return np.zeros(len(x))

        e0 = generalized_residuals(
            Zero(), np.zeros((2, 1)), np.array([1.0, 0.0]), rescaled_square_loss()
        )
        assert np.array_equal(e0, np.array([-1.0, 0.0]))

    def test_poisson_zero_score(self):
        class Zero:
            def predict(self, x):
                return np.zeros(len(x))

        e0 = generalized_residuals(Zero(), np.zeros((1, 1)), np.array([1.0]), poisson_loss())
        assert e0[0] == 0.0


class TestProjection:
    def test_column_in_span_annihilated(self):
        rng = np.random.default_rng(1)
        c0 = rng.normal(size=(6, 6))
        c0 = c0 @ c0.T
        col = c0 @ rng.normal(size=(6, 1))
        inst = project_instruments(c0, np.ones(6), col, 0.0)
        assert np.linalg.norm(inst.projected) <= 1e-8 * np.linalg.norm(col)

    def test_orthogonal_column_untouched(self):
        v = np.array([1.0, 1.0, 0.0, 0.0])
        c0 = np.outer(v, v)
        col = np.array([[0.0], [0.0], [1.0], [-1.0]])
        inst = project_instruments(c0, np.ones(4), col, 0.0)
        assert np.allclose(inst.projected, col, atol=1e-12)

    def test_penalized_first_order_conditions_oracle(self):
        rng = np.random.default_rng(2)
        c0 = rng.normal(size=(4, 4))
        c0 = c0 @ c0.T + 0.5 * np.eye(4)
        s = rng.uniform(0.5, 2.0, 4)
        col = rng.normal(size=(4, 1))
        rho = 0.1
        inst = project_instruments(c0, s, col, rho)
        # independent route: stationarity of the penalized weighted loss,
        # (C0 S C0 + rho C0) b = C0 S c
        lhs = c0 @ np.diag(s) @ c0 + rho * c0
        rhs = c0 @ (s * col[:, 0])
        b = np.linalg.solve(lhs, rhs)
        assert np.allclose(inst.projected[:, 0], col[:, 0] - c0 @ b, atol=1e-8)

    def test_projection_never_increases_weighted_objective(self):
        rng = np.random.default_rng(3)
        c0 = rng.normal(size=(8, 8))
        c0 = c0 @ c0.T
        s = rng.uniform(0.5, 1.5, 8)
        raw = rng.normal(size=(8, 3))
        for rho in (0.0, 0.2, 5.0):
            inst = project_instruments(c0, s, raw, rho)
            for r in range(3):
                resid = inst.projected[:, r]
                assert resid @ (s * resid) <= raw[:, r] @ (s * raw[:, r]) + 1e-10

    def test_orthogonality_defect_at_zero_rho(self):
        rng = np.random.default_rng(4)
        basis = rng.normal(size=(30, 3))
        raw = rng.normal(size=(30, 5)) + basis @ rng.normal(size=(3, 5))
        inst = project_on_features(basis, np.ones(30), raw, 0.0)
        assert orthogonality_defect(basis, np.ones(30), inst.projected) <= 1e-8

    def test_gram_mode_orthogonality_at_zero_rho(self):
        rng = np.random.default_rng(5)
        c0 = rng.normal(size=(12, 4))
        c0 = c0 @ c0.T  # rank 4
        raw = rng.normal(size=(12, 3))
        inst = project_instruments(c0, np.ones(12), raw, 0.0)
        assert orthogonality_defect(c0, np.ones(12), inst.projected) <= 1e-8

    def test_negative_rho_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            project_instruments(np.eye(2), np.ones(2), np.ones((2, 1)), -1.0)

    def test_weights_positive(self):
        with pytest.raises(ValueError, match="positive"):
            project_instruments(np.eye(2), np.array([1.0, 0.0]), np.ones((2, 1)), 0.1)


class TestBuildInstruments:
    def test_series_features_monomial_grid(self):
        x = RNG.uniform(-2, 2, (7, 3))
        base = polynomial_series(10, 2.2)
        pairs = [(0, 2), (2, 5)]
        cols = series_feature_columns(x, base, pairs)
        for j, (coord, v) in enumerate(pairs):
            assert np.allclose(cols[:, j], v**-1.1 * x[:, coord] ** v, rtol=1e-12)

    def test_normalized_section_with_unit_diagonal(self):
        k = LinearKernel(1.0)
        x = RNG.uniform(-2, 2, (6, 1))
        cols = build_instruments(
            x, "kernel_sections_normalized", kernel=k, anchors=np.array([[1.0]])
        )
        assert np.allclose(cols[:, 0], x[:, 0], rtol=1e-12)

    def test_gram_columns_full_set(self):
        k = GaussianRBF(1.0)
        x = RNG.uniform(-2, 2, (5, 2))
        cols = build_instruments(x, "gram_columns", kernel=k)
        assert np.allclose(cols, k.gram(x), rtol=1e-14)

    def test_zero_diagonal_rejected(self):
        k = LinearKernel(1.0)
        with pytest.raises(ValueError, match="normalize"):
            build_instruments(
                np.ones((3, 1)),
                "kernel_sections_normalized",
                kernel=k,
                anchors=np.array([[0.0]]),
            )


class TestStatistic:
    def test_zero_residuals(self):
        h = RNG.normal(size=(6, 3))
        assert moment_statistic(np.zeros(6), h) == 0.0

    def test_all_ones_single_instrument(self):
        n = 9
        ones = np.ones(n)
        assert moment_statistic(ones, ones[:, None]) == pytest.approx(n, rel=1e-12)

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(6)
        e0 = rng.normal(size=5)
        h = rng.normal(size=(5, 2))
        total = 0.0
        for r in range(2):
            acc = 0.0
            for i in range(5):
                acc += e0[i] * h[i, r]
            total += (acc / np.sqrt(5)) ** 2
        assert moment_statistic(e0, h) == pytest.approx(total / 2, rel=1e-12)

    def test_sign_invariance_exact(self):
        rng = np.random.default_rng(7)
        e0 = rng.normal(size=20)
        h = rng.normal(size=(20, 4))
        assert moment_statistic(e0, h) == moment_statistic(-e0, h)


class TestCovariance:
    def test_orthonormal_scaled_columns(self):
        n, r = 16, 4
        q, _ = np.linalg.qr(np.random.default_rng(8).normal(size=(n, r)))
        h = np.sqrt(n) * q
        sigma2 = 2.5
        e0 = np.full(n, np.sqrt(sigma2))
        sigma, spectrum = covariance_estimate(e0, h, None, "product_form")
        assert np.allclose(sigma, sigma2 * np.eye(r), atol=1e-10)
        assert np.allclose(spectrum, np.full(r, sigma2 / r), atol=1e-10)

    def test_pointwise_equals_product_for_unit_weights(self):
        rng = np.random.default_rng(9)
        n = 12
        h = rng.normal(size=(n, 3))
        e0 = rng.normal(size=n)
        e0 *= np.sqrt(n) / np.linalg.norm(e0)  # e0'e0/n = 1
        s1, w1 = covariance_estimate(e0, h, np.ones(n), "pointwise")
        s2, w2 = covariance_estimate(e0, h, None, "product_form")
        assert np.allclose(s1, s2, rtol=1e-12)
        assert np.allclose(w1, w2, rtol=1e-12)

    def test_eigenvalues_match_cubic_oracle(self):
        rng = np.random.default_rng(10)
        h = rng.normal(size=(20, 3))
        e0 = rng.normal(size=20)
        sigma, spectrum = covariance_estimate(e0, h, None, "product_form")
        m = sigma / 3.0
        # roots of the characteristic polynomial, an independent route
        c2 = -np.trace(m)
        c1 = 0.5 * (np.trace(m) ** 2 - np.trace(m @ m))
        c0 = -np.linalg.det(m)
        roots = np.sort(np.roots([1.0, c2, c1, c0]).real)[::-1]
        assert np.allclose(spectrum, roots, rtol=1e-8)

    def test_spectrum_descending_nonnegative_and_trace(self):
        rng = np.random.default_rng(11)
        h = rng.normal(size=(25, 6))
        e0 = rng.normal(size=25)
        sigma, spectrum = covariance_estimate(e0, h, None, "product_form")
        assert np.all(np.diff(spectrum) <= 1e-12)
        assert np.all(spectrum >= 0)
        assert spectrum.sum() == pytest.approx(np.trace(sigma) / 6.0, rel=1e-8)

    def test_pointwise_requires_weights(self):
        with pytest.raises(ValueError, match="weights"):
            covariance_estimate(np.ones(3), np.ones((3, 1)), None, "pointwise")


class TestSimulatedNull:
    def test_single_weight_mean(self):
        draws = simulate_null([1.0], 100_000, 123)
        assert abs(draws.mean() - 1.0) <= 3 * np.sqrt(2.0 / 100_000)

    def test_zero_spectrum(self):
        assert np.array_equal(simulate_null([0.0, 0.0], 50, 1), np.zeros(50))

    def test_half_half_matches_scaled_chi2(self):
        draws = simulate_null([0.5, 0.5], 100_000, 7)
        # 0.5 * chi^2_2: closed-form CDF oracle
        stat, pval = stats.kstest(draws, lambda x: stats.chi2.cdf(2 * x, df=2))
        assert pval > 0.01

    def test_mean_matches_weight_sum(self):
        omega = np.array([0.6, 0.25, 0.1, 0.05])
        draws = simulate_null(omega, 100_000, 11)
        tol = 3 * np.sqrt(2 * (omega**2).sum() / 100_000)
        assert abs(draws.mean() - omega.sum()) <= tol

    def test_deterministic_given_seed(self):
        a = simulate_null([0.3, 0.2], 1000, 42)
        b = simulate_null([0.3, 0.2], 1000, 42)
        assert np.array_equal(a, b)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            simulate_null([-0.1], 10, 0)


class TestPValue:
    def test_statistic_below_all_draws(self):
        assert p_value(0.0, np.ones(99)) == 1.0

    def test_statistic_above_all_draws(self):
        assert p_value(2.0, np.ones(99)) == pytest.approx(1.0 / 100)

    def test_statistic_at_median(self):
        draws = np.arange(1, 102, dtype=float)
        assert p_value(51.0, draws) == pytest.approx(52.0 / 102)

    def test_zero_statistic_and_zero_draws(self):
        assert p_value(0.0, np.zeros(10)) == 1.0

    def test_empty_draws_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            p_value(1.0, np.array([]))


def test_synthetic_null_calibration_two_sample_ks():
    # scores independent of fixed instruments, projection disabled: the
    # statistic's law must match the simulated weighted chi-square law
    rng = np.random.default_rng(314)
    n, r = 100, 8
    h = rng.uniform(-1, 1, (n, r)) @ np.diag(rng.uniform(0.5, 2.0, r))
    omega = np.linalg.eigvalsh((h.T @ h) / n)[::-1] / r
    stats_obs = np.empty(2000)
    for i in range(2000):
        e0 = rng.standard_normal(n)
        stats_obs[i] = moment_statistic(e0, h)
    reference = simulate_null(np.clip(omega, 0, None), 4000, rng)
    _, pval = stats.ks_2samp(stats_obs, reference)
    assert pval > 0.01


def _toy_plan():
    base = polynomial_series(6, 2.2)
    from rkhstest.kernels import linear_series

    lin = linear_series()
    return HypothesisPlan(
        name="toy",
        r0=CompositeKernel(((LinearKernel(1.0), (0,)),)),
        r1=None,
        fit_terms=((lin, (0,)),),
        instruments=SeriesInstrumentPlan(
            kernel=base,
            test_pairs=tuple((0, v) for v in range(2, 7)) + tuple((1, v) for v in range(1, 7)),
            projection_pairs=((0, 1),),
        ),
    )


class TestRunTest:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(15)
        x = rng.uniform(-2, 2, (40, 2))
        y = 0.4 * x[:, 0] + 0.5 * rng.standard_normal(40)
        plan = _toy_plan()
        cfg = FitConfig(budget=5.0, iterations=100)
        a = run_test(x, y, plan, rescaled_square_loss(), cfg, n_draws=500, rng=5)
        b = run_test(x, y, plan, rescaled_square_loss(), cfg, n_draws=500, rng=5)
        assert a.statistic == b.statistic
        assert a.p_value == b.p_value
        assert np.array_equal(a.null_draws, b.null_draws)
        assert np.array_equal(a.spectrum, b.spectrum)

    def test_degenerate_exact_fit(self):
        rng = np.random.default_rng(16)
        x = rng.uniform(-2, 2, (30, 2))
        y = 0.7 * x[:, 0]  # exactly representable under the null kernel
        plan = _toy_plan()
        cfg = FitConfig(budget=50.0, iterations=400)
        res = run_test(x, y, plan, rescaled_square_loss(), cfg, n_draws=200, rng=1)
        assert res.statistic <= 1e-10
        assert 0.0 < res.p_value <= 1.0

    def test_result_record_fields(self):
        rng = np.random.default_rng(17)
        x = rng.uniform(-2, 2, (30, 2))
        y = 0.4 * x[:, 0] + 0.3 * rng.standard_normal(30)
        plan = _toy_plan()
        res = run_test(
            x, y, plan, rescaled_square_loss(), FitConfig(budget=5.0, iterations=50),
            n_draws=300, rng=2,
        )
        record = res.to_record()
        for key in (
            "statistic",
            "p_value",
            "spectrum",
            "naive_statistic",
            "naive_p_value",
            "proj_rho",
            "scaling_note",
            "config",
        ):
            assert key in record
        assert res.r_count == 11
        assert res.statistic >= 0
        text = res.to_text()
        assert "statistic" in text and "p-value" in text and "eigenvalues" in text

    def test_explicit_zero_rho_gives_orthogonal_instruments(self):
        rng = np.random.default_rng(18)
        x = rng.uniform(-2, 2, (50, 2))
        y = 0.4 * x[:, 0] + 0.3 * rng.standard_normal(50)
        plan = _toy_plan()
        res = run_test(
            x, y, plan, rescaled_square_loss(), FitConfig(budget=5.0, iterations=80),
            proj_rho=0.0, n_draws=200, rng=3,
        )
        assert res.orthogonality is not None and res.orthogonality <= 1e-8
        assert res.proj_rho_rule == "explicit"

    def test_section_plan_full_pipeline(self):
        rng = np.random.default_rng(19)
        x = rng.uniform(-2, 2, (60, 2))
        y = 0.2 * x[:, 0] + 0.1 * x[:, 1] + 0.4 * rng.standard_normal(60)
        r0 = CompositeKernel(((ConstantKernel(0.5), None), (LinearKernel(0.5), (0, 1))))
        plan = HypothesisPlan(
            name="sections",
            r0=r0,
            r1=CompositeKernel(((GaussianRBF(0.75, 0.5), (0, 1)),)),
            fit_terms=None,
            instruments=SectionInstrumentPlan(count=15),
        )
        res = run_test(
            x, y, plan, rescaled_square_loss(),
            FitConfig(budget=10.0, solver="ridge_closed_form"),
            n_draws=500, rng=4, diagnostics=True,
        )
        assert res.r_count == 15
        assert res.proj_rho_rule == "fit-coupled"
        assert 0 < res.p_value <= 1
        assert res.naive_statistic >= 0


def test_default_projection_rho_rule():
    assert default_projection_rho(100) == pytest.approx(100 ** -0.4)
    assert 1000 ** -0.5 < default_projection_rho(1000) < 1000 ** (-1.0 / 3.0)
