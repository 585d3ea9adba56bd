import numpy as np
import pytest

from twincause.causal import IteVector, bca_bootstrap
from twincause.cohort import EconomicParams
from twincause.infer import DesignMatrix, ols_classical
from twincause.sense import (
    DEFAULT_MULTIPLIERS,
    adjusted_estimate,
    benchmark_bounds,
    benchmark_partials,
    contour_grid,
    robustness_value,
    sensitivity_report,
    wage_sweep,
)


def classical_fit(X, y, names=None):
    n, k = X.shape
    names = names or tuple(f"x{j}" for j in range(k))
    d = DesignMatrix(X, tuple(names), np.array(["a"] * n, dtype=object), {})
    return ols_classical(d, y)


def residualize(v, A):
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return v - A @ coef


def unit(v):
    return v / np.linalg.norm(v)


def construct_confounder(X, y, j, r2_dz, r2_yz, rng, toward_zero=True):
    """Sample vector with exact in-sample partial R2 with the exposure
    X[:, j] (given the others) and with y (given X): z spans the exposure
    residual, the outcome residual, and an orthogonal noise direction.

    The bias direction is set by the relative sign of the two components;
    ``toward_zero`` aligns it against the fitted coefficient's sign.
    """
    others = np.delete(X, j, axis=1)
    u_d = unit(residualize(X[:, j], others))
    u_y = unit(residualize(y, X))
    e = rng.normal(size=len(y))
    u_e = unit(residualize(e, np.column_stack([X, y])))
    b = np.sqrt(r2_yz / (1.0 - r2_yz))
    a = np.sqrt(r2_dz / (1.0 - r2_dz) * (b**2 + 1.0))
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    direction = np.sign(coef[j]) if toward_zero else -np.sign(coef[j])
    return a * u_d + direction * b * u_y + u_e


def make_fixture(seed, n=150, k=4):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n)] + [rng.normal(size=n) for _ in range(k - 1)])
    beta = rng.normal(size=k) * np.array([1.0] + [2.0] * (k - 1))
    y = X @ beta + rng.normal(size=n)
    return X, y, rng


class TestRobustnessValue:
    def test_zero_t(self):
        assert robustness_value(0.0, 100.0) == 0.0

    def test_f_equals_one_closed_form(self):
        # f = |t|/sqrt(df) = 1  ->  rv = (sqrt(5) - 1)/2
        df = 64.0
        t = np.sqrt(df)
        assert robustness_value(t, df) == pytest.approx((np.sqrt(5) - 1) / 2, rel=1e-12)

    def test_alpha_version_below_point_version(self):
        rv = robustness_value(5.0, 80.0)
        rva = robustness_value(5.0, 80.0, alpha=0.05)
        assert 0.0 <= rva <= rv <= 1.0

    def test_df_must_be_positive(self):
        with pytest.raises(ValueError):
            robustness_value(2.0, 0.0)

    def test_rv_strength_confounder_nullifies_estimate(self):
        # constructing a confounder with partial R2 (rv, rv) and refitting
        # must drive the exposure coefficient to zero
        X, y, rng = make_fixture(21)
        fit = classical_fit(X, y)
        j = 1
        t, df = float(fit.t[j]), float(fit.df[j])
        rv = robustness_value(t, df)
        z = construct_confounder(X, y, j, rv, rv, rng)
        refit = classical_fit(np.column_stack([X, z]), y)
        assert abs(refit.estimates[j]) < 1e-6


class TestAdjustedEstimate:
    def test_zero_r2yz_keeps_estimate(self):
        est, se, t = adjusted_estimate(3.0, 0.5, 50.0, 0.0, 0.3)
        assert est == 3.0

    def test_zero_r2dz_rescales_se_only(self):
        est, se, _ = adjusted_estimate(3.0, 0.5, 50.0, 0.2, 0.0)
        assert est == 3.0
        assert se == pytest.approx(0.5 * np.sqrt(0.8) * np.sqrt(50 / 49), rel=1e-12)

    def test_out_of_range_r2(self):
        with pytest.raises(ValueError):
            adjusted_estimate(1.0, 1.0, 10.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            adjusted_estimate(1.0, 1.0, 10.0, 0.5, -0.1)

    def test_matches_refit_with_constructed_confounder(self):
        for seed in range(6):
            X, y, rng = make_fixture(100 + seed)
            fit = classical_fit(X, y)
            j = 2
            r2_dz, r2_yz = 0.15, 0.25
            z = construct_confounder(X, y, j, r2_dz, r2_yz, rng)
            refit = classical_fit(np.column_stack([X, z]), y)
            est_adj, se_adj, t_adj = adjusted_estimate(
                float(fit.estimates[j]), float(fit.se[j]), float(fit.df[j]),
                r2_yz, r2_dz)
            assert refit.estimates[j] == pytest.approx(est_adj, abs=1e-6)
            assert refit.se[j] == pytest.approx(se_adj, rel=1e-6)
            assert refit.t[j] == pytest.approx(t_adj, rel=1e-6)

    def test_rv_inverse_property(self):
        X, y, _ = make_fixture(33)
        fit = classical_fit(X, y)
        j = 1
        t, df = float(fit.t[j]), float(fit.df[j])
        rv = robustness_value(t, df)
        est_adj, _, _ = adjusted_estimate(float(fit.estimates[j]), float(fit.se[j]),
                                          df, rv, rv)
        assert abs(est_adj) < 1e-9 * max(abs(fit.estimates[j]), 1.0)

    def test_adjusted_t_scale_invariant(self):
        _, _, t1 = adjusted_estimate(3.0, 0.5, 40.0, 0.2, 0.1)
        _, _, t2 = adjusted_estimate(300.0, 50.0, 40.0, 0.2, 0.1)
        assert t1 == pytest.approx(t2, rel=1e-12)


class TestBenchmarkBounds:
    def test_zero_multiplier_is_identity(self):
        X, y, _ = make_fixture(40)
        fit = classical_fit(X, y)
        out = benchmark_bounds(fit, "x1", 0.1, 0.2, multipliers=(0.0,))
        assert out[0]["adjusted_estimate"] == pytest.approx(float(fit.estimates[1]))

    def test_monotone_in_multiplier_for_positive_estimate(self):
        X, y, _ = make_fixture(41)
        y = y + 5.0 * X[:, 1]  # force a solidly positive coefficient
        fit = classical_fit(X, y)
        out = benchmark_bounds(fit, "x1", 0.05, 0.08, multipliers=(1.0, 2.0, 3.0))
        ts = [b["adjusted_t"] for b in out]
        assert ts[0] >= ts[1] >= ts[2]

    def test_capped_partials_flagged(self):
        X, y, _ = make_fixture(42)
        fit = classical_fit(X, y)
        out = benchmark_bounds(fit, "x1", 0.5, 0.5, multipliers=(3.0,))
        assert out[0]["capped"]

    def test_benchmark_partials_match_refit_definition(self):
        X, y, rng = make_fixture(43, n=200, k=5)
        r2_dz, r2_yz = benchmark_partials(X, y, exposure_col=1, benchmark_col=2)
        # independent check via t-statistic identities
        others = np.delete(X, 1, axis=1)
        fit_d = classical_fit(others, X[:, 1])
        # benchmark is column index 1 of `others` (intercept is 0)
        t_d, df_d = float(fit_d.t[1]), float(fit_d.df[1])
        assert r2_dz == pytest.approx(t_d**2 / (t_d**2 + df_d), rel=1e-9)
        fit_y = classical_fit(X, y)
        t_y, df_y = float(fit_y.t[2]), float(fit_y.df[2])
        assert r2_yz == pytest.approx(t_y**2 / (t_y**2 + df_y), rel=1e-9)

    def test_three_x_benchmark_matches_refit_oracle(self):
        X, y, rng = make_fixture(44, n=300, k=4)
        fit = classical_fit(X, y)
        j = 1
        r2_dz, r2_yz = 0.04, 0.05
        out = benchmark_bounds(fit, "x1", r2_dz, r2_yz, multipliers=(3.0,))
        z = construct_confounder(X, y, j, min(3 * r2_dz, 1 - 1e-9),
                                 min(3 * r2_yz, 1 - 1e-9), rng)
        refit = classical_fit(np.column_stack([X, z]), y)
        assert refit.estimates[j] == pytest.approx(out[0]["adjusted_estimate"], abs=1e-6)
        assert refit.t[j] == pytest.approx(out[0]["adjusted_t"], rel=1e-6)


class TestContourGrid:
    def test_origin_equals_fit_t(self):
        X, y, _ = make_fixture(50)
        fit = classical_fit(X, y)
        axis, tg, eg = contour_grid(fit, "x1", grid_points=11)
        assert tg[0, 0] == pytest.approx(float(fit.t[1]), rel=1e-12)
        assert eg[0, 0] == pytest.approx(float(fit.estimates[1]), rel=1e-12)

    def test_monotone_for_positive_estimate(self):
        # the adjusted t is monotone nonincreasing along the exposure-R2
        # axis; the adjusted estimate is monotone along both axes (t is
        # provably non-monotone in the outcome R2 near the edges)
        X, y, _ = make_fixture(51)
        y = y + 4.0 * X[:, 1]
        fit = classical_fit(X, y)
        _, tg, eg = contour_grid(fit, "x1", grid_points=15)
        assert np.all(np.diff(tg, axis=0) <= 1e-9)
        assert np.all(np.diff(eg, axis=0) <= 1e-9)
        assert np.all(np.diff(eg, axis=1) <= 1e-9)

    def test_estimate_sign_change_brackets_rv(self):
        X, y, _ = make_fixture(52)
        y = y + 0.4 * X[:, 1]  # keeps the robustness value inside the grid
        fit = classical_fit(X, y)
        rv = robustness_value(float(fit.t[1]), float(fit.df[1]))
        axis, _, eg = contour_grid(fit, "x1", grid_points=41, r2_max=0.95)
        diag = np.array([eg[i, i] for i in range(len(axis))])
        crossings = np.nonzero(np.diff(np.sign(diag)))[0]
        assert len(crossings) >= 1
        i = crossings[0]
        assert axis[i] <= rv <= axis[i + 1]

    def test_grid_points_validation(self):
        X, y, _ = make_fixture(53)
        fit = classical_fit(X, y)
        with pytest.raises(ValueError):
            contour_grid(fit, "x1", grid_points=1)


class TestWageSweep:
    def params(self):
        return EconomicParams(wage={"a": 20.0, "b": 10.0}, ppp={"a": 1.0, "b": 1.0})

    def test_direct_formula_single_profile(self):
        # three identical rows so the bootstrap is well defined
        d_oop = IteVector(deltas=np.array([-500.0] * 3), outcome_name="oop")
        d_hours = IteVector(deltas=np.array([-100.0] * 3), outcome_name="hours")
        sweep = wage_sweep(d_oop, d_hours, self.params(), np.array(["a"] * 3, dtype=object),
                           multipliers=(0.5,), rng=np.random.default_rng(0), B=100)
        assert sweep.nate[0].point == pytest.approx(-500.0 - 100.0 * 10.0, rel=1e-12)

    def test_m1_equals_net_burden_ate(self):
        rng = np.random.default_rng(60)
        n = 500
        d_oop = IteVector(deltas=rng.normal(-300, 50, n), outcome_name="oop")
        d_hours = IteVector(deltas=rng.normal(-80, 10, n), outcome_name="hours")
        labels = np.array(["a", "b"], dtype=object)[rng.integers(0, 2, n)]
        params = self.params()
        sweep = wage_sweep(d_oop, d_hours, params, labels,
                           rng=np.random.default_rng(1), B=200)
        rate = np.array([params.wage[c] / params.ppp[c] for c in labels])
        net = d_oop.deltas + d_hours.deltas * rate
        ate = bca_bootstrap(net, np.mean, B=200, rng=np.random.default_rng(2))
        i = sweep.multipliers.index(1.0)
        assert abs(sweep.nate[i].point - ate.point) < 1e-9

    def test_affine_in_multiplier(self):
        rng = np.random.default_rng(61)
        n = 200
        d_oop = IteVector(deltas=rng.normal(size=n), outcome_name="oop")
        d_hours = IteVector(deltas=rng.normal(size=n), outcome_name="hours")
        labels = np.array(["a"] * n, dtype=object)
        sweep = wage_sweep(d_oop, d_hours, self.params(), labels,
                           rng=np.random.default_rng(2), B=100)
        pts = [r.point for r in sweep.nate]
        m = sweep.multipliers
        slopes = np.diff(pts) / np.diff(m)
        assert np.allclose(slopes, slopes[0], atol=1e-9 * max(1.0, abs(pts[0])))

    def test_negative_hours_effect_makes_nate_decreasing(self):
        rng = np.random.default_rng(62)
        n = 100
        d_oop = IteVector(deltas=rng.normal(0, 10, n), outcome_name="oop")
        d_hours = IteVector(deltas=-np.abs(rng.normal(50, 5, n)), outcome_name="hours")
        sweep = wage_sweep(d_oop, d_hours, self.params(), np.array(["a"] * n, dtype=object),
                           rng=np.random.default_rng(3), B=100)
        pts = [r.point for r in sweep.nate]
        assert all(a > b for a, b in zip(pts, pts[1:]))

    def test_all_default_multipliers_emitted(self):
        rng = np.random.default_rng(63)
        n = 50
        d_oop = IteVector(deltas=rng.normal(size=n), outcome_name="oop")
        d_hours = IteVector(deltas=rng.normal(size=n), outcome_name="hours")
        sweep = wage_sweep(d_oop, d_hours, self.params(), np.array(["b"] * n, dtype=object),
                           rng=np.random.default_rng(4), B=100)
        assert sweep.multipliers == DEFAULT_MULTIPLIERS

    def test_length_mismatch(self):
        d_oop = IteVector(deltas=np.zeros(5), outcome_name="oop")
        d_hours = IteVector(deltas=np.zeros(4), outcome_name="hours")
        with pytest.raises(ValueError, match="aligned"):
            wage_sweep(d_oop, d_hours, self.params(), np.array(["a"] * 5, dtype=object))


def test_sensitivity_report_bundle():
    X, y, _ = make_fixture(70, n=200, k=4)
    y = y + 3.0 * X[:, 1]
    fit = classical_fit(X, y)
    r2_dz, r2_yz = benchmark_partials(X, y, 1, 2)
    rep = sensitivity_report(fit, "x1", r2_dz, r2_yz)
    assert 0.0 <= rep.rv_alpha <= rep.rv_point <= 1.0
    assert rep.contour_t[0, 0] == pytest.approx(rep.t, rel=1e-12)
    assert len(rep.bounds) == 3
