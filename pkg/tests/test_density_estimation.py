"""Kernel and tabulated feature densities on the bounded age grid."""

import numpy as np
import pytest
from scipy import integrate

from quaropt.density_estimation import (
    DensityEstimate,
    FeaturePoint,
    FeatureSpace,
    density_ratio_features,
    fit_kernel_density,
    read_density_csv,
    select_bandwidth,
    tabulated_density,
    write_density_csv,
)
from quaropt.distributions import TruncNormalParams, truncnormal_pdf, truncnormal_sample
from quaropt.simulation import discretized_age_weights

SPACE = FeatureSpace(("none",), 11, 80)


def _points(ages, level="none"):
    return [FeaturePoint(level, int(a)) for a in np.atleast_1d(ages)]


class TestKernelFit:
    def test_tiny_bandwidth_gives_point_mass(self):
        est = fit_kernel_density(_points([40]), SPACE, bandwidth=1e-6)
        assert est.weight(FeaturePoint("none", 40)) == pytest.approx(1.0, abs=1e-15)
        assert est.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_uniform_sample_stays_near_uniform(self):
        # oracle: the exactly uniform sample (equal count per age)
        per_age = 1408  # 70 ages * 1408 = 98,560 ~ 1e5
        sample = [FeaturePoint("none", a) for a in range(11, 81) for _ in range(per_age)]
        est = fit_kernel_density(sample, SPACE, bandwidth=2.0)
        ratio = est.weights.max() / est.weights.min()
        assert ratio < 1.05

    def test_truncnormal_sample_mean_matches_quadrature_oracle(self):
        tn = TruncNormalParams(55.0, 625.0, 10.0, 80.0)
        oracle, err = integrate.quad(lambda y: y * truncnormal_pdf(y, tn), 10.0, 80.0)
        assert err < 1e-8
        rng = np.random.default_rng(21)
        ages = np.clip(np.rint(truncnormal_sample(tn, rng, 10_000)), 11, 80).astype(int)
        est = fit_kernel_density(_points(ages), SPACE, bandwidth="auto")
        assert est.mean_age() == pytest.approx(oracle, abs=1.0)

    def test_mass_sums_to_one(self):
        rng = np.random.default_rng(22)
        ages = rng.integers(11, 81, size=500)
        est = fit_kernel_density(_points(ages), SPACE, bandwidth=3.0)
        assert abs(est.weights.sum() - 1.0) < 1e-12

    def test_smoothing_toward_uniform_is_monotone_in_bandwidth(self):
        rng = np.random.default_rng(23)
        ages = np.clip(
            np.rint(truncnormal_sample(TruncNormalParams(40, 100, 11, 80), rng, 500)), 11, 80
        ).astype(int)
        uniform = np.full(70, 1.0 / 70)
        tvs = []
        for h in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0):
            est = fit_kernel_density(_points(ages), SPACE, bandwidth=h)
            tvs.append(0.5 * np.abs(est.weights - uniform).sum())
        assert all(b <= a + 1e-12 for a, b in zip(tvs, tvs[1:]))

    def test_strata_combined_by_empirical_proportions(self):
        space = FeatureSpace(("high", "low"), 30, 50)
        sample = _points([35] * 30, "high") + _points([45] * 10, "low")
        est = fit_kernel_density(sample, space, bandwidth=1.0)
        high_mass = sum(
            w for p, w in zip(est.points, est.weights) if p.risk_level == "high"
        )
        assert high_mass == pytest.approx(0.75, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_kernel_density([], SPACE)
        with pytest.raises(ValueError):
            fit_kernel_density(_points([40]), SPACE, bandwidth=0.0)
        with pytest.raises(ValueError):
            fit_kernel_density(_points([8]), SPACE, bandwidth=1.0)  # outside support
        with pytest.raises(ValueError):
            fit_kernel_density(_points([40], "high"), SPACE, bandwidth=1.0)

    def test_auto_bandwidth_lies_on_grid(self):
        rng = np.random.default_rng(24)
        ages = np.clip(
            np.rint(truncnormal_sample(TruncNormalParams(40, 225, 11, 80), rng, 2000)), 11, 80
        ).astype(int)
        h = select_bandwidth(_points(ages), SPACE)
        assert 0.5 <= h <= 10.0


class TestTabulated:
    def test_two_point_half_half(self):
        est = tabulated_density(
            {FeaturePoint("none", 30): 0.5, FeaturePoint("none", 60): 0.5}
        )
        assert est.weight(FeaturePoint("none", 30)) == 0.5
        assert est.weight(FeaturePoint("none", 60)) == 0.5
        assert est.bandwidth is None

    def test_degenerate_point_mass(self):
        est = tabulated_density({FeaturePoint("none", 44): 1.0})
        assert est.weight(FeaturePoint("none", 44)) == 1.0

    def test_three_age_fixture_dot_product(self):
        # hand-computed AQD downstream: 0.2*10 + 0.3*12 + 0.5*14 = 12.6
        est = tabulated_density(
            {
                FeaturePoint("none", 30): 0.2,
                FeaturePoint("none", 40): 0.3,
                FeaturePoint("none", 50): 0.5,
            }
        )
        durations = dict(zip(est.points, [10.0, 12.0, 14.0]))
        aqd = sum(est.weight(p) * durations[p] for p in est.points)
        assert aqd == pytest.approx(12.6, abs=1e-12)

    def test_renormalizes_with_warning(self):
        with pytest.warns(UserWarning, match="renormalizing"):
            est = tabulated_density(
                {FeaturePoint("none", 30): 2.0, FeaturePoint("none", 31): 6.0}
            )
        assert est.weight(FeaturePoint("none", 30)) == pytest.approx(0.25)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            tabulated_density({FeaturePoint("none", 30): -0.5, FeaturePoint("none", 31): 1.5})


class TestDensityRatio:
    def test_identical_densities_give_unit_ratio(self):
        rng = np.random.default_rng(25)
        ages = rng.integers(20, 60, size=400)
        f1 = fit_kernel_density(_points(ages), SPACE, bandwidth=2.0)
        f0 = fit_kernel_density(_points(ages), SPACE, bandwidth=2.0)
        for age in (20, 40, 60):
            assert density_ratio_features(f1, f0, FeaturePoint("none", age)) == pytest.approx(
                1.0, abs=1e-12
            )

    def test_scenario_truth_ratio_at_55(self):
        # oracle: discretized truncated-normal bin masses (analytic laws)
        infected_law = TruncNormalParams(55.0, 625.0, 10.0, 80.0)
        uninfected_law = TruncNormalParams(25.0, 400.0, 10.0, 80.0)
        w1 = discretized_age_weights(infected_law, 11, 80)
        w0 = discretized_age_weights(uninfected_law, 11, 80)
        idx = 55 - 11
        truth_ratio = w1[idx] / w0[idx]
        rng = np.random.default_rng(26)
        a1 = np.clip(np.rint(truncnormal_sample(infected_law, rng, 10_000)), 11, 80)
        a0 = np.clip(np.rint(truncnormal_sample(uninfected_law, rng, 10_000)), 11, 80)
        f1 = fit_kernel_density(_points(a1), SPACE, bandwidth=2.0)
        f0 = fit_kernel_density(_points(a0), SPACE, bandwidth=2.0)
        est = density_ratio_features(f1, f0, FeaturePoint("none", 55))
        assert est == pytest.approx(truth_ratio, rel=0.10)

    def test_zero_denominator_names_the_point(self):
        f1 = tabulated_density({FeaturePoint("none", 30): 1.0})
        f0 = tabulated_density(
            {FeaturePoint("none", 30): 0.0, FeaturePoint("none", 31): 1.0}
        )
        with pytest.raises(ZeroDivisionError, match="age=30"):
            density_ratio_features(f1, f0, FeaturePoint("none", 30))

    def test_positive_ratio_where_both_positive(self):
        rng = np.random.default_rng(27)
        a1 = rng.integers(11, 81, size=3000)
        a0 = rng.integers(11, 81, size=3000)
        f1 = fit_kernel_density(_points(a1), SPACE, bandwidth=2.0)
        f0 = fit_kernel_density(_points(a0), SPACE, bandwidth=2.0)
        for p in f0.points:
            r = density_ratio_features(f1, f0, p)
            assert np.isfinite(r) and r > 0.0


class TestCsvRoundtrip:
    def test_write_read(self, tmp_path):
        est = tabulated_density(
            {
                FeaturePoint("high", 30): 0.25,
                FeaturePoint("low", 30): 0.5,
                FeaturePoint("low", 31): 0.25,
            }
        )
        path = tmp_path / "density.csv"
        write_density_csv(est, path)
        back = read_density_csv(path)
        assert back.points == est.points
        np.testing.assert_allclose(back.weights, est.weights, atol=1e-15)
        header = path.read_text().splitlines()[0]
        assert header == "risk_level,age,weight"


class TestFeatureSpace:
    def test_points_sorted_by_level_then_age(self):
        space = FeatureSpace(("none", "high"), 30, 31)
        pts = space.points()
        assert pts == (
            FeaturePoint("high", 30),
            FeaturePoint("high", 31),
            FeaturePoint("none", 30),
            FeaturePoint("none", 31),
        )

    def test_validation(self):
        with pytest.raises(ValueError):
            FeatureSpace(("bogus",), 10, 20)
        with pytest.raises(ValueError):
            FeatureSpace(("none",), 30, 20)
        with pytest.raises(ValueError):
            FeaturePoint("none", 12.5)
