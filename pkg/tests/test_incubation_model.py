"""Interval-censored likelihood, its gradient, and the MLE."""

import json
import math

import numpy as np
import pytest
from scipy import integrate

from quaropt.distributions import TruncNormalParams, truncnormal_sample
from quaropt.incubation_model import (
    ConditionalIncubationModel,
    FitOptions,
    FitReport,
    ceiled_loglik,
    ceiled_loglik_gradient,
    conditional_cdf,
    conditional_pdf,
    conditional_quantile,
    continuous_loglik,
    fit_mle,
    interval_probability,
)
from quaropt.simulation import generate_dataset, scenario

TABLE_MODEL = ConditionalIncubationModel(
    shape=1.57, gamma=(9.09, -0.11, 0.0015), age_support=(11, 80)
)


def _synthetic_records(seed, n=1770, model=TABLE_MODEL):
    rng = np.random.default_rng(seed)
    law = TruncNormalParams(55.0, 625.0, 10.0, 80.0)
    ages = np.clip(np.rint(truncnormal_sample(law, rng, n)), 11, 80)
    z = np.ceil(model.sample(ages, rng))
    return np.column_stack([ages, z])


class TestCeiledLoglik:
    def test_single_interval_against_quadrature_oracle(self):
        # P(0 < Y <= 1) for the unit exponential by quadrature, then log
        mass, err = integrate.quad(lambda y: math.exp(-y), 0.0, 1.0)
        assert err < 1e-12
        model = ConditionalIncubationModel(1.0, (1.0, 0.0, 0.0), age_support=(30, 40))
        value = ceiled_loglik(model, [(35, 1)])
        assert value == pytest.approx(math.log(mass), rel=1e-12)
        assert value == pytest.approx(-0.45867514538708193, rel=1e-12)

    def test_mass_exhausted_when_scale_tiny(self):
        model = ConditionalIncubationModel(1.5, (1e-6, 0.0, 0.0), age_support=(30, 40))
        assert ceiled_loglik(model, [(35, 1)]) == pytest.approx(0.0, abs=1e-12)

    def test_truth_beats_perturbations_on_simulated_data(self):
        # Monte-Carlo oracle: the true parameters should out-score every
        # one-parameter +-20% perturbation on nearly every dataset
        truth = ConditionalIncubationModel(
            1.5, (6.75, -0.15, 0.0025), age_support=(10, 80)
        )  # scenario-1 scale 4.5 + 0.0025 (x - 30)^2 expanded in raw age
        wins = 0
        n_seeds = 100
        for seed in range(n_seeds):
            ds = generate_dataset(scenario(1), 10_000, seed=seed)
            records = ds.mle_records()
            base = ceiled_loglik(truth, records)
            best_perturbed = -np.inf
            for k in range(4):
                for sign in (+1.0, -1.0):
                    params = [truth.shape, *truth.gamma]
                    params[k] *= 1.0 + sign * 0.2
                    cand = ConditionalIncubationModel(
                        params[0], tuple(params[1:4]), age_support=(10, 80)
                    )
                    best_perturbed = max(best_perturbed, ceiled_loglik(cand, records))
            wins += base > best_perturbed
        assert wins >= 0.95 * n_seeds

    def test_errors(self):
        model = ConditionalIncubationModel(1.5, (5.0, 0.0, 0.0), age_support=(30, 40))
        with pytest.raises(ValueError):
            ceiled_loglik(model, [(35, 0)])
        with pytest.raises(ValueError):
            ceiled_loglik(model, [(35, 1.5)])
        with pytest.raises(ValueError):
            ceiled_loglik(model, [])


class TestGradient:
    def test_matches_central_finite_differences(self):
        records = _synthetic_records(seed=5, n=200)
        rng = np.random.default_rng(6)
        checked = 0
        while checked < 20:
            params = np.array(
                [
                    rng.uniform(0.9, 2.5),
                    rng.uniform(4.0, 12.0),
                    rng.uniform(-0.08, 0.08),
                    rng.uniform(-0.0005, 0.002),
                ]
            )
            try:
                model = ConditionalIncubationModel(
                    params[0], tuple(params[1:4]), age_support=(11, 80)
                )
            except ValueError:
                continue
            grad = ceiled_loglik_gradient(model, records)
            fd = np.empty(4)
            for k in range(4):
                h = 1e-6 * max(1.0, abs(params[k]))
                plus, minus = params.copy(), params.copy()
                plus[k] += h
                minus[k] -= h
                fd[k] = (
                    ceiled_loglik(
                        ConditionalIncubationModel(plus[0], tuple(plus[1:4]), age_support=(11, 80)),
                        records,
                    )
                    - ceiled_loglik(
                        ConditionalIncubationModel(minus[0], tuple(minus[1:4]), age_support=(11, 80)),
                        records,
                    )
                ) / (2.0 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)
            checked += 1

    def test_interval_probabilities_sum_to_one(self):
        for age in (11, 40, 80):
            scale = TABLE_MODEL.scale_at(age)
            z_max = int(np.ceil(scale * math.log(1e12) ** (1.0 / TABLE_MODEL.shape))) + 2
            zs = np.arange(1, z_max + 1)
            probs = interval_probability(TABLE_MODEL, float(age), zs)
            tail = 1.0 - float(conditional_cdf(TABLE_MODEL, float(age), float(z_max)))
            assert tail < 1e-12
            assert probs.sum() == pytest.approx(1.0, abs=1e-10)


class TestFit:
    def test_recovers_parameters_within_three_reported_ses(self):
        records = _synthetic_records(seed=1001)
        fit = fit_mle(records, options=FitOptions(age_support=(11, 80)))
        assert fit.converged
        assert fit.gradient_norm < 1e-6
        target = np.array([1.57, 9.09, -0.11, 0.0015])
        reported_se = np.array([0.03, 0.92, 0.04, 0.0005])
        assert np.all(np.abs(np.array(fit.estimates) - target) <= 3.0 * reported_se)
        assert fit.standard_errors is not None
        # curvature-based SEs should sit near the reported magnitudes
        np.testing.assert_allclose(fit.standard_errors, reported_se, rtol=0.6)

    def test_constant_age_is_rejected_as_unidentifiable(self):
        rng = np.random.default_rng(30)
        z = np.ceil(TABLE_MODEL.sample(np.full(100, 40.0), rng))
        with pytest.raises(ValueError, match="singular"):
            fit_mle(np.column_stack([np.full(100, 40.0), z]))

    def test_minimum_data_guard(self):
        records = _synthetic_records(seed=31, n=10)
        with pytest.raises(ValueError, match="at least 20"):
            fit_mle(records)

    def test_scenario1_refit_quantiles_close_to_truth(self):
        # 1e4 records entering the fit (a 2e5 sample at 5% prevalence)
        ds = generate_dataset(scenario(1), 200_000, seed=100)
        fit = fit_mle(ds.mle_records(), options=FitOptions(age_support=(10, 80)))
        ages = np.arange(10, 81, dtype=float)
        est_q = conditional_quantile(fit.model, ages, 0.95)
        true_scale = 4.5 + 0.0025 * (ages - 30.0) ** 2
        true_q = true_scale * (-math.log(0.05)) ** (1.0 / 1.5)
        assert np.max(np.abs(est_q - true_q)) < 0.5

    def test_recentering_equivariance(self):
        records = _synthetic_records(seed=33, n=800)
        fit0 = fit_mle(records, options=FitOptions(age_support=(11, 80), age_center=0.0))
        fit40 = fit_mle(records, options=FitOptions(age_support=(11, 80), age_center=40.0))
        ages = np.arange(11, 81, dtype=float)
        ys = np.linspace(0.5, 30.0, 60)
        cdf0 = conditional_cdf(fit0.model, ages[:, None], ys[None, :])
        cdf40 = conditional_cdf(fit40.model, ages[:, None], ys[None, :])
        np.testing.assert_allclose(cdf0, cdf40, atol=1e-6)

    def test_continuous_likelihood_option(self):
        rng = np.random.default_rng(34)
        ages = np.clip(
            np.rint(truncnormal_sample(TruncNormalParams(55, 625, 10, 80), rng, 600)), 11, 80
        )
        y = TABLE_MODEL.sample(ages, rng)
        fit = fit_mle(
            np.column_stack([ages, y]),
            options=FitOptions(likelihood="continuous", age_support=(11, 80)),
        )
        assert fit.converged
        assert abs(fit.model.shape - 1.57) < 0.2
        assert fit.log_likelihood == pytest.approx(
            continuous_loglik(fit.model, np.column_stack([ages, y])), rel=1e-12
        )

    def test_report_json_roundtrip(self):
        records = _synthetic_records(seed=35, n=400)
        fit = fit_mle(records, options=FitOptions(age_support=(11, 80)))
        back = FitReport.from_json(fit.to_json())
        assert back.model == fit.model
        assert back.standard_errors == pytest.approx(fit.standard_errors)
        payload = json.loads(fit.to_json())
        assert payload["parameters"] == ["shape", "gamma1", "gamma2", "gamma3"]
        assert len(payload["estimates"]) == 4


class TestConditionalOps:
    def test_scale_arithmetic_at_40(self):
        # 9.09 - 0.11*40 + 0.0015*1600 = 7.09 days
        assert TABLE_MODEL.scale_at(40.0) == pytest.approx(7.09, abs=1e-12)

    def test_cdf_zero_at_zero(self):
        assert conditional_cdf(TABLE_MODEL, 40.0, 0.0) == 0.0

    def test_quantile_closed_form_vs_cdf_bisection(self):
        p = 0.95
        q = conditional_quantile(TABLE_MODEL, 40.0, p)
        assert q == pytest.approx(7.09 * (-math.log(0.05)) ** (1 / 1.57), rel=1e-12)
        lo, hi = 0.0, 60.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if conditional_cdf(TABLE_MODEL, 40.0, mid) < p:
                lo = mid
            else:
                hi = mid
        assert q == pytest.approx(lo, abs=1e-9)

    def test_age_support_enforced(self):
        with pytest.raises(ValueError, match="support"):
            conditional_pdf(TABLE_MODEL, 90.0, 5.0)

    def test_invalid_scale_rejected_at_construction(self):
        with pytest.raises(ValueError, match="nonpositive"):
            ConditionalIncubationModel(1.5, (1.0, -0.5, 0.0), age_support=(11, 80))
