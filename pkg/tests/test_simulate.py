"""Synthetic data generator: determinism, censoring control, marginals."""

import dataclasses

import numpy as np
import pytest

from spatialsurv.errors import DegenerateInputError, InvalidArgumentError
from spatialsurv.simulate import (
    BERNOULLI_RATES,
    SimConfig,
    SimTruth,
    calibrate_censoring,
    default_latent_params,
    default_mixing_matrix,
    default_truth,
    draw_event_times,
    generate_dataset,
    lmc_surfaces,
)


class TestDefaults:
    def test_truth_shapes(self):
        truth = default_truth()
        assert truth.m_risks == 2
        assert truth.p == 10
        assert truth.beta.shape == (2, 10)
        np.testing.assert_array_equal(truth.beta_w, [0.5, -0.7])
        assert truth.mixing.shape == (4, 8)

    def test_mixing_rows_unit_norm(self):
        norms = np.linalg.norm(default_mixing_matrix(), axis=1)
        np.testing.assert_allclose(norms, 1.0, rtol=1e-12)

    def test_latent_params_span_scales(self):
        params = default_latent_params()
        assert len(params) == 8
        assert params[0].tau == pytest.approx(0.3)
        assert params[-1].tau == pytest.approx(1.2)
        assert params[0].ell == pytest.approx(1.5)
        assert params[-1].ell == pytest.approx(0.2)

    def test_truth_is_reproducible(self):
        a, b = default_truth(), default_truth()
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(a.mixing, b.mixing)

    def test_truth_validation(self):
        with pytest.raises(InvalidArgumentError):
            SimTruth(
                beta=np.zeros((2, 3)), beta_w=np.zeros(2),
                gamma=np.array([1.0, -1.0]), alpha=np.ones(2), c=np.zeros(2),
            )
        with pytest.raises(InvalidArgumentError):
            SimTruth(
                beta=np.zeros((2, 3)), beta_w=np.zeros(3),
                gamma=np.ones(2), alpha=np.ones(2), c=np.zeros(2),
            )


class TestCalibrateCensoring:
    def test_hand_case(self):
        # ten times 1..10 at 40% censoring: keep the lowest six
        assert calibrate_censoring(np.arange(1.0, 11.0), 0.4) == 6.0

    def test_achieved_fraction_within_one_over_n(self):
        rng = np.random.default_rng(0)
        for target in (0.2, 0.4, 0.7):
            times = rng.exponential(size=47)
            cut = calibrate_censoring(times, target)
            achieved = (times > cut).mean()
            assert abs(achieved - target) <= 1.0 / 47.0

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            calibrate_censoring(np.arange(1.0, 11.0), 0.0)
        with pytest.raises(DegenerateInputError):
            calibrate_censoring(np.full(10, 2.0), 0.4)


class TestEventTimes:
    def test_survival_matches_closed_form(self):
        # S_j(t) = exp(-gamma_j exp(c_j) t^alpha_j) at eta = 0
        truth = default_truth()
        rng = np.random.default_rng(42)
        times = draw_event_times(truth, np.zeros((200_000, 2)), rng)
        checks = {0: (3.0, 5.0, 8.0), 1: (3.0, 5.0, 9.0)}
        for j, ts in checks.items():
            rate = truth.gamma[j] * np.exp(truth.c[j])
            for t in ts:
                want = np.exp(-rate * t ** truth.alpha[j])
                got = (times[:, j] > t).mean()
                assert abs(got - want) < 0.005

    def test_eta_shift_rescales_times_exactly(self):
        # same exponential draws, so the shift acts deterministically
        truth = default_truth()
        high = draw_event_times(truth, np.full((500, 2), 2.0), np.random.default_rng(1))
        low = draw_event_times(truth, np.full((500, 2), -2.0), np.random.default_rng(1))
        for j in range(2):
            want = np.exp(-4.0 / truth.alpha[j])
            np.testing.assert_allclose(high[:, j] / low[:, j], want, rtol=1e-12)

    def test_validation(self):
        truth = default_truth()
        rng = np.random.default_rng(0)
        with pytest.raises(InvalidArgumentError):
            draw_event_times(truth, np.zeros((5, 3)), rng)
        with pytest.raises(InvalidArgumentError):
            draw_event_times(truth, np.full((5, 2), np.inf), rng)


class TestLmcSurfaces:
    def test_shapes_and_reproducibility(self):
        truth = default_truth()
        coords = np.random.default_rng(3).uniform(-1, 1, size=(15, 2))
        a = lmc_surfaces(coords, truth, np.random.default_rng(7))
        b = lmc_surfaces(coords, truth, np.random.default_rng(7))
        assert a.shape == (4, 15)
        np.testing.assert_array_equal(a, b)

    def test_linear_in_mixing(self):
        truth = default_truth()
        doubled = dataclasses.replace(truth, mixing=2.0 * truth.mixing)
        coords = np.random.default_rng(4).uniform(-1, 1, size=(10, 2))
        a = lmc_surfaces(coords, truth, np.random.default_rng(9))
        b = lmc_surfaces(coords, doubled, np.random.default_rng(9))
        np.testing.assert_allclose(b, 2.0 * a, rtol=1e-12)

    def test_single_site_variance(self):
        # at one point each latent is N(0, tau^2), so the surface variance
        # is the mixing-weighted sum of latent variances
        truth = default_truth()
        rng = np.random.default_rng(5)
        coords = np.array([[0.2, -0.4]])
        reps = np.stack([lmc_surfaces(coords, truth, rng)[:, 0] for _ in range(20_000)])
        taus = np.array([p.tau for p in truth.latent_params])
        want = (truth.mixing**2 * taus**2).sum(axis=1)
        np.testing.assert_allclose(reps.var(axis=0), want, rtol=0.05)

    def test_mismatched_latent_params_rejected(self):
        truth = dataclasses.replace(default_truth(), latent_params=default_latent_params()[:3])
        with pytest.raises(InvalidArgumentError):
            lmc_surfaces(np.zeros((4, 2)), truth, np.random.default_rng(0))


class TestGenerateDataset:
    def test_deterministic(self):
        config = SimConfig(n=80, seed=5)
        cols_a, truth_a, extras_a = generate_dataset(config)
        cols_b, truth_b, extras_b = generate_dataset(config)
        assert cols_a.keys() == cols_b.keys()
        for key in cols_a:
            np.testing.assert_array_equal(cols_a[key], cols_b[key])
        np.testing.assert_array_equal(truth_a.beta, truth_b.beta)
        np.testing.assert_array_equal(extras_a["theta0"], extras_b["theta0"])

    def test_seed_changes_data(self):
        a, _, _ = generate_dataset(SimConfig(n=80, seed=5))
        b, _, _ = generate_dataset(SimConfig(n=80, seed=6))
        assert not np.array_equal(a["time"], b["time"])

    def test_censoring_fraction_exact_when_divisible(self):
        for n in (225, 50):
            cols, _, extras = generate_dataset(SimConfig(n=n, seed=2))
            assert extras["achieved_censoring"] == pytest.approx(0.4)
            assert (cols["event"] == 0).mean() == pytest.approx(0.4)

    def test_censoring_fraction_near_target_otherwise(self):
        _, _, extras = generate_dataset(SimConfig(n=97, seed=3, censoring=0.3))
        assert abs(extras["achieved_censoring"] - 0.3) <= 1.0 / 97.0

    def test_schema_and_ranges(self):
        cols, truth, extras = generate_dataset(SimConfig(n=225, seed=0))
        expected = ["id", "time", "event", "w"] + [f"x{i}" for i in range(1, 11)]
        expected += ["coord_x", "coord_y"]
        assert list(cols.keys()) == expected
        np.testing.assert_array_equal(cols["id"], np.arange(1, 226))
        assert np.all(cols["time"] > 0)
        assert set(np.unique(cols["event"])) == {0, 1, 2}
        for i in range(2, 11):
            assert set(np.unique(cols[f"x{i}"])) <= {0.0, 1.0}
        assert len(set(np.unique(cols["x1"]))) > 2
        assert np.all(np.abs(cols["coord_x"]) <= 1.0)
        assert np.all(np.abs(cols["coord_y"]) <= 1.0)
        assert extras["theta0"].shape == (2, 225)
        assert extras["theta1"].shape == (2, 225)
        assert np.all(cols["time"] <= extras["censor_time"])

    def test_binary_prevalences_roughly_match(self):
        cols, _, _ = generate_dataset(SimConfig(n=2000, seed=8))
        for i, rate in enumerate(BERNOULLI_RATES, start=2):
            assert abs(cols[f"x{i}"].mean() - rate) < 0.05

    def test_too_many_covariates_rejected(self):
        with pytest.raises(InvalidArgumentError):
            generate_dataset(SimConfig(p=11))

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            SimConfig(n=1)
        with pytest.raises(InvalidArgumentError):
            SimConfig(censoring=0.0)
        with pytest.raises(InvalidArgumentError):
            SimConfig(censoring=1.0)
