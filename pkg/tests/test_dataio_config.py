"""Strict config parsing, file formats, and round trips."""

import json
import re

import numpy as np
import pandas as pd
import pytest

import spatialsurv
from spatialsurv.config import RunConfig, config_hash, default_config, load_config
from spatialsurv.dataio import (
    CovariateTransform,
    data_digest,
    ingest,
    load_draws,
    provenance_dict,
    provenance_line,
    read_data_csv,
    read_surface_draws_csv,
    save_draws,
    standardize,
    validate_data_frame,
    write_centers_json,
    write_data_csv,
    write_diagnostics_json,
    write_geojson,
    write_krige_csv,
    write_labels_csv,
    write_surface_draws_csv,
    write_waic_json,
)
from spatialsurv.diagnostics import waic
from spatialsurv.errors import ConfigError, DataError
from spatialsurv.sampler import PosteriorDraws
from spatialsurv.simulate import SimConfig, generate_dataset

DATE_RE = re.compile(r"\d{4}-\d{2}-\d{2}")


def write_config(tmp_path, text):
    path = tmp_path / "cfg.yaml"
    path.write_text(text, encoding="utf-8")
    return path


class TestConfig:
    def test_defaults(self):
        cfg = default_config()
        assert cfg.seed == 0
        assert cfg.raw["sampler"]["chains"] == 4
        assert cfg.raw["model"]["hsgp"]["m_per_dim"] == 32
        assert cfg.krige_grid() == (21, 21)
        assert cfg.cluster_k() == 3
        spec = cfg.model_spec()
        assert spec.spatial_mode == "intercept+slope"
        assert spec.k == 30
        assert spec.hsgp.boundary_factor == pytest.approx(1.25)

    def test_empty_file_equals_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path, ""))
        assert cfg.raw == default_config().raw
        assert cfg.hash == default_config().hash

    def test_overrides_apply(self, tmp_path):
        cfg = load_config(write_config(tmp_path, (
            "seed: 7\n"
            "model:\n  spatial_mode: intercept\n  k: 12\n"
            "sampler:\n  chains: 2\n  thin: 1\n"
            "krige:\n  grid: [15, 9]\n"
        )))
        assert cfg.seed == 7
        assert cfg.model_spec().spatial_mode == "intercept"
        assert cfg.model_spec().k == 12
        assert cfg.sampler_config().chains == 2
        assert cfg.krige_grid() == (15, 9)
        # untouched sections keep defaults
        assert cfg.raw["hyper"]["a_kappa"] == pytest.approx(2.0)

    def test_hyper_keys_reach_model(self, tmp_path):
        cfg = load_config(write_config(tmp_path, (
            "hyper:\n  a_kappa: 3.5\n  b_kappa: 12.0\n  ell_max: 6.0\n"
        )))
        hyper = cfg.hyperparameters()
        assert hyper.a1 == pytest.approx(3.5)
        assert hyper.b1 == pytest.approx(12.0)
        assert hyper.ell_max == pytest.approx(6.0)

    def test_seed_override(self, tmp_path):
        cfg = load_config(write_config(tmp_path, "seed: 3\n"))
        assert cfg.sampler_config().seed == 3
        assert cfg.sampler_config(seed_override=9).seed == 9
        assert cfg.sim_config(seed_override=9).seed == 9

    def test_unknown_key_names_line(self, tmp_path):
        with pytest.raises(ConfigError, match=r"unknown key samplr \(line 2\)"):
            load_config(write_config(tmp_path, "seed: 1\nsamplr:\n  chains: 2\n"))

    def test_unknown_nested_key(self, tmp_path):
        with pytest.raises(ConfigError, match="sampler.chain "):
            load_config(write_config(tmp_path, "sampler:\n  chain: 2\n"))

    def test_duplicate_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="duplicate key seed"):
            load_config(write_config(tmp_path, "seed: 1\nseed: 2\n"))

    def test_type_errors_name_line(self, tmp_path):
        with pytest.raises(ConfigError, match=r"sampler.chains: expected an integer.*line 2"):
            load_config(write_config(tmp_path, "sampler:\n  chains: four\n"))
        with pytest.raises(ConfigError, match="sampler.chains: expected an integer"):
            load_config(write_config(tmp_path, "sampler:\n  chains: true\n"))

    def test_grid_pair_validation(self, tmp_path):
        with pytest.raises(ConfigError, match="krige.grid"):
            load_config(write_config(tmp_path, "krige:\n  grid: 21\n"))
        with pytest.raises(ConfigError, match="krige.grid"):
            load_config(write_config(tmp_path, "krige:\n  grid: [1, 2, 3]\n"))

    def test_top_level_must_be_mapping(self, tmp_path):
        with pytest.raises(ConfigError, match="expected a mapping"):
            load_config(write_config(tmp_path, "- 1\n- 2\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_hash_format_and_sensitivity(self, tmp_path):
        base = load_config(write_config(tmp_path, "seed: 1\n"))
        assert re.fullmatch(r"[0-9a-f]{12}", base.hash)
        same = load_config(write_config(tmp_path, "seed: 1\n"))
        assert same.hash == base.hash
        other = load_config(write_config(tmp_path, "seed: 2\n"))
        assert other.hash != base.hash

    def test_hash_ignores_key_order(self):
        a = config_hash({"x": 1, "y": 2})
        b = config_hash({"y": 2, "x": 1})
        assert a == b


def sim_frame(n=60, seed=0):
    cols, truth, extras = generate_dataset(SimConfig(n=n, seed=seed))
    return pd.DataFrame(cols), truth, extras


class TestStandardize:
    def test_continuous_centered_and_scaled(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.normal(3.0, 2.0, 200), rng.random(200) < 0.3])
        w = rng.normal(-1.0, 0.5, 200)
        Xs, ws, tr = standardize(X, w)
        assert Xs[:, 0].mean() == pytest.approx(0.0, abs=1e-12)
        assert Xs[:, 0].std() == pytest.approx(1.0, rel=1e-12)
        assert ws.mean() == pytest.approx(0.0, abs=1e-12)
        assert ws.std() == pytest.approx(1.0, rel=1e-12)

    def test_binary_centered_not_scaled(self):
        X = np.column_stack([np.array([0.0, 1, 1, 0, 1]), np.arange(5.0)])
        Xs, _, tr = standardize(X, np.arange(5.0))
        assert tr.binary[0] and not tr.binary[1]
        assert tr.x_scale[0] == 1.0
        np.testing.assert_allclose(Xs[:, 0], X[:, 0] - 0.6)

    def test_constant_column_guard(self):
        X = np.column_stack([np.full(5, 2.5), np.arange(5.0)])
        Xs, ws, tr = standardize(X, np.full(5, 1.0))
        assert tr.x_scale[0] == 1.0
        assert tr.w_scale == 1.0
        np.testing.assert_allclose(Xs[:, 0], 0.0)
        np.testing.assert_allclose(ws, 0.0)

    def test_transform_round_trip_dict(self):
        _, _, tr = standardize(np.random.default_rng(1).normal(size=(20, 3)),
                               np.random.default_rng(2).normal(size=20))
        back = CovariateTransform.from_dict(tr.to_dict())
        np.testing.assert_array_equal(back.x_center, tr.x_center)
        np.testing.assert_array_equal(back.x_scale, tr.x_scale)
        assert back.w_center == tr.w_center
        assert back.w_scale == tr.w_scale
        np.testing.assert_array_equal(back.binary, tr.binary)


class TestValidateIngest:
    def test_valid_frame_passes(self):
        frame, _, _ = sim_frame()
        assert validate_data_frame(frame) == [f"x{i}" for i in range(1, 11)]

    def test_missing_column(self):
        frame, _, _ = sim_frame()
        with pytest.raises(DataError, match="missing required columns: event"):
            validate_data_frame(frame.drop(columns=["event"]))

    def test_bad_times_list_rows(self):
        frame, _, _ = sim_frame()
        frame.loc[1, "time"] = -2.0
        frame.loc[3, "time"] = np.nan
        with pytest.raises(DataError, match=r"rows 2, 4"):
            validate_data_frame(frame)

    def test_fractional_event_codes(self):
        frame, _, _ = sim_frame()
        frame["event"] = frame["event"].astype(float)
        frame.loc[0, "event"] = 1.5
        with pytest.raises(DataError, match="event codes"):
            validate_data_frame(frame)

    def test_nonfinite_covariate(self):
        frame, _, _ = sim_frame()
        frame.loc[4, "x2"] = np.inf
        with pytest.raises(DataError, match="nonfinite"):
            validate_data_frame(frame)

    def test_covariate_gap_rejected(self):
        frame, _, _ = sim_frame()
        with pytest.raises(DataError, match="without gaps"):
            validate_data_frame(frame.drop(columns=["x3"]))

    def test_ingest_standardizes(self):
        frame, _, _ = sim_frame(n=120)
        ds, cov_tr, coord_tr = ingest(frame)
        assert ds.m_risks == 2
        assert ds.n == 120
        np.testing.assert_allclose(ds.X.mean(axis=0), 0.0, atol=1e-10)
        assert ds.X[:, 0].std() == pytest.approx(1.0, rel=1e-12)
        assert np.all(np.abs(ds.coords) <= 1.0 + 1e-12)

    def test_ingest_all_censored(self):
        frame, _, _ = sim_frame()
        frame["event"] = 0
        with pytest.raises(DataError, match="cannot infer"):
            ingest(frame)

    def test_ingest_event_exceeds_m(self):
        frame, _, _ = sim_frame()
        with pytest.raises(DataError, match="exceed"):
            ingest(frame, m_risks=1)


class TestDataCsv:
    def test_round_trip_exact(self, tmp_path):
        cols, _, _ = generate_dataset(SimConfig(n=40, seed=1))
        path = tmp_path / "data.csv"
        write_data_csv(path, cols, provenance_line("abc123", 1))
        frame = read_data_csv(path)
        for key, values in cols.items():
            np.testing.assert_array_equal(frame[key].to_numpy(dtype=float),
                                          np.asarray(values, dtype=float))

    def test_provenance_header_no_timestamps(self, tmp_path):
        cols, _, _ = generate_dataset(SimConfig(n=10, seed=1))
        path = tmp_path / "data.csv"
        write_data_csv(path, cols, provenance_line("abc123def456", 7))
        text = path.read_text(encoding="utf-8")
        first = text.splitlines()[0]
        assert first == f"# spatialsurv version={spatialsurv.__version__} config_hash=abc123def456 seed=7"
        assert sum(line.startswith("#") for line in text.splitlines()) == 1
        assert not DATE_RE.search(text)

    def test_digest_tracks_values_not_ids(self):
        frame, _, _ = sim_frame(n=25)
        base = data_digest(frame)
        assert re.fullmatch(r"[0-9a-f]{12}", base)
        relabeled = frame.copy()
        relabeled["id"] = relabeled["id"] + 100
        assert data_digest(relabeled) == base
        changed = frame.copy()
        changed.loc[0, "w"] += 1e-9
        assert data_digest(changed) != base


def tiny_posterior():
    rng = np.random.default_rng(3)
    names = ["beta1_1", "psi1_0"]
    draws = rng.standard_normal((2, 3, 2))
    loglik = rng.normal(-1.0, 0.1, size=(2, 3, 4))
    meta = {"chains": 2, "iterations": 15, "thin": 5,
            "divergences": [0, 0], "accept_rate": [0.9, 0.92], "seed": 5}
    return PosteriorDraws(names=names, draws=draws, loglik=loglik, meta=meta)


class TestDrawsStore:
    def test_round_trip(self, tmp_path):
        post = tiny_posterior()
        store = tmp_path / "draws"
        save_draws(store, post, provenance_dict("deadbeef0123", 5),
                   extra_meta={"data_digest": "abc"})
        back = load_draws(store)
        assert back.names == post.names
        np.testing.assert_allclose(back.draws, post.draws, rtol=0, atol=0)
        np.testing.assert_allclose(back.loglik, post.loglik, rtol=0, atol=0)
        assert back.meta["data_digest"] == "abc"
        assert back.meta["thin"] == 5
        assert back.meta["_provenance"]["config_hash"] == "deadbeef0123"
        assert not DATE_RE.search((store / "meta.json").read_text())

    def test_missing_meta_rejected(self, tmp_path):
        with pytest.raises(DataError, match="not a draws store"):
            load_draws(tmp_path)

    def test_ragged_chains_rejected(self, tmp_path):
        post = tiny_posterior()
        store = tmp_path / "draws"
        save_draws(store, post, provenance_dict("deadbeef0123", 5))
        lines = (store / "draws.csv").read_text().splitlines()
        (store / "draws.csv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError, match="ragged"):
            load_draws(store)


class TestSurfaceArtifacts:
    def test_surface_draws_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        x, y = rng.random(5), rng.random(5)
        draws = rng.standard_normal((7, 5))
        path = tmp_path / "surf.csv"
        write_surface_draws_csv(path, x, y, draws, provenance_line("aa", 0))
        bx, by, bdraws = read_surface_draws_csv(path)
        np.testing.assert_array_equal(bx, x)
        np.testing.assert_array_equal(by, y)
        np.testing.assert_array_equal(bdraws, draws)
        frame = pd.read_csv(path, comment="#")
        assert list(frame["row"][:2]) == ["x", "y"]
        assert frame["row"].iloc[-1] == "d6"

    def test_surface_draws_reject_other_files(self, tmp_path):
        path = tmp_path / "other.csv"
        pd.DataFrame({"a": [1, 2]}).to_csv(path, index=False)
        with pytest.raises(DataError, match="row column"):
            read_surface_draws_csv(path)

    def test_krige_csv_columns(self, tmp_path):
        path = tmp_path / "k.csv"
        stats = {"mean": np.zeros(3), "sd": np.ones(3),
                 "2.5%": -np.ones(3), "97.5%": np.ones(3)}
        write_krige_csv(path, np.arange(3.0), np.arange(3.0), stats,
                        provenance_line("aa", 0))
        frame = pd.read_csv(path, comment="#")
        assert list(frame.columns) == ["x", "y", "mean", "sd", "2.5%", "97.5%"]

    def test_labels_and_geojson(self, tmp_path):
        x, y = np.array([0.0, 1.0]), np.array([2.0, 3.0])
        labels = np.array([1, 2])
        probs = np.array([0.9, 0.8])
        write_labels_csv(tmp_path / "labels.csv", x, y, labels, probs,
                         provenance_line("aa", 0))
        frame = pd.read_csv(tmp_path / "labels.csv", comment="#")
        assert list(frame.columns) == ["x", "y", "label", "prob"]
        assert frame["label"].dtype.kind == "i"

        write_geojson(tmp_path / "pts.geojson", x, y,
                      {"label": labels, "prob": probs}, provenance_dict("aa", 0))
        payload = json.loads((tmp_path / "pts.geojson").read_text())
        assert payload["type"] == "FeatureCollection"
        assert len(payload["features"]) == 2
        feat = payload["features"][1]
        assert feat["geometry"] == {"type": "Point", "coordinates": [1.0, 3.0]}
        assert feat["properties"]["label"] == 2.0


class TestReportFiles:
    def test_centers_json(self, tmp_path):
        from spatialsurv.cluster import cluster_surface
        draws = np.random.default_rng(5).standard_normal((30, 6)) + np.linspace(-3, 3, 6)
        result = cluster_surface(draws, K=2, seed=0)
        write_centers_json(tmp_path / "centers.json", result, provenance_dict("aa", 0))
        payload = json.loads((tmp_path / "centers.json").read_text())
        assert payload["K"] == 2
        assert len(payload["centers"]) == 2
        assert payload["expected_loss"] >= payload["loss_on_means"]

    def test_diagnostics_json(self, tmp_path):
        table = pd.DataFrame({"name": ["a", "b"], "rhat": [1.01, np.nan],
                              "ess": [150.0, np.nan]})
        meta = {"divergences": [0, 1], "accept_rate": [0.9, 0.88],
                "chains": 2, "iterations": 40, "thin": 5}
        write_diagnostics_json(tmp_path / "d.json", table, meta, provenance_dict("aa", 1))
        payload = json.loads((tmp_path / "d.json").read_text())
        assert payload["parameters"]["a"]["rhat"] == pytest.approx(1.01)
        assert payload["parameters"]["b"]["rhat"] is None
        assert payload["kept_per_chain"] == 8
        assert payload["divergences"] == [0, 1]

    def test_waic_json_with_comparison(self, tmp_path):
        report = waic(np.random.default_rng(6).normal(-1, 0.2, size=(50, 5)))
        write_waic_json(tmp_path / "w.json", report, provenance_dict("aa", 1),
                        comparison={"other": "x", "delta": 1.5})
        payload = json.loads((tmp_path / "w.json").read_text())
        assert set(payload) == {"_provenance", "waic", "lppd", "p_waic", "comparison"}
        assert payload["waic"] == pytest.approx(report.waic)
