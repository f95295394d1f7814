"""File formats and data ingestion.

CSV outputs carry "#" provenance header lines (version, config hash,
seed) and are read back with those lines skipped. JSON outputs carry the
same fields under a "_provenance" key. Nothing written here includes a
timestamp: rerunning a command with the same inputs must produce
byte-identical files.

Ingestion standardizes continuous covariates to mean zero and unit
standard deviation, centers binary covariates, and rescales coordinates
so the larger map dimension spans [-1, 1]. The fitted-scale transform is
kept alongside the draws so reports can map coefficients back.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import DataError, RequestError
from .model import Dataset
from .sampler import PosteriorDraws
from .spatial import CoordTransform, normalize_coords

_RESERVED = ("id", "time", "event", "w", "coord_x", "coord_y")


def provenance_line(config_hash: str, seed: int) -> str:
    return f"# spatialsurv version={__version__} config_hash={config_hash} seed={seed}"


def provenance_dict(config_hash: str, seed: int) -> dict:
    return {"version": __version__, "config_hash": config_hash, "seed": int(seed)}


def _write_csv(path: Path, frame: pd.DataFrame, provenance: str | None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if provenance:
            fh.write(provenance + "\n")
        # shortest round-trip repr so reading back reproduces exact values
        frame.to_csv(fh, index=False, float_format=lambda v: repr(float(v)))


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        # round_trip parsing pairs with the writer's exact float repr
        return pd.read_csv(path, comment="#", float_precision="round_trip")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"malformed CSV {path}: {exc}") from exc


def _write_json(path: Path, payload: dict, provenance: dict | None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if provenance is not None:
        payload = {"_provenance": provenance, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class CovariateTransform:
    """Affine standardization applied at ingestion.

    standardized = (raw - center) / scale per column; binary columns get
    scale 1 (centered only). Slope covariate w is standardized like a
    continuous column.
    """

    x_center: np.ndarray
    x_scale: np.ndarray
    w_center: float
    w_scale: float
    binary: np.ndarray

    def to_dict(self) -> dict:
        return {
            "x_center": self.x_center.tolist(),
            "x_scale": self.x_scale.tolist(),
            "w_center": self.w_center,
            "w_scale": self.w_scale,
            "binary": self.binary.astype(bool).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateTransform":
        return cls(
            x_center=np.asarray(d["x_center"], dtype=float),
            x_scale=np.asarray(d["x_scale"], dtype=float),
            w_center=float(d["w_center"]),
            w_scale=float(d["w_scale"]),
            binary=np.asarray(d["binary"], dtype=bool),
        )


def _is_binary(col: np.ndarray) -> bool:
    return bool(np.all(np.isin(col, (0.0, 1.0))))


def standardize(X: np.ndarray, w: np.ndarray) -> tuple:
    """Center/scale covariates; returns (X_std, w_std, transform)."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    p = X.shape[1]
    center = X.mean(axis=0)
    scale = np.ones(p)
    binary = np.zeros(p, dtype=bool)
    for i in range(p):
        if _is_binary(X[:, i]):
            binary[i] = True
        else:
            s = X[:, i].std()
            scale[i] = s if s > 0 else 1.0
    w_center = float(w.mean())
    w_sd = float(w.std())
    w_scale = w_sd if w_sd > 0 else 1.0
    tr = CovariateTransform(center, scale, w_center, w_scale, binary)
    return (X - center) / scale, (w - w_center) / w_scale, tr


def data_columns(frame: pd.DataFrame) -> list:
    """Names of the x1..xp covariate columns, in order."""
    cols = [c for c in frame.columns if c.startswith("x") and c[1:].isdigit()]
    cols.sort(key=lambda c: int(c[1:]))
    expect = [f"x{i + 1}" for i in range(len(cols))]
    if cols != expect:
        raise DataError(f"covariate columns must be x1..xp without gaps; found {cols}")
    return cols


def validate_data_frame(frame: pd.DataFrame) -> list:
    """Schema and value checks; returns covariate column names.

    Raises DataError naming the offending rows (1-based data rows).
    """
    missing = [c for c in _RESERVED if c not in frame.columns]
    if missing:
        raise DataError(f"data file missing required columns: {', '.join(missing)}")
    xcols = data_columns(frame)
    if not xcols:
        raise DataError("data file has no covariate columns x1..xp")

    def bad_rows(mask) -> str:
        rows = np.flatnonzero(np.asarray(mask)) + 1
        head = ", ".join(str(r) for r in rows[:10])
        more = "" if rows.size <= 10 else f" (+{rows.size - 10} more)"
        return head + more

    times = frame["time"].to_numpy(dtype=float)
    if np.any(~np.isfinite(times) | (times <= 0)):
        raise DataError(f"nonpositive or nonfinite times at rows {bad_rows(~np.isfinite(times) | (times <= 0))}")
    events = frame["event"].to_numpy()
    ev_float = np.asarray(events, dtype=float)
    if np.any(ev_float != np.round(ev_float)) or np.any(ev_float < 0):
        raise DataError(f"event codes must be nonnegative integers; bad rows {bad_rows((ev_float != np.round(ev_float)) | (ev_float < 0))}")
    numeric = frame[["w", "coord_x", "coord_y"] + xcols].to_numpy(dtype=float)
    if np.any(~np.isfinite(numeric)):
        raise DataError(f"nonfinite covariate or coordinate values at rows {bad_rows(~np.isfinite(numeric).all(axis=1))}")
    return xcols


def ingest(frame: pd.DataFrame, m_risks: int | None = None):
    """Validated, standardized model inputs from a raw data frame.

    Returns (Dataset, CovariateTransform, CoordTransform).
    """
    xcols = validate_data_frame(frame)
    times = frame["time"].to_numpy(dtype=float)
    events = frame["event"].to_numpy(dtype=int)
    if m_risks is None:
        m_risks = int(events.max())
        if m_risks < 1:
            raise DataError("all subjects censored; cannot infer number of risks")
    if events.max() > m_risks:
        raise DataError(f"event codes exceed m_risks={m_risks}")
    X_raw = frame[xcols].to_numpy(dtype=float)
    w_raw = frame["w"].to_numpy(dtype=float)
    coords_raw = frame[["coord_x", "coord_y"]].to_numpy(dtype=float)
    X, w, cov_tr = standardize(X_raw, w_raw)
    coords, coord_tr = normalize_coords(coords_raw)
    dataset = Dataset(times=times, events=events, X=X, w=w, coords=coords, m_risks=m_risks)
    return dataset, cov_tr, coord_tr


def data_digest(frame: pd.DataFrame) -> str:
    """Digest identifying the dataset, for cross-store compatibility checks."""
    xcols = data_columns(frame)
    h = hashlib.sha256()
    for col in ("time", "event", "w", "coord_x", "coord_y", *xcols):
        h.update(np.ascontiguousarray(frame[col].to_numpy(dtype=float)).tobytes())
    return h.hexdigest()[:12]


def write_data_csv(path: str | Path, columns: dict, provenance: str) -> None:
    frame = pd.DataFrame(columns)
    frame["event"] = frame["event"].astype(int)
    frame["id"] = frame["id"].astype(int)
    _write_csv(Path(path), frame, provenance)


def read_data_csv(path: str | Path) -> pd.DataFrame:
    frame = _read_csv(Path(path))
    if frame.empty:
        raise DataError(f"{path} contains no data rows")
    return frame


def write_truth_json(path: str | Path, truth, censor_time: float, provenance: dict) -> None:
    payload = {
        "beta": truth.beta.tolist(),
        "beta_w": truth.beta_w.tolist(),
        "gamma": truth.gamma.tolist(),
        "alpha": truth.alpha.tolist(),
        "c": truth.c.tolist(),
        "mixing": truth.mixing.tolist(),
        "latent_tau": [p.tau for p in truth.latent_params],
        "latent_ell": [p.ell for p in truth.latent_params],
        "censor_time": censor_time,
    }
    _write_json(Path(path), payload, provenance)


def write_surfaces_csv(path: str | Path, coords: np.ndarray, theta0: np.ndarray,
                       theta1: np.ndarray, provenance: str) -> None:
    """True surface values at the observed sites, one row per subject."""
    cols = {"coord_x": coords[:, 0], "coord_y": coords[:, 1]}
    for j in range(theta0.shape[0]):
        cols[f"theta0_{j + 1}"] = theta0[j]
        cols[f"theta1_{j + 1}"] = theta1[j]
    _write_csv(Path(path), pd.DataFrame(cols), provenance)


# draws store: directory with draws.csv, loglik.csv, meta.json

def save_draws(store_dir: str | Path, posterior: PosteriorDraws, provenance: dict,
               extra_meta: dict | None = None) -> None:
    store = Path(store_dir)
    store.mkdir(parents=True, exist_ok=True)
    chains, kept, dim = posterior.draws.shape
    chain_col = np.repeat(np.arange(chains), kept)
    draw_col = np.tile(np.arange(kept), chains)
    flat = posterior.draws.reshape(chains * kept, dim)
    frame = pd.DataFrame(flat, columns=posterior.names)
    frame.insert(0, "draw", draw_col)
    frame.insert(0, "chain", chain_col)
    line = provenance_line(provenance["config_hash"], provenance["seed"])
    _write_csv(store / "draws.csv", frame, line)

    n = posterior.loglik.shape[2]
    ll_flat = posterior.loglik.reshape(chains * kept, n)
    ll_frame = pd.DataFrame(ll_flat, columns=[f"ll_{i + 1}" for i in range(n)])
    ll_frame.insert(0, "draw", draw_col)
    ll_frame.insert(0, "chain", chain_col)
    _write_csv(store / "loglik.csv", ll_frame, line)

    meta = dict(posterior.meta)
    if extra_meta:
        meta.update(extra_meta)
    _write_json(store / "meta.json", meta, provenance)


def load_draws(store_dir: str | Path) -> PosteriorDraws:
    store = Path(store_dir)
    meta_path = store / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{store} is not a draws store (missing meta.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    frame = _read_csv(store / "draws.csv")
    if "chain" not in frame.columns or "draw" not in frame.columns:
        raise DataError(f"{store}/draws.csv missing chain/draw columns")
    names = [c for c in frame.columns if c not in ("chain", "draw")]
    chains = int(frame["chain"].max()) + 1
    kept = int(frame["draw"].max()) + 1
    if len(frame) != chains * kept:
        raise DataError(f"{store}/draws.csv has ragged chains")
    draws = frame[names].to_numpy(dtype=float).reshape(chains, kept, len(names))

    ll_frame = _read_csv(store / "loglik.csv")
    ll_names = [c for c in ll_frame.columns if c.startswith("ll_")]
    if len(ll_frame) != chains * kept:
        raise DataError(f"{store}/loglik.csv does not match draws.csv")
    loglik = ll_frame[ll_names].to_numpy(dtype=float).reshape(chains, kept, len(ll_names))
    return PosteriorDraws(names=names, draws=draws, loglik=loglik, meta=meta)


def write_krige_csv(path: str | Path, x: np.ndarray, y: np.ndarray,
                    stats: dict, provenance: str) -> None:
    frame = pd.DataFrame({"x": x, "y": y, "mean": stats["mean"], "sd": stats["sd"],
                          "2.5%": stats["2.5%"], "97.5%": stats["97.5%"]})
    _write_csv(Path(path), frame, provenance)


def write_surface_draws_csv(path: str | Path, x: np.ndarray, y: np.ndarray,
                            draws: np.ndarray, provenance: str) -> None:
    """Per-draw surface values: two site-coordinate rows, then one row per draw."""
    draws = np.atleast_2d(draws)
    q = draws.shape[1]
    if x.shape[0] != q or y.shape[0] != q:
        raise RequestError("surface draws and site coordinates disagree in length")
    site_cols = [f"site_{i + 1}" for i in range(q)]
    body = np.vstack([x, y, draws])
    frame = pd.DataFrame(body, columns=site_cols)
    frame.insert(0, "row", ["x", "y"] + [f"d{i}" for i in range(draws.shape[0])])
    _write_csv(Path(path), frame, provenance)


def read_surface_draws_csv(path: str | Path):
    """Returns (x, y, draws (S, q)) from a per-draw surface file."""
    frame = _read_csv(Path(path))
    if "row" not in frame.columns:
        raise DataError(f"{path} is not a surface draws file (missing row column)")
    site_cols = [c for c in frame.columns if c != "row"]
    rows = frame["row"].astype(str).to_numpy()
    if rows.size < 3 or rows[0] != "x" or rows[1] != "y":
        raise DataError(f"{path} must start with x and y coordinate rows")
    body = frame[site_cols].to_numpy(dtype=float)
    return body[0], body[1], body[2:]


def write_labels_csv(path: str | Path, x: np.ndarray, y: np.ndarray,
                     labels: np.ndarray, probs: np.ndarray, provenance: str) -> None:
    frame = pd.DataFrame({"x": x, "y": y, "label": labels.astype(int), "prob": probs})
    _write_csv(Path(path), frame, provenance)


def write_centers_json(path: str | Path, result, provenance: dict) -> None:
    payload = {
        "K": result.K,
        "centers": result.centers.tolist(),
        "loss_on_means": result.loss_on_means,
        "expected_loss": result.expected_loss,
    }
    _write_json(Path(path), payload, provenance)


def write_geojson(path: str | Path, x: np.ndarray, y: np.ndarray,
                  properties: dict, provenance: dict) -> None:
    """Point FeatureCollection; properties maps name -> per-point array."""
    features = []
    for i in range(x.shape[0]):
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(x[i]), float(y[i])]},
            "properties": {k: float(v[i]) for k, v in properties.items()},
        })
    payload = {"type": "FeatureCollection", "features": features}
    _write_json(Path(path), payload, provenance)


def write_summary_csv(path: str | Path, frame: pd.DataFrame, provenance: str) -> None:
    _write_csv(Path(path), frame, provenance)


def write_diagnostics_json(path: str | Path, table: pd.DataFrame, meta: dict,
                           provenance: dict) -> None:
    payload = {
        "parameters": {
            row["name"]: {"rhat": _jsonable(row["rhat"]), "ess": _jsonable(row["ess"])}
            for _, row in table.iterrows()
        },
        "divergences": meta.get("divergences"),
        "accept_rate": meta.get("accept_rate"),
        "chains": meta.get("chains"),
        "kept_per_chain": (
            meta["iterations"] // meta["thin"]
            if "iterations" in meta and "thin" in meta else None
        ),
    }
    _write_json(Path(path), payload, provenance)


def _jsonable(v):
    v = float(v)
    return None if not np.isfinite(v) else v


def write_waic_json(path: str | Path, report, provenance: dict,
                    comparison: dict | None = None) -> None:
    payload = {"waic": report.waic, "lppd": report.lppd, "p_waic": report.p_waic}
    if comparison is not None:
        payload["comparison"] = comparison
    _write_json(Path(path), payload, provenance)
