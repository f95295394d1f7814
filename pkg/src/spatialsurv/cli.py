"""Batch command line: simulate | fit | krige | cluster | diagnose | waic | summarize.

Every subcommand is deterministic given its configuration and seed, and
every output file carries a provenance header (version, config hash,
seed). Exit codes: 0 ok, 2 configuration error, 3 data error, 4 bad
request, 5 numerical failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__
from .cluster import cluster_surface
from .config import RunConfig, default_config, load_config
from .dataio import (
    data_digest,
    ingest,
    load_draws,
    provenance_dict,
    provenance_line,
    read_data_csv,
    read_surface_draws_csv,
    save_draws,
    write_centers_json,
    write_data_csv,
    write_diagnostics_json,
    write_geojson,
    write_krige_csv,
    write_labels_csv,
    write_summary_csv,
    write_surface_draws_csv,
    write_surfaces_csv,
    write_truth_json,
    write_waic_json,
)
from .diagnostics import diagnostics_table, posterior_summary, waic
from .errors import ConfigError, DataError, RequestError, SpatialsurvError
from .model import build_time_grid
from .sampler import PosteriorDraws, fit as run_fit
from .simulate import generate_dataset
from .spatial import (
    CoordTransform,
    HsgpConfig,
    hsgp_basis,
    spectral_weights_batch,
    sum_to_zero,
)


@click.group()
@click.version_option(__version__, prog_name="spatialsurv")
def cli():
    """Spatial competing-risks survival modeling."""


def _config(config_path: str | None) -> RunConfig:
    return load_config(config_path) if config_path else default_config()


def _out_dir(cfg: RunConfig, out: str | None) -> Path:
    path = Path(out) if out else cfg.output_dir
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_grid(grid_str: str) -> tuple:
    parts = grid_str.split(",")
    try:
        nx, ny = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--grid expects NX,NY; got {grid_str!r}") from None
    if nx < 2 or ny < 2:
        raise ConfigError("--grid sides must be >= 2")
    return nx, ny


@cli.command("simulate")
@click.option("--config", "config_path", type=click.Path(), help="YAML config file.")
@click.option("--out", "out", type=click.Path(), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override config seed.")
def cmd_simulate(config_path, out, seed):
    """Generate a synthetic dataset: data.csv, truth.json, surfaces.csv."""
    cfg = _config(config_path)
    out_dir = _out_dir(cfg, out)
    sim = cfg.sim_config(seed_override=seed)
    columns, truth, extras = generate_dataset(sim)
    line = provenance_line(cfg.hash, sim.seed)
    prov = provenance_dict(cfg.hash, sim.seed)
    write_data_csv(out_dir / "data.csv", columns, line)
    write_truth_json(out_dir / "truth.json", truth, extras["censor_time"], prov)
    coords = np.column_stack([columns["coord_x"], columns["coord_y"]])
    write_surfaces_csv(out_dir / "surfaces.csv", coords, extras["theta0"], extras["theta1"], line)
    click.echo(
        f"wrote {out_dir / 'data.csv'}: {sim.n} subjects, "
        f"{extras['achieved_censoring']:.1%} censored"
    )


@cli.command("fit")
@click.option("--config", "config_path", type=click.Path())
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--out", "out", type=click.Path())
@click.option("--seed", type=int, default=None)
def cmd_fit(config_path, data_path, out, seed):
    """Sample the posterior; writes a draws store, diagnostics, and a summary."""
    cfg = _config(config_path)
    out_dir = _out_dir(cfg, out)
    frame = read_data_csv(data_path)
    dataset, cov_tr, coord_tr = ingest(frame)
    spec = cfg.model_spec()
    hyper = cfg.hyperparameters()
    sampler_cfg = cfg.sampler_config(seed_override=seed)
    grid = build_time_grid(float(dataset.times.max()), spec.k)
    posterior = run_fit(dataset, spec, hyper, grid, sampler_cfg)

    raw_coords = frame[["coord_x", "coord_y"]].to_numpy(dtype=float)
    prov = provenance_dict(cfg.hash, sampler_cfg.seed)
    extra = {
        "coord_transform": {"center": coord_tr.center.tolist(), "scale": coord_tr.scale},
        "covariate_transform": cov_tr.to_dict(),
        "data_digest": data_digest(frame),
        "bbox": [
            float(raw_coords[:, 0].min()), float(raw_coords[:, 0].max()),
            float(raw_coords[:, 1].min()), float(raw_coords[:, 1].max()),
        ],
    }
    # merged before summarizing so the fit-time summary carries the same
    # raw-scale coefficient rows a later summarize of the store produces
    posterior.meta.update(extra)
    save_draws(out_dir / "draws", posterior, prov)
    table = diagnostics_table(posterior)
    write_diagnostics_json(out_dir / "diagnostics.json", table, posterior.meta, prov)
    summary = _summary_frame(posterior)
    write_summary_csv(out_dir / "summary.csv", summary, provenance_line(cfg.hash, sampler_cfg.seed))

    worst = table["rhat"].max(skipna=True)
    n_div = sum(posterior.meta["divergences"])
    click.echo(
        f"wrote {out_dir / 'draws'}: {posterior.n_draws} draws, "
        f"max rhat {worst:.3f}, {n_div} divergences"
    )


def _summary_frame(posterior: PosteriorDraws) -> pd.DataFrame:
    frame = posterior_summary(posterior)
    tr = posterior.meta.get("covariate_transform")
    if not tr:
        return frame
    x_scale = np.asarray(tr["x_scale"], dtype=float)
    w_scale = float(tr["w_scale"])
    raw_rows = frame[frame["scale"] == "coef"].copy()
    scales = []
    for name in raw_rows["name"]:
        if name.startswith("beta_w"):
            scales.append(w_scale)
        else:
            scales.append(x_scale[int(name.rsplit("_", 1)[1]) - 1])
    stat_cols = [c for c in frame.columns if c not in ("name", "scale")]
    raw_rows[stat_cols] = raw_rows[stat_cols].to_numpy() / np.asarray(scales)[:, None]
    raw_rows["scale"] = "coef_raw"
    return pd.concat([frame, raw_rows], ignore_index=True)


def _store_transform(meta: dict) -> CoordTransform:
    ct = meta.get("coord_transform")
    if not ct:
        raise DataError("draws store lacks coordinate transform metadata")
    return CoordTransform(center=np.asarray(ct["center"], dtype=float), scale=float(ct["scale"]))


def _load_mask(path: str):
    try:
        from shapely.geometry import shape
    except ImportError as exc:
        raise RequestError("polygon masking requires the shapely package") from exc
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    if payload.get("type") == "FeatureCollection":
        geoms = [shape(f["geometry"]) for f in payload["features"]]
    elif payload.get("type") == "Feature":
        geoms = [shape(payload["geometry"])]
    else:
        geoms = [shape(payload)]
    return geoms


def _grid_points(cfg: RunConfig, grid_str: str | None, meta: dict) -> np.ndarray:
    if grid_str is not None:
        nx, ny = _parse_grid(grid_str)
    elif cfg.raw["krige"]["coords"]:
        coords_file = cfg.raw["krige"]["coords"]
        frame = read_data_csv(coords_file)
        if "coord_x" not in frame.columns or "coord_y" not in frame.columns:
            raise DataError(f"{coords_file} must have coord_x and coord_y columns")
        return frame[["coord_x", "coord_y"]].to_numpy(dtype=float)
    else:
        nx, ny = cfg.krige_grid()
    bbox = meta.get("bbox")
    if not bbox:
        raise DataError("draws store lacks bounding-box metadata")
    xs = np.linspace(bbox[0], bbox[1], nx)
    ys = np.linspace(bbox[2], bbox[3], ny)
    xx, yy = np.meshgrid(xs, ys)
    return np.column_stack([xx.ravel(), yy.ravel()])


def _surface_draws(posterior: PosteriorDraws, phi: np.ndarray, eigvals: np.ndarray):
    """Per-draw surfaces at prediction sites, keyed by surface name.

    Intercept surfaces are centered to zero mean per draw; slope surfaces
    are centered and the fixed slope coefficient added back, so values are
    the total log hazard-ratio effect of a unit increase in w.
    """
    meta = posterior.meta
    mode = meta["spatial_mode"]
    if mode == "none":
        raise RequestError("draws store was fit without spatial terms; nothing to krige")
    idx = {n: i for i, n in enumerate(posterior.names)}
    flat = posterior.draws.reshape(-1, posterior.draws.shape[2])
    mb = meta["m_basis"]
    out = {}
    for j in range(1, meta["m_risks"] + 1):
        blocks = [("0", f"intercept_{j}")]
        if mode == "intercept+slope":
            blocks.append(("1", f"slope_{j}"))
        for tag, name in blocks:
            z = flat[:, [idx[f"z{tag}_{j}_{b}"] for b in range(1, mb + 1)]]
            tau = flat[:, idx[f"tau{tag}_{j}"]]
            ell = flat[:, idx[f"ell{tag}_{j}"]]
            weights = np.sqrt(spectral_weights_batch(eigvals, tau, ell)) * z
            theta = sum_to_zero(weights @ phi.T)
            if tag == "1":
                theta = theta + flat[:, idx[f"beta_w{j}"]][:, None]
            out[name] = theta
    return out


@cli.command("krige")
@click.option("--config", "config_path", type=click.Path())
@click.option("--draws", "draws_dir", type=click.Path(), required=True)
@click.option("--out", "out", type=click.Path())
@click.option("--grid", "grid_str", default=None, help="NX,NY over the data bounding box.")
def cmd_krige(config_path, draws_dir, out, grid_str):
    """Predict surfaces on a grid; writes per-surface stats, draws, GeoJSON."""
    cfg = _config(config_path)
    out_dir = _out_dir(cfg, out)
    posterior = load_draws(draws_dir)
    meta = posterior.meta
    if meta["spatial_mode"] == "none":
        raise RequestError("draws store was fit without spatial terms; nothing to krige")
    coord_tr = _store_transform(meta)
    raw_pts = _grid_points(cfg, grid_str, meta)

    mask_path = cfg.raw["krige"]["mask"]
    if mask_path:
        geoms = _load_mask(mask_path)
        from shapely.geometry import Point

        keep = np.array([any(g.contains(Point(*pt)) for g in geoms) for pt in raw_pts])
        if not keep.any():
            raise RequestError("polygon mask excludes every grid point")
        raw_pts = raw_pts[keep]

    basis_meta = meta.get("basis")
    if not basis_meta:
        raise DataError("draws store lacks basis metadata")
    hcfg = HsgpConfig(
        m_per_dim=basis_meta["m_per_dim"], boundary_factor=basis_meta["boundary_factor"]
    )
    norm_pts = coord_tr.to_normalized(raw_pts)
    basis_new = hsgp_basis(norm_pts, hcfg, L=np.asarray(basis_meta["L"], dtype=float))

    surfaces = _surface_draws(posterior, basis_new.phi, basis_new.eigvals)
    prov = posterior.meta.get("_provenance") or provenance_dict(cfg.hash, meta["seed"])
    line = provenance_line(prov["config_hash"], prov["seed"])
    x, y = raw_pts[:, 0], raw_pts[:, 1]
    for name, draws in surfaces.items():
        stats = {
            "mean": draws.mean(axis=0),
            "sd": draws.std(axis=0, ddof=1),
            "2.5%": np.quantile(draws, 0.025, axis=0),
            "97.5%": np.quantile(draws, 0.975, axis=0),
        }
        write_krige_csv(out_dir / f"{name}.csv", x, y, stats, line)
        write_surface_draws_csv(out_dir / f"{name}_draws.csv", x, y, draws, line)
        write_geojson(out_dir / f"{name}.geojson", x, y, stats, prov)
    click.echo(f"wrote {len(surfaces)} surfaces at {raw_pts.shape[0]} sites to {out_dir}")


@cli.command("cluster")
@click.option("--config", "config_path", type=click.Path())
@click.option("--draws", "draws_path", type=click.Path(), required=True,
              help="Per-draw surface file from the krige step.")
@click.option("--out", "out", type=click.Path())
@click.option("--seed", type=int, default=None)
def cmd_cluster(config_path, draws_path, out, seed):
    """Partition a surface into K risk groups; writes labels.csv, centers.json."""
    cfg = _config(config_path)
    out_dir = _out_dir(cfg, out)
    x, y, draws = read_surface_draws_csv(draws_path)
    k = cfg.cluster_k()
    use_seed = cfg.seed if seed is None else seed
    result = cluster_surface(draws, k, seed=use_seed)
    assigned = result.assignment_probs[np.arange(x.shape[0]), result.labels - 1]
    line = provenance_line(cfg.hash, use_seed)
    prov = provenance_dict(cfg.hash, use_seed)
    write_labels_csv(out_dir / "labels.csv", x, y, result.labels, assigned, line)
    write_centers_json(out_dir / "centers.json", result, prov)
    centers = ", ".join(f"{c:.3f}" for c in result.centers)
    click.echo(f"{k} groups with centers [{centers}]; wrote {out_dir / 'labels.csv'}")


@cli.command("diagnose")
@click.option("--config", "config_path", type=click.Path())
@click.option("--draws", "draws_dir", type=click.Path(), required=True)
@click.option("--out", "out", type=click.Path())
def cmd_diagnose(config_path, draws_dir, out):
    """Convergence report: split rhat, effective sample size, divergences."""
    cfg = _config(config_path)
    out_dir = _out_dir(cfg, out)
    posterior = load_draws(draws_dir)
    table = diagnostics_table(posterior)
    prov = posterior.meta.get("_provenance") or provenance_dict(cfg.hash, posterior.meta["seed"])
    write_diagnostics_json(out_dir / "diagnostics.json", table, posterior.meta, prov)
    finite = table.dropna(subset=["rhat"])
    worst = finite.sort_values("rhat", ascending=False).head(5)
    click.echo(f"{len(table)} parameters; worst rhat:")
    for _, row in worst.iterrows():
        click.echo(f"  {row['name']}: rhat {row['rhat']:.4f}, ess {row['ess']:.0f}")
    n_div = sum(posterior.meta.get("divergences", []))
    click.echo(f"divergences: {n_div}")


def _check_compatible(a: PosteriorDraws, b: PosteriorDraws) -> None:
    da, db = a.meta.get("data_digest"), b.meta.get("data_digest")
    if da and db and da != db:
        raise RequestError("draws stores were fit to different datasets")
    if a.loglik.shape[2] != b.loglik.shape[2]:
        raise RequestError("draws stores disagree on the number of subjects")


@cli.command("waic")
@click.option("--config", "config_path", type=click.Path())
@click.option("--draws", "draws_dir", type=click.Path(), required=True)
@click.option("--compare", "compare_dir", type=click.Path(), default=None,
              help="Second draws store to compare against.")
@click.option("--out", "out", type=click.Path())
def cmd_waic(config_path, draws_dir, compare_dir, out):
    """Predictive criterion; lower is better. Optionally compare two fits."""
    cfg = _config(config_path)
    out_dir = _out_dir(cfg, out)
    posterior = load_draws(draws_dir)
    report = waic(posterior.loglik_matrix())
    comparison = None
    if compare_dir:
        other = load_draws(compare_dir)
        _check_compatible(posterior, other)
        other_report = waic(other.loglik_matrix())
        better = draws_dir if report.waic <= other_report.waic else compare_dir
        comparison = {
            "first": {"store": str(draws_dir), "waic": report.waic},
            "second": {"store": str(compare_dir), "waic": other_report.waic},
            "lower": str(better),
        }
    prov = posterior.meta.get("_provenance") or provenance_dict(cfg.hash, posterior.meta["seed"])
    write_waic_json(out_dir / "waic.json", report, prov, comparison)
    click.echo(f"waic {report.waic:.2f} (lppd {report.lppd:.2f}, p_waic {report.p_waic:.2f})")
    if comparison:
        click.echo(
            f"comparison: {comparison['lower']} has lower waic "
            f"({comparison['first']['waic']:.2f} vs {comparison['second']['waic']:.2f})"
        )


@cli.command("summarize")
@click.option("--config", "config_path", type=click.Path())
@click.option("--draws", "draws_dir", type=click.Path(), required=True)
@click.option("--out", "out", type=click.Path())
def cmd_summarize(config_path, draws_dir, out):
    """Posterior summary table on coefficient and hazard-ratio scales."""
    cfg = _config(config_path)
    out_dir = _out_dir(cfg, out)
    posterior = load_draws(draws_dir)
    summary = _summary_frame(posterior)
    prov = posterior.meta.get("_provenance") or provenance_dict(cfg.hash, posterior.meta["seed"])
    write_summary_csv(out_dir / "summary.csv", summary, provenance_line(prov["config_hash"], prov["seed"]))
    show = summary[summary["scale"] != "coef_raw"]
    click.echo(show.to_string(index=False, max_rows=40))


def main(argv=None) -> int:
    """Entry point with exit-code mapping; returns instead of raising."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except SpatialsurvError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.exceptions.Abort:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
