"""Run configuration: strict YAML schema, defaults, and hashing.

One YAML file drives every subcommand. Unknown keys are hard errors so a
typo cannot silently fall back to a default; error messages carry the
line of the offending key. The resolved configuration (defaults filled
in) hashes to a short hex digest stamped into every output file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .model import Hyperparameters, ModelSpec, SPATIAL_MODES
from .sampler import SamplerConfig
from .simulate import SimConfig
from .spatial import HsgpConfig

# leaf spec: (type tag, default); sections nest
_SCHEMA = {
    "seed": ("int", 0),
    "output": ("str", "out"),
    "model": {
        "spatial_mode": ("str", "intercept+slope"),
        "k": ("int", 30),
        "hsgp": {
            "m_per_dim": ("int", 32),
            "boundary_factor": ("float", 1.25),
        },
    },
    "hyper": {
        "a_sigma": ("float", 1.0),
        "b_sigma": ("float", 1.0),
        "a0": ("float", 1.0),
        "b0": ("float", 1.0),
        "a_kappa": ("float", 2.0),
        "b_kappa": ("float", 40.0),
        "tau_scale2": ("float", 16.0),
        "a_ell": ("float", 2.0),
        "b_ell": ("float", 1.0),
        "ell_max": ("float", 10.0),
    },
    "sampler": {
        "chains": ("int", 4),
        "warmup": ("int", 1000),
        "iterations": ("int", 4000),
        "thin": ("int", 5),
        "target_accept": ("float", 0.9),
        "max_tree_depth": ("int", 10),
    },
    "simulate": {
        "n": ("int", 225),
        "censoring": ("float", 0.4),
        "p": ("int", 10),
    },
    "krige": {
        "grid": ("intpair", (21, 21)),
        "coords": ("optstr", None),
        "mask": ("optstr", None),
    },
    "cluster": {
        "k": ("int", 3),
    },
}


def _mark(node) -> str:
    return f"line {node.start_mark.line + 1}"


def _scalar_value(node, tag: str, path: str):
    if not isinstance(node, yaml.ScalarNode):
        if tag == "intpair" and isinstance(node, yaml.SequenceNode):
            if len(node.value) != 2:
                raise ConfigError(f"{path}: expected two integers ({_mark(node)})")
            return tuple(int(_scalar_value(c, "int", path)) for c in node.value)
        raise ConfigError(f"{path}: expected a scalar value ({_mark(node)})")
    raw = yaml.safe_load(node.value) if node.value != "" else None
    if tag == "optstr":
        if raw is None:
            return None
        return str(raw)
    if raw is None:
        raise ConfigError(f"{path}: value missing ({_mark(node)})")
    if tag == "int":
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{path}: expected an integer, got {raw!r} ({_mark(node)})")
        return raw
    if tag == "float":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {raw!r} ({_mark(node)})")
        return float(raw)
    if tag == "str":
        return str(raw)
    if tag == "intpair":
        raise ConfigError(f"{path}: expected a pair like [21, 21] ({_mark(node)})")
    raise ConfigError(f"{path}: unsupported value")


def _walk(node, schema: dict, path: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{path or 'top level'}: expected a mapping ({_mark(node)})")
    out = {}
    seen = set()
    for key_node, value_node in node.value:
        key = key_node.value
        here = f"{path}.{key}" if path else key
        if key in seen:
            raise ConfigError(f"duplicate key {here} ({_mark(key_node)})")
        seen.add(key)
        if key not in schema:
            raise ConfigError(f"unknown key {here} ({_mark(key_node)})")
        spec = schema[key]
        if isinstance(spec, dict):
            out[key] = _walk(value_node, spec, here)
        else:
            out[key] = _scalar_value(value_node, spec[0], here)
    return out


def _fill_defaults(data: dict, schema: dict) -> dict:
    out = {}
    for key, spec in schema.items():
        if isinstance(spec, dict):
            out[key] = _fill_defaults(data.get(key, {}), spec)
        elif key in data:
            out[key] = data[key]
        else:
            out[key] = spec[1]
    return out


def _canonical(value):
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in sorted(value.items())}
    if isinstance(value, tuple):
        return [_canonical(v) for v in value]
    return value


def config_hash(resolved: dict) -> str:
    """Short stable digest of the fully resolved configuration."""
    blob = json.dumps(_canonical(resolved), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration plus derived library objects."""

    raw: dict
    path: str | None = None

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output"])

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def model_spec(self) -> ModelSpec:
        m = self.raw["model"]
        mode = m["spatial_mode"]
        if mode not in SPATIAL_MODES:
            raise ConfigError(
                f"model.spatial_mode must be one of {', '.join(SPATIAL_MODES)}; got {mode!r}"
            )
        hsgp = HsgpConfig(m_per_dim=m["hsgp"]["m_per_dim"], boundary_factor=m["hsgp"]["boundary_factor"])
        if m["k"] < 1:
            raise ConfigError("model.k must be >= 1")
        return ModelSpec(spatial_mode=mode, k=m["k"], hsgp=hsgp)

    def hyperparameters(self) -> Hyperparameters:
        h = self.raw["hyper"]
        try:
            return Hyperparameters(
                a_sigma=h["a_sigma"], b_sigma=h["b_sigma"],
                a0=h["a0"], b0=h["b0"],
                a1=h["a_kappa"], b1=h["b_kappa"],
                tau_scale2=h["tau_scale2"],
                a_ell=h["a_ell"], b_ell=h["b_ell"], ell_max=h["ell_max"],
            )
        except ValueError as exc:
            raise ConfigError(f"hyper: {exc}") from exc

    def sampler_config(self, seed_override: int | None = None) -> SamplerConfig:
        s = self.raw["sampler"]
        seed = self.seed if seed_override is None else seed_override
        try:
            return SamplerConfig(
                chains=s["chains"], warmup=s["warmup"], iterations=s["iterations"],
                thin=s["thin"], seed=seed, target_accept=s["target_accept"],
                max_tree_depth=s["max_tree_depth"],
            )
        except ValueError as exc:
            raise ConfigError(f"sampler: {exc}") from exc

    def sim_config(self, seed_override: int | None = None) -> SimConfig:
        s = self.raw["simulate"]
        seed = self.seed if seed_override is None else seed_override
        try:
            return SimConfig(n=s["n"], seed=seed, censoring=s["censoring"], p=s["p"])
        except ValueError as exc:
            raise ConfigError(f"simulate: {exc}") from exc

    def krige_grid(self) -> tuple | None:
        g = self.raw["krige"]["grid"]
        nx, ny = int(g[0]), int(g[1])
        if nx < 2 or ny < 2:
            raise ConfigError("krige.grid sides must be >= 2")
        return nx, ny

    def cluster_k(self) -> int:
        k = self.raw["cluster"]["k"]
        if k < 1:
            raise ConfigError("cluster.k must be >= 1")
        return k


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    data = _walk(node, _SCHEMA, "")
    resolved = _fill_defaults(data, _SCHEMA)
    return RunConfig(raw=resolved, path=str(path))


def default_config() -> RunConfig:
    return RunConfig(raw=_fill_defaults({}, _SCHEMA), path=None)
