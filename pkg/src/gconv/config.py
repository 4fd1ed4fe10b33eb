"""Strict JSON configuration schema for experiment runs.

A config is a single JSON object; unknown keys are rejected anywhere in the
document and every reported problem names the offending key.  Overrides use
dotted paths (``solver.eig_tol=1e-8``) with values parsed as JSON and type
checked against the schema.
"""
from __future__ import annotations

import copy
import json

from .families import make_builtin_family
from .sweep import EXPERIMENT_KINDS, ExperimentConfig


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending key."""


# leaf spec: (type tag, default, description); required leaves have default
# REQUIRED.  Type tags: str, int, float, bool, int_list, float_pair, family.
REQUIRED = object()

_FAMILY_SCHEMA = {
    "name": ("str", REQUIRED, "built-in family identifier"),
    "params": ("float_list", [], "numeric family parameters"),
    "alpha": ("float", None, "declared ellipticity lower bound (default: derived)"),
    "beta": ("float", None, "declared upper bound (default: derived)"),
}

_SOLVER_SCHEMA = {
    "eig_tol": ("float", 1e-10, "relative eigen-residual tolerance"),
}

_OUTPUT_SCHEMA = {
    "csv": ("str", None, "CSV report filename (under the output directory)"),
    "json": ("str", None, "JSON report filename"),
}

SCHEMA = {
    "experiment": ("str", REQUIRED,
                   "one of " + ", ".join(EXPERIMENT_KINDS)),
    "seed": ("int", 0, "seed for every randomized probe"),
    "h_list": ("int_list", [4, 8, 16, 32, 64], "ascending frequency ladder"),
    "points_per_period": ("int", 32, "mesh points per oscillation period (>= 16)"),
    "eigen_count": ("int", 3, "number of eigenpairs per rung"),
    "quad_order": ("int", 4, "Gauss points per 1D cell (2D: 1 or 2)"),
    "family": (_FAMILY_SCHEMA, None, "coefficient family spec"),
    "potential": (_FAMILY_SCHEMA, None, "potential family spec"),
    "source": (_FAMILY_SCHEMA, None, "source family spec"),
    "solver": (_SOLVER_SCHEMA, {}, "solver tolerances"),
    "output": (_OUTPUT_SCHEMA, {}, "report filenames"),
    "windows": ("int", 8, "strip count for weak-convergence probes"),
    "phi_support": ("float_pair", [0.25, 0.75], "support of the pairing bump"),
    "affine": ("float_pair", [1.0, 0.0], "recovery probe u(x) = a x + b as [a, b]"),
    "targets": ("int", 20, "random liminf targets"),
    "perturbation_scale": ("float", 0.5, "liminf perturbation amplitude"),
    "cell_resolution": ("int", 128, "2D unit-cell resolution for the limit tensor"),
    "quad_points": ("int", 512, "quadrature subintervals for 1D limit oracles"),
}

_KIND_REQUIRES = {
    "eigen-homog": ("family",),
    "source-homog": ("family", "source"),
    "eigen-potential": ("potential",),
    "gamma": ("potential",),
    "divcurl": ("family", "source"),
    "homogenize": ("family",),
}


def _type_ok(tag, value):
    if tag == "str":
        return isinstance(value, str)
    if tag == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if tag == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tag == "bool":
        return isinstance(value, bool)
    if tag == "int_list":
        return (isinstance(value, list) and len(value) >= 1
                and all(_type_ok("int", v) for v in value))
    if tag == "float_list":
        return isinstance(value, list) and all(_type_ok("float", v) for v in value)
    if tag == "float_pair":
        return (isinstance(value, list) and len(value) == 2
                and all(_type_ok("float", v) for v in value))
    raise AssertionError(f"unknown type tag {tag}")


def _validate_level(data, schema, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"config key '{prefix or '<root>'}': expected an object")
    for key in data:
        if key not in schema:
            path = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"config key '{path}': unknown key")
    out = {}
    for key, (tag, default, _desc) in schema.items():
        path = f"{prefix}.{key}" if prefix else key
        if key in data:
            value = data[key]
            if isinstance(tag, dict):
                if value is None and default is not REQUIRED:
                    out[key] = None
                else:
                    out[key] = _validate_level(value, tag, path)
            elif value is None and default is not REQUIRED:
                out[key] = None
            elif not _type_ok(tag, value):
                raise ConfigError(f"config key '{path}': expected {tag}, got {value!r}")
            else:
                out[key] = copy.deepcopy(value)
        elif default is REQUIRED:
            raise ConfigError(f"config key '{path}': required key missing")
        elif isinstance(tag, dict):
            out[key] = _validate_level(default if default else {}, tag, path) \
                if default is not None else None
        else:
            out[key] = copy.deepcopy(default)
    return out


def validate_config(data: dict) -> dict:
    """Validate a raw config dict, fill defaults, return the effective config."""
    effective = _validate_level(data, SCHEMA, "")
    kind = effective["experiment"]
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"config key 'experiment': unknown kind '{kind}' "
            f"(choose from {', '.join(EXPERIMENT_KINDS)})"
        )
    for req in _KIND_REQUIRES[kind]:
        if effective.get(req) is None:
            raise ConfigError(f"config key '{req}': required for experiment '{kind}'")
    hs = effective["h_list"]
    if hs != sorted(hs) or len(set(hs)) != len(hs):
        raise ConfigError("config key 'h_list': must be strictly ascending")
    if effective["points_per_period"] < 16:
        raise ConfigError("config key 'points_per_period': must be >= 16")
    if effective["eigen_count"] < 1:
        raise ConfigError("config key 'eigen_count': must be >= 1")
    return effective


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config file '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file '{path}': invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file '{path}': top level must be an object")
    return data


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.path=value`` overrides; values parse as JSON, else strings."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}': expected key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = path.split(".")
        schema = SCHEMA
        for i, part in enumerate(parts[:-1]):
            if part not in schema:
                raise ConfigError(f"override key '{'.'.join(parts[: i + 1])}': unknown key")
            tag = schema[part][0]
            if not isinstance(tag, dict):
                raise ConfigError(f"override key '{path}': '{part}' is not an object")
            schema = tag
            node = node.setdefault(part, {})
        leaf = parts[-1]
        if leaf not in schema:
            raise ConfigError(f"override key '{path}': unknown key")
        node[leaf] = value
    return data


def build_family(spec: dict, key: str):
    """Instantiate a family from its config spec, honoring declared bounds."""
    if spec is None:
        return None
    try:
        fam = make_builtin_family(spec["name"], spec.get("params") or [])
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': {exc}") from exc
    return fam


def experiment_from_config(effective: dict) -> ExperimentConfig:
    """Assemble the typed experiment description from an effective config."""
    family = build_family(effective.get("family"), "family")
    potential = build_family(effective.get("potential"), "potential")
    source = build_family(effective.get("source"), "source")
    try:
        return ExperimentConfig(
            kind=effective["experiment"],
            h_list=tuple(effective["h_list"]),
            points_per_period=effective["points_per_period"],
            eigen_count=effective["eigen_count"],
            eig_tol=effective["solver"]["eig_tol"],
            quad_order=effective["quad_order"],
            seed=effective["seed"],
            family=family,
            potential=potential,
            source=source,
            windows=effective["windows"],
            phi_support=tuple(effective["phi_support"]),
            affine=tuple(effective["affine"]),
            targets=effective["targets"],
            perturbation_scale=effective["perturbation_scale"],
            cell_resolution=effective["cell_resolution"],
            quad_points=effective["quad_points"],
            echo=effective,
        )
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from exc


def schema_help(kind: str | None = None) -> str:
    """Render the config keys with types and defaults for --help epilogs."""
    lines = ["config keys:"]

    def walk(schema, prefix):
        for key, (tag, default, desc) in schema.items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(tag, dict):
                walk(tag, path)
            else:
                shown = "required" if default is REQUIRED else f"default {default!r}"
                lines.append(f"  {path} ({tag}, {shown}): {desc}")

    walk(SCHEMA, "")
    if kind:
        req = ", ".join(_KIND_REQUIRES.get(kind, ()))
        if req:
            lines.append(f"required for this subcommand: {req}")
    return "\n".join(lines)
