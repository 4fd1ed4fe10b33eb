"""Command-line front end: declarative experiment configs, delimited reports.

Exit codes: 0 on success with reports written, 1 on configuration or
validation errors (the diagnostic names the offending key), 2 on numerical
failures (the diagnostic names the failing stage).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    apply_overrides,
    build_family,
    experiment_from_config,
    load_config,
    schema_help,
    validate_config,
)
from .families import (
    CoefficientFamily,
    PotentialFamily,
    ResolutionError,
    validate_ellipticity,
)
from .homogenize import homogenized_tensor
from .linalg import ConvergenceError, NotPositiveDefiniteError
from .sweep import (
    emit_report,
    run_divcurl,
    run_eigen_homog,
    run_eigen_potential,
    run_gamma,
    run_source_homog,
)

_SUBCOMMANDS = {
    "sweep-eigen": "eigen-homog",
    "sweep-source": "source-homog",
    "sweep-potential": "eigen-potential",
    "homogenize": "homogenize",
    "gamma-check": "gamma",
    "divcurl": "divcurl",
    "validate": None,  # accepts any experiment kind
}


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gconv",
        description="G-convergence laboratory: homogenization and spectral "
                    "convergence experiments driven by JSON configs.",
    )
    parser.add_argument("--version", action="version", version=f"gconv {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "sweep-eigen": "eigenvalue sweep of an oscillating pencil vs its limit",
        "sweep-source": "Dirichlet source sweep vs the homogenized solution",
        "sweep-potential": "spectral sweep of a perturbed operator K0 + V_h",
        "homogenize": "compute the limit tensor of a coefficient family",
        "gamma-check": "liminf sampling and affine recovery traces",
        "divcurl": "div-curl pairing trace and flux window averages",
        "validate": "validate a config and its declared family bounds",
    }
    for name, summary in helps.items():
        p = sub.add_parser(
            name, help=summary, epilog=schema_help(_SUBCOMMANDS[name]),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-path config override")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_effective(args):
    raw = load_config(args.config)
    raw = apply_overrides(raw, args.overrides)
    effective = validate_config(raw)
    expected = _SUBCOMMANDS[args.subcommand]
    if expected is not None and effective["experiment"] != expected:
        raise ConfigError(
            f"config key 'experiment': '{effective['experiment']}' does not "
            f"match subcommand '{args.subcommand}' (expected '{expected}')"
        )
    return effective


def _out_path(args, effective, key, default):
    name = effective["output"].get(key) or default
    if name is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _run_validate(args, effective) -> int:
    problems = []
    checked = []
    for key in ("family", "potential", "source"):
        spec = effective.get(key)
        if spec is None:
            continue
        fam = build_family(spec, key)
        if isinstance(fam, CoefficientFamily):
            alpha = spec.get("alpha")
            beta = spec.get("beta")
            for h in (1, 4, 16):
                rep = validate_ellipticity(fam, h, sample_count=2000,
                                           seed=effective["seed"],
                                           alpha=alpha, beta=beta)
                checked.append(rep)
                if not rep.passed:
                    problems.append(
                        f"config key '{key}': ellipticity bound violated at h={h}: "
                        f"min quotient {rep.min_quotient:.6g} vs alpha={rep.alpha:.6g}, "
                        f"max ratio {rep.max_norm_ratio:.6g} vs beta={rep.beta:.6g}"
                    )
        elif isinstance(fam, PotentialFamily):
            x = np.linspace(0.0, 1.0, 4097)
            for h in (1, 4, 16):
                v = fam.values_at(h, x)
                if np.any(v < -1e-12):
                    problems.append(
                        f"config key '{key}': potential takes negative values at h={h}"
                    )
    for rep in checked if args.verbose else []:
        print(f"  {rep.family} h={rep.h}: quotient in [{rep.min_quotient:.6g}, "
              f"{rep.max_norm_ratio:.6g}], declared [{rep.alpha:.6g}, {rep.beta:.6g}]")
    if problems:
        for msg in problems:
            print(f"gconv validate: {msg}", file=sys.stderr)
        return 1
    print(f"gconv validate: config ok ({args.config})")
    return 0


def _run_homogenize(args, effective) -> int:
    fam = build_family(effective["family"], "family")
    tensor = homogenized_tensor(fam, quad_points=effective["quad_points"],
                                cell_resolution=effective["cell_resolution"])
    doc = {
        "kind": "homogenize",
        "tool_version": __version__,
        "config": effective,
        "family": fam.name,
        "tensor": tensor.matrix.tolist(),
        "provenance": tensor.provenance,
        "est_error": tensor.est_error,
    }
    path = _out_path(args, effective, "json", "homogenize.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.verbose:
        print(json.dumps(doc["tensor"]))
    print(f"gconv homogenize: wrote {path}")
    return 0


def main(argv=None) -> int:
    args = _make_parser().parse_args(argv)
    try:
        effective = _load_effective(args)
    except ConfigError as exc:
        print(f"gconv: config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.subcommand == "validate":
            return _run_validate(args, effective)
        if args.subcommand == "homogenize":
            return _run_homogenize(args, effective)

        exp = experiment_from_config(effective)
        if args.subcommand == "gamma-check":
            report = run_gamma(exp)
            trace_path = _out_path(args, effective, "csv", "recovery_trace.csv")
            report.recovery.write_csv(trace_path)
            json_path = _out_path(args, effective, "json", "gamma.json")
            with open(json_path, "w") as fh:
                json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            ok = report.liminf_passed == report.liminf_total
            print(f"gconv gamma-check: liminf {report.liminf_passed}/"
                  f"{report.liminf_total}, wrote {trace_path}, {json_path}")
            if not ok:
                print("gconv: numerical failure at stage 'gamma liminf sampling'",
                      file=sys.stderr)
                return 2
            return 0
        if args.subcommand == "divcurl":
            report = run_divcurl(exp)
            trace_path = _out_path(args, effective, "csv", "divcurl_trace.csv")
            report.trace.write_csv(trace_path)
            json_path = _out_path(args, effective, "json", "divcurl.json")
            with open(json_path, "w") as fh:
                json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            print(f"gconv divcurl: wrote {trace_path}, {json_path}")
            return 0

        runner = {
            "sweep-eigen": run_eigen_homog,
            "sweep-source": run_source_homog,
            "sweep-potential": run_eigen_potential,
        }[args.subcommand]
        report = runner(exp)
        csv_path = _out_path(args, effective, "csv", "report.csv")
        json_path = _out_path(args, effective, "json", "report.json")
        emit_report(report, "csv", csv_path)
        emit_report(report, "json", json_path)
        if args.verbose:
            for rec in report.records:
                print(f"  h={rec.h}: max rel err "
                      f"{float(np.max(rec.rel_errors)):.3e} "
                      f"({rec.wall_clock:.3f}s)")
        print(f"gconv {args.subcommand}: wrote {csv_path}, {json_path}")
        return 0
    except ResolutionError as exc:
        print(f"gconv: numerical failure at stage 'resolution check': {exc}",
              file=sys.stderr)
        return 2
    except NotPositiveDefiniteError as exc:
        print(f"gconv: numerical failure at stage 'factorization': {exc}",
              file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"gconv: numerical failure at stage 'eigensolver': {exc}",
              file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"gconv: config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
