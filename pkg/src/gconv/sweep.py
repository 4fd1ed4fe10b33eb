"""Convergence sweeps over dyadic h with homogenized references and rates.

Each experiment walks an ascending ladder of frequencies h, solves the
h-dependent problem on a mesh coupled to the oscillation (delta = 1/(m h)
with m sample points per period), and measures errors against a reference
computed from the limit operator on the finest mesh of the ladder, so the
reported errors measure the operator convergence rather than the
discretization.  Reports serialize to CSV (one row per h and mode) and to
JSON with the effective config echoed for reproducibility.
"""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, assembly
from .families import (
    ConstantMatrixCoefficient,
    PotentialFamily,
    make_builtin_family,
)
from .homogenize import homogenized_tensor
from .linalg import CLUSTER_GAP, cholesky, eig_smallest
from .mesh import DIRICHLET, FeSpace, build_interval_mesh, build_rect_mesh, build_space
from .variational import _limit_weight

EXPERIMENT_KINDS = ("eigen-homog", "source-homog", "eigen-potential",
                    "gamma", "divcurl", "homogenize")

MAX_DOFS = 1_000_000


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated description of one experiment run."""

    kind: str
    h_list: tuple
    points_per_period: int = 32
    eigen_count: int = 3
    eig_tol: float = 1e-10
    quad_order: int = 4
    seed: int = 0
    family: object = None          # coefficient family, when the kind needs one
    potential: object = None
    source: object = None
    windows: int = 8
    phi_support: tuple = (0.25, 0.75)
    affine: tuple = (1.0, 0.0)
    targets: int = 20
    perturbation_scale: float = 0.5
    cell_resolution: int = 128
    quad_points: int = 512
    echo: dict = field(default_factory=dict)

    def __post_init__(self):
        hs = [int(h) for h in self.h_list]
        if hs and hs != sorted(hs):
            raise ValueError("h_list must be ascending")
        if self.points_per_period < 16:
            raise ValueError("points_per_period must be >= 16")
        if self.eigen_count < 1:
            raise ValueError("eigen_count must be >= 1")
        if hs:
            dim = getattr(self.family, "dim", 1)
            n = self.points_per_period * max(hs)
            dofs = n if dim == 1 else n * n
            if dofs > MAX_DOFS:
                raise ValueError(
                    f"mesh of {dofs} dofs exceeds the budget of {MAX_DOFS}"
                )
        object.__setattr__(self, "h_list", tuple(hs))


@dataclass(eq=False)
class SweepRecord:
    """Per-h results of a sweep."""

    h: int
    values: np.ndarray
    abs_errors: np.ndarray
    rel_errors: np.ndarray
    residuals: np.ndarray | None = None
    vector_errors: np.ndarray | None = None
    limit_residuals: np.ndarray | None = None
    wall_clock: float = 0.0


@dataclass(eq=False)
class RateFit:
    """Least-squares slope of log(error) against log(1/h)."""

    slope: float
    intercept: float
    n_used: int
    excluded: tuple = ()


@dataclass(eq=False)
class SweepReport:
    """Full sweep output: per-h records, references, fitted rates."""

    kind: str
    h_values: tuple
    records: list
    reference: np.ndarray
    reference_meta: dict
    rates: list
    config_echo: dict
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tool_version": self.tool_version,
            "config": self.config_echo,
            "h_values": list(self.h_values),
            "reference": _jsonify(self.reference),
            "reference_meta": _jsonify(self.reference_meta),
            "rates": [
                {"slope": r.slope, "intercept": r.intercept,
                 "n_used": r.n_used, "excluded": list(r.excluded)}
                for r in self.rates
            ],
            "records": [
                {
                    "h": rec.h,
                    "values": _jsonify(rec.values),
                    "abs_errors": _jsonify(rec.abs_errors),
                    "rel_errors": _jsonify(rec.rel_errors),
                    "residuals": _jsonify(rec.residuals),
                    "vector_errors": _jsonify(rec.vector_errors),
                    "limit_residuals": _jsonify(rec.limit_residuals),
                    "wall_clock": rec.wall_clock,
                }
                for rec in self.records
            ],
        }


def _jsonify(obj):
    if obj is None:
        return None
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _worker_count(n_tasks: int) -> int:
    cap = os.environ.get("GCONV_THREADS", "1")
    try:
        cap = max(1, int(cap))
    except ValueError:
        cap = 1
    return min(cap, n_tasks)


def _map_ordered(fn, items):
    workers = _worker_count(len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _build_space(dim: int, n: int) -> FeSpace:
    if dim == 1:
        return build_space(build_interval_mesh(n), DIRICHLET)
    return build_space(build_rect_mesh(n, n), DIRICHLET)


def interpolate_between(space_from: FeSpace, u: np.ndarray,
                        space_to: FeSpace) -> np.ndarray:
    """P1 interpolation of a coarse-space function onto a finer space.

    Both spaces must discretize the same structured domain; Dirichlet
    boundary values are zero on both sides.
    """
    mesh = space_from.mesh
    coords = space_to.dof_coordinates()
    if mesh.dimension == 1:
        full = np.zeros(mesh.num_vertices)
        full[space_from.dof_vertices] = u
        return np.interp(coords, mesh.vertices, full)
    _, nx, ny, x0, x1, y0, y1 = mesh.structure
    full = np.zeros(mesh.num_vertices)
    full[space_from.dof_vertices] = u
    grid = full.reshape(nx + 1, ny + 1)
    dx = (x1 - x0) / nx
    dy = (y1 - y0) / ny
    gx = np.clip((coords[:, 0] - x0) / dx, 0.0, nx * (1 - 1e-15))
    gy = np.clip((coords[:, 1] - y0) / dy, 0.0, ny * (1 - 1e-15))
    i = np.floor(gx).astype(int)
    j = np.floor(gy).astype(int)
    xi = gx - i
    eta = gy - j
    lower = xi >= eta  # below the fixed diagonal of each grid square
    v00 = grid[i, j]
    v10 = grid[i + 1, j]
    v11 = grid[i + 1, j + 1]
    v01 = grid[i, j + 1]
    vals_low = v00 * (1.0 - xi) + v10 * (xi - eta) + v11 * eta
    vals_up = v00 * (1.0 - eta) + v11 * xi + v01 * (eta - xi)
    return np.where(lower, vals_low, vals_up)


def _clusters(values: np.ndarray):
    """Group indices of near-equal eigenvalues (relative gap < CLUSTER_GAP)."""
    groups = [[0]]
    for i in range(1, values.size):
        if values[i] - values[i - 1] <= CLUSTER_GAP * max(abs(values[i]), 1e-30):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def eigenvector_errors(space_h: FeSpace, vectors_h: np.ndarray,
                       space_ref: FeSpace, vectors_ref: np.ndarray,
                       mass_ref, ref_values: np.ndarray) -> np.ndarray:
    """L2 distances between eigenvectors after sign alignment.

    Vectors are interpolated onto the reference space and normalized in the
    reference mass norm.  Inside a degenerate cluster the individual vectors
    are not comparable, so every vector of the cluster is scored by the
    principal-angle distance between the spanned subspaces.
    """
    k = vectors_h.shape[1]
    interp = np.column_stack([
        interpolate_between(space_h, vectors_h[:, j], space_ref)
        for j in range(k)
    ])
    for j in range(k):
        nrm = np.sqrt(interp[:, j] @ (mass_ref @ interp[:, j]))
        if nrm > 0:
            interp[:, j] /= nrm
    errors = np.empty(k)
    for group in _clusters(ref_values[:k]):
        idx = np.asarray(group)
        if idx.size == 1:
            j = idx[0]
            ref = vectors_ref[:, j]
            vec = interp[:, j]
            if vec @ (mass_ref @ ref) < 0:
                vec = -vec
            diff = vec - ref
            errors[j] = np.sqrt(max(diff @ (mass_ref @ diff), 0.0))
        else:
            Xr = vectors_ref[:, idx]
            Xh = interp[:, idx]
            overlap = Xr.T @ (mass_ref @ Xh)
            s = np.clip(np.linalg.svd(overlap, compute_uv=False), 0.0, 1.0)
            errors[idx] = np.sqrt(max(0.0, 2.0 * idx.size - 2.0 * np.sum(s)))
    return errors


def fit_rate(h_values, errors) -> RateFit:
    """Slope of log(error) vs log(1/h): errors c/h^p fit to slope p."""
    h_values = np.asarray(h_values, dtype=float)
    errors = np.asarray(errors, dtype=float)
    usable = errors > 0.0
    excluded = tuple(int(h) for h in h_values[~usable])
    if np.count_nonzero(usable) < 3:
        raise ValueError(
            f"fit_rate needs >= 3 points with positive errors, "
            f"got {int(np.count_nonzero(usable))}"
        )
    x = np.log(1.0 / h_values[usable])
    y = np.log(errors[usable])
    slope, intercept = np.polyfit(x, y, 1)
    return RateFit(float(slope), float(intercept),
                   int(np.count_nonzero(usable)), excluded)


def _reference_pencil(config: ExperimentConfig, dim: int):
    """Homogenized tensor and the constant-coefficient pencil on the finest mesh."""
    tensor = homogenized_tensor(config.family,
                                quad_points=config.quad_points,
                                cell_resolution=config.cell_resolution)
    if dim == 1:
        limit_family = make_builtin_family("const", [float(tensor.matrix[0, 0])])
    else:
        limit_family = ConstantMatrixCoefficient(tensor.matrix)
    n_fine = config.points_per_period * max(config.h_list)
    space = _build_space(dim, n_fine)
    K = assembly.assemble_stiffness(space, limit_family, h=1,
                                    quad_order=config.quad_order)
    M = assembly.assemble_mass(space, quad_order=config.quad_order)
    return tensor, limit_family, space, K, M


def run_eigen_homog(config: ExperimentConfig) -> SweepReport:
    """Eigenvalue sweep of the oscillating pencil against its homogenized limit."""
    family = config.family
    if family is None or getattr(family, "limit_oracle", "none") == "none":
        raise ValueError("eigen-homog needs a coefficient family with a limit oracle")
    dim = family.dim
    k = config.eigen_count
    tensor, _, space_ref, K_ref, M_ref = _reference_pencil(config, dim)
    ref = eig_smallest(K_ref, M_ref, k, tol=config.eig_tol)

    def one(h):
        t0 = time.perf_counter()
        space = _build_space(dim, config.points_per_period * h)
        K = assembly.assemble_stiffness(space, family, h=h,
                                        quad_order=config.quad_order)
        M = assembly.assemble_mass(space, quad_order=config.quad_order)
        eig = eig_smallest(K, M, k, tol=config.eig_tol)
        vec_err = eigenvector_errors(space, eig.vectors, space_ref,
                                     ref.vectors, M_ref, ref.values)
        abs_err = np.abs(eig.values - ref.values)
        return SweepRecord(
            h=h, values=eig.values, abs_errors=abs_err,
            rel_errors=abs_err / np.abs(ref.values),
            residuals=eig.residuals, vector_errors=vec_err,
            wall_clock=time.perf_counter() - t0,
        )

    records = _map_ordered(one, list(config.h_list))
    rates = _rates_per_mode(config.h_list, records, k)
    meta = {
        "tensor": tensor.matrix,
        "provenance": tensor.provenance,
        "tensor_est_error": tensor.est_error,
        "finest_cells": config.points_per_period * max(config.h_list),
    }
    return SweepReport("eigen-homog", config.h_list, records, ref.values,
                       meta, rates, dict(config.echo))


def run_source_homog(config: ExperimentConfig) -> SweepReport:
    """Dirichlet source sweep: solutions against the homogenized solution.

    Record values hold the L2 distance to the reference (mode 0) followed by
    window averages of the first gradient component, the weak-H1 probes.
    """
    family, source = config.family, config.source
    if family is None or source is None:
        raise ValueError("source-homog needs a coefficient family and a source")
    dim = family.dim
    tensor, limit_family, space_ref, K_ref, M_ref = _reference_pencil(config, dim)
    b_ref = assembly.assemble_load(space_ref, source, h=max(config.h_list),
                                   quad_order=config.quad_order)
    u_star = cholesky(K_ref).solve(b_ref)
    ref_norm = float(np.sqrt(u_star @ (M_ref @ u_star)))
    edges = np.linspace(0.0, 1.0, config.windows + 1)
    ref_probes = _window_gradient(space_ref, u_star, edges, config.quad_order)

    def one(h):
        t0 = time.perf_counter()
        space = _build_space(dim, config.points_per_period * h)
        K = assembly.assemble_stiffness(space, family, h=h,
                                        quad_order=config.quad_order)
        b = assembly.assemble_load(space, source, h=h,
                                   quad_order=config.quad_order)
        u_h = cholesky(K).solve(b)
        u_on_ref = interpolate_between(space, u_h, space_ref)
        diff = u_on_ref - u_star
        l2_err = float(np.sqrt(max(diff @ (M_ref @ diff), 0.0)))
        probes = _window_gradient(space, u_h, edges, config.quad_order)
        values = np.concatenate([[l2_err], probes])
        reference = np.concatenate([[0.0], ref_probes])
        abs_err = np.abs(values - reference)
        rel = np.empty_like(abs_err)
        rel[0] = l2_err / ref_norm
        denom = np.where(np.abs(ref_probes) > 0, np.abs(ref_probes), 1.0)
        rel[1:] = abs_err[1:] / denom
        return SweepRecord(h=h, values=values, abs_errors=abs_err,
                           rel_errors=rel, wall_clock=time.perf_counter() - t0)

    records = _map_ordered(one, list(config.h_list))
    n_modes = config.windows + 1
    rates = _rates_per_mode(config.h_list, records, n_modes)
    meta = {
        "tensor": tensor.matrix,
        "provenance": tensor.provenance,
        "reference_l2_norm": ref_norm,
        "window_edges": edges,
    }
    reference = np.concatenate([[0.0], ref_probes])
    return SweepReport("source-homog", config.h_list, records, reference,
                       meta, rates, dict(config.echo))


def _window_gradient(space, u, edges, quad_order):
    """Strip averages of the first gradient component (weak-H1 probes)."""
    _, measure, _ = assembly._cell_geometry(space)
    pts, gw, _ = assembly._quad_points(space, quad_order)
    grad = assembly.cell_gradients(space, u)[:, 0]
    xq = pts if space.mesh.dimension == 1 else pts[..., 0]
    bins = np.clip(np.searchsorted(edges, xq, side="right") - 1,
                   0, len(edges) - 2)
    w = gw[:, None] * measure[None, :]
    sums = np.zeros(len(edges) - 1)
    vols = np.zeros(len(edges) - 1)
    np.add.at(vols, bins.ravel(), w.ravel())
    np.add.at(sums, bins.ravel(), (w * grad[None, :]).ravel())
    return sums / vols


def run_eigen_potential(config: ExperimentConfig) -> SweepReport:
    """Spectral sweep of the perturbed operator K0 + V_h against K0 + V.

    Also records, per h, the residual of each converged eigenpair in the
    limit problem on the finest mesh, which must decay with h.
    """
    potential = config.potential
    if potential is None:
        raise ValueError("eigen-potential needs a potential family")
    dim = 1
    k = config.eigen_count
    n_fine = config.points_per_period * max(config.h_list)
    space_ref = _build_space(dim, n_fine)
    unit = make_builtin_family("const", [1.0])
    K0_ref = assembly.assemble_stiffness(space_ref, unit, h=1,
                                         quad_order=config.quad_order)
    M_ref = assembly.assemble_mass(space_ref, quad_order=config.quad_order)
    V_ref = assembly.assemble_mass(space_ref, _limit_weight(potential), h=1,
                                   quad_order=config.quad_order)
    H_ref = (K0_ref + V_ref).tocsr()
    ref = eig_smallest(H_ref, M_ref, k, tol=config.eig_tol)

    def one(h):
        t0 = time.perf_counter()
        space = _build_space(dim, config.points_per_period * h)
        K0 = assembly.assemble_stiffness(space, unit, h=1,
                                         quad_order=config.quad_order)
        V = assembly.assemble_mass(space, potential, h=h,
                                   quad_order=config.quad_order)
        eig = eig_smallest((K0 + V).tocsr(), assembly.assemble_mass(
            space, quad_order=config.quad_order), k, tol=config.eig_tol)
        vec_err = eigenvector_errors(space, eig.vectors, space_ref,
                                     ref.vectors, M_ref, ref.values)
        limit_res = np.empty(k)
        for j in range(k):
            x = interpolate_between(space, eig.vectors[:, j], space_ref)
            xm = np.sqrt(max(x @ (M_ref @ x), np.finfo(float).tiny))
            r = H_ref @ x - eig.values[j] * (M_ref @ x)
            limit_res[j] = float(np.linalg.norm(r) / (eig.values[j] * xm))
        abs_err = np.abs(eig.values - ref.values)
        return SweepRecord(
            h=h, values=eig.values, abs_errors=abs_err,
            rel_errors=abs_err / np.abs(ref.values),
            residuals=eig.residuals, vector_errors=vec_err,
            limit_residuals=limit_res,
            wall_clock=time.perf_counter() - t0,
        )

    records = _map_ordered(one, list(config.h_list))
    rates = _rates_per_mode(config.h_list, records, k)
    meta = {
        "potential": potential.name,
        "convergence_class": potential.convergence,
        "finest_cells": n_fine,
    }
    return SweepReport("eigen-potential", config.h_list, records, ref.values,
                       meta, rates, dict(config.echo))


@dataclass(eq=False)
class GammaReport:
    """Liminf sampling summary plus the affine recovery trace."""

    kind: str
    h_values: tuple
    liminf_passed: int
    liminf_total: int
    liminf_margins: np.ndarray     # tail_min + slack - limit_value per target
    recovery: object               # PairingTrace
    config_echo: dict
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tool_version": self.tool_version,
            "config": self.config_echo,
            "h_values": list(self.h_values),
            "liminf": {
                "passed": self.liminf_passed,
                "total": self.liminf_total,
                "margins": _jsonify(self.liminf_margins),
            },
            "recovery": {
                "values": _jsonify(self.recovery.values),
                "limit": self.recovery.limit,
                "abs_errors": _jsonify(self.recovery.abs_errors),
            },
        }


def run_gamma(config: ExperimentConfig) -> GammaReport:
    """Sample the liminf inequality and trace the affine recovery sequence."""
    from .variational import liminf_check, recovery_check

    potential = config.potential
    if potential is None:
        raise ValueError("gamma needs a potential family")
    n_fine = config.points_per_period * max(config.h_list)
    space = _build_space(1, n_fine)
    unit = make_builtin_family("const", [1.0])
    K0 = assembly.assemble_stiffness(space, unit, h=1, quad_order=config.quad_order)
    M = assembly.assemble_mass(space, quad_order=config.quad_order)
    rng = np.random.default_rng(config.seed)
    margins = np.empty(config.targets)
    passed = 0
    for t in range(config.targets):
        u = rng.normal(size=space.num_dofs)
        u /= np.sqrt(u @ (M @ u))
        rep = liminf_check(space, K0, potential, config.h_list, u,
                           config.perturbation_scale, seed=config.seed + 1 + t,
                           quad_order=config.quad_order)
        margins[t] = rep.tail_min + rep.slack * max(1.0, abs(rep.limit_value)) \
            - rep.limit_value
        passed += int(rep.passed)
    trace = recovery_check(space, K0, potential, config.h_list,
                           config.affine, quad_order=config.quad_order)
    return GammaReport("gamma", config.h_list, passed, config.targets,
                       margins, trace, dict(config.echo))


@dataclass(eq=False)
class DivCurlReport:
    """Div-curl pairing trace plus flux window averages at the largest h."""

    kind: str
    trace: object                  # PairingTrace
    flux: object                   # FluxWindowReport
    envelope_prediction: float     # 1/h fit from the leading rungs at h_max
    config_echo: dict
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tool_version": self.tool_version,
            "config": self.config_echo,
            "trace": {
                "h_values": _jsonify(self.trace.h_values),
                "values": _jsonify(self.trace.values),
                "limit": self.trace.limit,
                "abs_errors": _jsonify(self.trace.abs_errors),
            },
            "envelope_prediction": self.envelope_prediction,
            "flux_windows": {
                "h": self.flux.h,
                "edges": _jsonify(self.flux.window_edges),
                "flux_averages": _jsonify(self.flux.flux_averages),
                "reference_averages": _jsonify(self.flux.reference_averages),
                "abs_errors": _jsonify(self.flux.abs_errors),
            },
        }


def run_divcurl(config: ExperimentConfig) -> DivCurlReport:
    """Pair the discrete energy density against its homogenized limit."""
    from .variational import div_curl_test, flux_weak_limit

    if config.family is None or config.source is None:
        raise ValueError("divcurl needs a coefficient family and a source")
    tensor = homogenized_tensor(config.family,
                                quad_points=config.quad_points,
                                cell_resolution=config.cell_resolution)
    trace = div_curl_test(config.family, config.h_list, config.source,
                          config.phi_support,
                          points_per_period=config.points_per_period,
                          quad_order=config.quad_order, limit_tensor=tensor)
    flux = flux_weak_limit(config.family, max(config.h_list), config.source,
                           config.windows,
                           points_per_period=config.points_per_period,
                           quad_order=config.quad_order, limit_tensor=tensor)
    lead = min(3, len(config.h_list) - 1)
    hs = np.asarray(config.h_list[:lead], dtype=float)
    errs = np.asarray(trace.abs_errors[:lead])
    usable = errs > 0
    if np.count_nonzero(usable) >= 2:
        c = float(np.exp(np.mean(np.log(errs[usable]) + np.log(hs[usable]))))
        prediction = c / max(config.h_list)
    else:
        prediction = float("nan")
    return DivCurlReport("divcurl", trace, flux, prediction, dict(config.echo))


def _rates_per_mode(h_values, records, n_modes):
    rates = []
    for mode in range(n_modes):
        errs = np.array([rec.abs_errors[mode] for rec in records])
        try:
            rates.append(fit_rate(h_values, errs))
        except ValueError:
            rates.append(RateFit(float("nan"), float("nan"), 0,
                                 tuple(int(h) for h in h_values)))
    return rates


def emit_report(report: SweepReport, fmt: str, path) -> None:
    """Write a sweep report as CSV rows or a JSON document.

    CSV columns are h, k, value, reference, abs_err, rel_err with one row
    per h and mode; floats carry 17 significant digits so reruns are
    byte-comparable.
    """
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["h", "k", "value", "reference", "abs_err", "rel_err"])
            for rec in report.records:
                for mode in range(rec.values.shape[0]):
                    writer.writerow([
                        rec.h, mode if report.kind == "source-homog" else mode + 1,
                        format(rec.values[mode], ".17g"),
                        format(report.reference[mode], ".17g"),
                        format(rec.abs_errors[mode], ".17g"),
                        format(rec.rel_errors[mode], ".17g"),
                    ])
        return
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    raise ValueError(f"unknown report format '{fmt}'")
