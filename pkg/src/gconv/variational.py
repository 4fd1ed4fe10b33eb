"""Quadratic-form diagnostics: liminf sampling, recovery traces, div-curl.

All the h-indexed diagnostics here run on one matched fine mesh sized for
the largest h in the ladder, so the discretization error is common mode
across the sweep and the traces isolate the convergence of the coefficient
or potential sequence itself.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import assembly
from .families import (
    PotentialFamily,
    SourceFamily,
    check_resolution,
    make_builtin_family,
)
from .homogenize import homogenized_tensor
from .linalg import cholesky
from .mesh import DIRICHLET, FeSpace, build_interval_mesh, build_rect_mesh, build_space


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Energy u -> u'(K0 + V)u of a background operator plus a potential."""

    base: sparse.spmatrix
    potential: sparse.spmatrix | None = None

    @property
    def n(self) -> int:
        return self.base.shape[0]

    def matrix(self) -> sparse.spmatrix:
        if self.potential is None:
            return self.base
        return (self.base + self.potential).tocsr()

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = self.base @ u
        if self.potential is not None:
            out = out + self.potential @ u
        return out


def form_eval(form: QuadraticForm, u: np.ndarray) -> float:
    """Evaluate the quadratic form; nonnegative for SPD base and V >= 0."""
    u = np.asarray(u, dtype=float)
    if u.shape != (form.n,):
        raise ValueError(f"vector has shape {u.shape}, expected ({form.n},)")
    return float(u @ form.apply(u))


def form_continuity_probe(form: QuadraticForm, u: np.ndarray,
                          v: np.ndarray) -> tuple[float, float]:
    """Continuity bound |F(u) - F(v)| <= ||H(u+v)|| ||u - v||.

    Returns (lhs, rhs); the inequality is asserted with slack 1e-12 relative
    before returning, since a violation means the form lost symmetry.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (form.n,) or v.shape != (form.n,):
        raise ValueError("dimension mismatch in continuity probe")
    lhs = abs(form_eval(form, u) - form_eval(form, v))
    rhs = float(np.linalg.norm(form.apply(u + v)) * np.linalg.norm(u - v))
    if lhs > rhs + 1e-12 * max(1.0, lhs):
        raise AssertionError(f"continuity bound violated: {lhs} > {rhs}")
    return lhs, rhs


@dataclass(frozen=True, eq=False)
class PairingTrace:
    """Values of an h-indexed pairing with its limit and absolute errors."""

    h_values: np.ndarray
    values: np.ndarray
    limit: float
    abs_errors: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["h", "value", "limit", "abs_error"])
            for h, v, e in zip(self.h_values, self.values, self.abs_errors):
                writer.writerow([int(h), format(v, ".17g"),
                                 format(self.limit, ".17g"), format(e, ".17g")])


def _trace(h_values, values, limit) -> PairingTrace:
    h_values = np.asarray(h_values, dtype=int)
    values = np.asarray(values, dtype=float)
    return PairingTrace(h_values, values, float(limit),
                        np.abs(values - float(limit)))


@dataclass(frozen=True, eq=False)
class LiminfReport:
    """Sampled lower-semicontinuity check along randomly perturbed sequences.

    For each h the perturbed energy is reported together with a computable
    vanishing envelope: the Cauchy-Schwarz bound on the perturbation cross
    term plus the potential pairing defect |u'(V_h - V)u| at the target.
    The check passes when the limit energy stays below every tail value
    plus its envelope, within the slack.
    """

    h_values: np.ndarray
    energies: np.ndarray       # F_h(u_h) along the perturbed sequence
    envelopes: np.ndarray      # vanishing bound per h
    limit_value: float         # F(u) with the limit potential
    tail_min: float            # min over the tail of energies + envelopes
    slack: float
    passed: bool


def liminf_check(space: FeSpace, base: sparse.spmatrix,
                 potential_family: PotentialFamily, h_list,
                 u_target: np.ndarray, perturbation_scale: float,
                 seed: int, quad_order: int = 4,
                 slack: float = 1e-8) -> LiminfReport:
    """Probe the liminf inequality F(u) <= liminf F_h(u_h) at one target.

    The sequence u_h = u + scale * (1/h) * r_h / ||r_h|| converges to u in
    L2; r_h is drawn per h from a seeded generator.  Potentials V_h >= 0
    keep the quadratic perturbation term nonnegative, so the one-sided
    envelope only needs the cross term and the pairing defect.
    """
    h_list = [int(h) for h in h_list]
    if sorted(h_list) != h_list:
        raise ValueError("h_list must be ascending")
    u = np.asarray(u_target, dtype=float)
    n = space.num_dofs
    if u.shape != (n,):
        raise ValueError(f"target has shape {u.shape}, expected ({n},)")
    rng = np.random.default_rng(seed)
    limit_mat = assembly.assemble_mass(space, _limit_weight(potential_family),
                                       h=1, quad_order=quad_order)
    limit_value = float(u @ (base @ u) + u @ (limit_mat @ u))

    energies = np.empty(len(h_list))
    envelopes = np.empty(len(h_list))
    for i, h in enumerate(h_list):
        vmat = assembly.assemble_mass(space, potential_family, h=h,
                                      quad_order=quad_order)
        form = QuadraticForm(base, vmat)
        r = rng.normal(size=n)
        r /= np.linalg.norm(r)
        s = perturbation_scale / h
        u_h = u + s * r
        energies[i] = form_eval(form, u_h)
        cross = 2.0 * s * float(np.linalg.norm(form.apply(u)))
        defect = abs(float(u @ (vmat @ u)) - float(u @ (limit_mat @ u)))
        envelopes[i] = cross + defect
    tail = slice(len(h_list) // 2, None)
    tail_min = float(np.min(energies[tail] + envelopes[tail]))
    passed = limit_value <= tail_min + slack * max(1.0, abs(limit_value))
    return LiminfReport(np.asarray(h_list), energies, envelopes,
                        limit_value, tail_min, slack, passed)


def _limit_weight(potential_family: PotentialFamily):
    """Present the limit oracle V as an h-independent potential family."""
    return PotentialFamily(
        name=f"{potential_family.name}-limit",
        convergence=potential_family.convergence,
        p=potential_family.p,
        bound=potential_family.bound,
        values=lambda h, x: potential_family.limit_at(x),
        limit=potential_family.limit,
        feature_fraction=None,
    )


def recovery_check(space: FeSpace, base: sparse.spmatrix,
                   potential_family: PotentialFamily, h_list,
                   u_affine, quad_order: int = 4) -> PairingTrace:
    """Energy trace along the constant recovery sequence u_h = u for affine u.

    ``u_affine`` is (a, b) for u(x) = a x + b, interpolated onto the space
    (Dirichlet spaces clamp the boundary values; the background energy is
    common to F_h and F, so the trace isolates the potential defect).  The
    trace |F_h(u) - F(u)| must decay toward zero.
    """
    a, b = (float(u_affine[0]), float(u_affine[1]))
    if space.mesh.dimension == 1:
        u = space.interpolate(lambda x: a * x + b)
    else:
        u = space.interpolate(lambda x, y: a * x + b)
    limit_mat = assembly.assemble_mass(space, _limit_weight(potential_family),
                                       h=1, quad_order=quad_order)
    f_limit = float(u @ (base @ u) + u @ (limit_mat @ u))
    values = []
    for h in h_list:
        vmat = assembly.assemble_mass(space, potential_family, h=int(h),
                                      quad_order=quad_order)
        values.append(float(u @ (base @ u) + u @ (vmat @ u)))
    return _trace(h_list, values, f_limit)


def interpolate_bump(space: FeSpace, support) -> np.ndarray:
    """P1 tent profile supported on an interval of the first coordinate."""
    x0, x1 = float(support[0]), float(support[1])
    if not x1 > x0:
        raise ValueError(f"degenerate bump support [{x0}, {x1}]")
    mid = 0.5 * (x0 + x1)

    def tent(x):
        x = np.asarray(x, dtype=float)
        up = (x - x0) / (mid - x0)
        down = (x1 - x) / (x1 - mid)
        return np.clip(np.minimum(up, down), 0.0, None)

    if space.mesh.dimension == 1:
        return space.interpolate(tent)
    return space.interpolate(lambda x, y: tent(x))


def _fine_space(family, h_max: int, points_per_period: int, dim: int) -> FeSpace:
    n = points_per_period * h_max
    if dim == 1:
        return build_space(build_interval_mesh(n), DIRICHLET)
    return build_space(build_rect_mesh(n, n), DIRICHLET)


def _solve_dirichlet(space, family, h, source, source_h, quad_order=4):
    K = assembly.assemble_stiffness(space, family, h=h, quad_order=quad_order)
    b = assembly.assemble_load(space, source, h=source_h, quad_order=quad_order)
    return cholesky(K).solve(b), K


def _energy_pairing(space, family, h, u, phi, quad_order=4):
    """integral( phi * (A_h grad u . grad u) ) for P1 u and phi."""
    dofs, measure, grads = assembly._cell_geometry(space)
    pts, gw, phi_vals = assembly._quad_points(space, quad_order)
    grad_u = assembly.cell_gradients(space, u)            # (nc, d)
    A = family.matrix_at(h, pts)                          # (nq, nc, d, d)
    energy_density = np.einsum("qcde,ce,cd->qc", A, grad_u, grad_u)
    phic = np.where(dofs >= 0, np.asarray(phi)[np.clip(dofs, 0, None)], 0.0)
    phi_at_q = np.einsum("ci,qi->qc", phic, phi_vals)
    return float(np.einsum("q,qc,qc,c->", gw, phi_at_q, energy_density, measure))


def div_curl_test(coeff_family, h_list, source: SourceFamily, phi_support,
                  points_per_period: int = 32, quad_order: int = 4,
                  limit_tensor=None) -> PairingTrace:
    """Pairing trace integral(phi * (A_h grad u_h . grad u_h)) over an h ladder.

    For each h the Dirichlet problem is solved on the matched fine mesh and
    the energy density is paired against a fixed P1 bump phi; the limit is
    the same pairing built from the homogenized solution on the same mesh.
    The trace errors must decay like 1/h.
    """
    h_list = [int(h) for h in h_list]
    h_max = max(h_list)
    space = _fine_space(coeff_family, h_max, points_per_period, coeff_family.dim)
    for h in h_list:
        check_resolution(coeff_family.feature_scale(h), space.mesh.max_cell_span(),
                         f"div_curl_test(h={h})")
    phi = interpolate_bump(space, phi_support)
    if limit_tensor is None:
        limit_tensor = homogenized_tensor(coeff_family)
    limit_family = _tensor_family(limit_tensor, coeff_family.dim)
    u_star, _ = _solve_dirichlet(space, limit_family, 1, source,
                                 source_h=h_max, quad_order=quad_order)
    limit_pairing = _energy_pairing(space, limit_family, 1, u_star, phi, quad_order)
    values = []
    for h in h_list:
        u_h, _ = _solve_dirichlet(space, coeff_family, h, source,
                                  source_h=h, quad_order=quad_order)
        values.append(_energy_pairing(space, coeff_family, h, u_h, phi, quad_order))
    return _trace(h_list, values, limit_pairing)


def _tensor_family(tensor, dim):
    from .families import ConstantMatrixCoefficient

    mat = tensor.matrix if hasattr(tensor, "matrix") else np.asarray(tensor)
    if dim == 1 and mat.size == 1:
        return make_builtin_family("const", [float(mat.reshape(1)[0])])
    return ConstantMatrixCoefficient(np.asarray(mat, dtype=float).reshape(dim, dim))


@dataclass(frozen=True, eq=False)
class FluxWindowReport:
    """Window averages of the discrete flux against the homogenized flux."""

    h: int
    window_edges: np.ndarray       # (W + 1,)
    flux_averages: np.ndarray      # (W, dim)
    reference_averages: np.ndarray
    abs_errors: np.ndarray         # (W,)


def flux_weak_limit(coeff_family, h: int, source: SourceFamily,
                    window_count: int, points_per_period: int = 32,
                    quad_order: int = 4, limit_tensor=None) -> FluxWindowReport:
    """Window averages of the flux A_h grad u_h over strips of the domain.

    Weak convergence of the flux is tested against window indicators: as h
    grows the averages approach those of A grad u_star computed from the
    homogenized tensor on the same mesh.  Windows are strips in the first
    coordinate; widths below the mesh resolution are refused.
    """
    space = _fine_space(coeff_family, h, points_per_period, coeff_family.dim)
    width = 1.0 / window_count
    if width < space.mesh.max_cell_span() - 1e-14:
        raise ValueError(
            f"window width {width:.3e} is below the mesh resolution "
            f"{space.mesh.max_cell_span():.3e}"
        )
    if limit_tensor is None:
        limit_tensor = homogenized_tensor(coeff_family)
    limit_family = _tensor_family(limit_tensor, coeff_family.dim)
    u_h, _ = _solve_dirichlet(space, coeff_family, h, source, source_h=h,
                              quad_order=quad_order)
    u_star, _ = _solve_dirichlet(space, limit_family, 1, source, source_h=h,
                                 quad_order=quad_order)
    edges = np.linspace(0.0, 1.0, window_count + 1)
    flux = _window_flux(space, coeff_family, h, u_h, edges, quad_order)
    ref = _window_flux(space, limit_family, 1, u_star, edges, quad_order)
    err = np.linalg.norm(flux - ref, axis=1)
    return FluxWindowReport(int(h), edges, flux, ref, err)


def _window_flux(space, family, h, u, edges, quad_order):
    """Per-strip averages of A_h grad u, binned by quadrature point."""
    _, measure, _ = assembly._cell_geometry(space)
    pts, gw, _ = assembly._quad_points(space, quad_order)
    grad_u = assembly.cell_gradients(space, u)                  # (nc, d)
    A = family.matrix_at(h, pts)                                # (nq, nc, d, d)
    flux_q = np.einsum("qcde,ce->qcd", A, grad_u)               # (nq, nc, d)
    xq = pts if space.mesh.dimension == 1 else pts[..., 0]
    bins = np.clip(np.searchsorted(edges, xq, side="right") - 1, 0, len(edges) - 2)
    w = gw[:, None] * measure[None, :]                          # (nq, nc)
    dim = flux_q.shape[-1]
    sums = np.zeros((len(edges) - 1, dim))
    vols = np.zeros(len(edges) - 1)
    np.add.at(vols, bins.ravel(), w.ravel())
    for d in range(dim):
        np.add.at(sums[:, d], bins.ravel(), (w * flux_q[..., d]).ravel())
    return sums / vols[:, None]
