import json
import math
import os

import numpy as np
import pytest

from gconv.families import make_builtin_family
from gconv.linalg import CLUSTER_GAP
from gconv.mesh import DIRICHLET, build_interval_mesh, build_rect_mesh, build_space
from gconv.sweep import (
    ExperimentConfig,
    emit_report,
    fit_rate,
    interpolate_between,
    run_divcurl,
    run_eigen_homog,
    run_eigen_potential,
    run_gamma,
    run_source_homog,
)

SQRT3 = math.sqrt(3.0)


def _eigen_cfg(**kw):
    base = dict(kind="eigen-homog", h_list=(4, 8, 16),
                family=make_builtin_family("osc1d", [2.0]), eigen_count=2)
    base.update(kw)
    return ExperimentConfig(**base)


def test_fit_rate_exact_power_laws():
    hs = [4, 8, 16, 32]
    assert abs(fit_rate(hs, [1.0 / h for h in hs]).slope - 1.0) <= 1e-12
    assert abs(fit_rate(hs, [3.0 / h**2 for h in hs]).slope - 2.0) <= 1e-12
    assert abs(fit_rate(hs, [0.7] * 4).slope) <= 1e-12


def test_fit_rate_excludes_nonpositive():
    fit = fit_rate([4, 8, 16, 32], [0.5, 0.0, 0.25, 0.125])
    assert fit.n_used == 3
    assert fit.excluded == (8,)


def test_fit_rate_needs_three_points():
    with pytest.raises(ValueError, match=">= 3"):
        fit_rate([4, 8, 16], [1.0, 0.0, 0.0])


def test_config_validation():
    with pytest.raises(ValueError, match="ascending"):
        _eigen_cfg(h_list=(8, 4))
    with pytest.raises(ValueError, match="points_per_period"):
        _eigen_cfg(points_per_period=8)
    with pytest.raises(ValueError, match="budget"):
        _eigen_cfg(h_list=(4, 1 << 16))


def test_interpolate_between_1d_nested_exact():
    coarse = build_space(build_interval_mesh(8), DIRICHLET)
    fine = build_space(build_interval_mesh(32), DIRICHLET)
    u = coarse.interpolate(lambda x: x * (1 - x))
    v = interpolate_between(coarse, u, fine)
    # piecewise-linear on the coarse mesh, reproduced exactly on nested nodes
    xs = fine.dof_coordinates()
    expected = np.interp(xs, coarse.mesh.vertices,
                         np.concatenate([[0], u, [0]]))
    assert np.allclose(v, expected, atol=1e-15)


def test_interpolate_between_2d_nested_exact():
    coarse = build_space(build_rect_mesh(4, 4), DIRICHLET)
    fine = build_space(build_rect_mesh(8, 8), DIRICHLET)
    rng = np.random.default_rng(2)
    u = rng.normal(size=coarse.num_dofs)
    v = interpolate_between(coarse, u, fine)
    # nested refinement with the same diagonal orientation preserves P1
    back = interpolate_between(fine, v, coarse)
    assert np.allclose(back, u, atol=1e-13)


def test_eigen_homog_const_family_flat_errors():
    cfg = _eigen_cfg(family=make_builtin_family("const", [2.0]),
                     h_list=(4, 8, 16))
    rep = run_eigen_homog(cfg)
    # h-independent family: the only error is the FEM gap between meshes
    for rec in rep.records:
        assert rec.rel_errors.max() <= 2e-4
    # top rung shares the reference mesh: agreement at solver tolerance
    assert rep.records[-1].rel_errors.max() <= 1e-11


def test_eigen_homog_two_phase_limits():
    cfg = _eigen_cfg(family=make_builtin_family("twophase1d", [1.0, 4.0]),
                     h_list=(4, 8, 16, 32), eigen_count=3)
    rep = run_eigen_homog(cfg)
    continuum = 1.6 * np.pi**2 * np.array([1.0, 4.0, 9.0])
    assert np.abs((rep.reference - continuum) / continuum).max() <= 1e-3
    assert rep.records[-1].rel_errors.max() <= 2e-2


def test_eigen_homog_positivity_and_order():
    rep = run_eigen_homog(_eigen_cfg())
    for rec in rep.records:
        assert np.all(rec.values > 0)
        assert np.all(np.diff(rec.values) >= 0)
        assert np.all(rec.residuals <= 1e-10)


def test_eigen_homog_common_mode_fem_control():
    # doubling the per-period resolution at the top rung moves the
    # eigenvalues by less than the reported error (max over modes)
    cfg = _eigen_cfg(h_list=(4, 8))
    rep = run_eigen_homog(cfg)
    doubled = run_eigen_homog(_eigen_cfg(h_list=(4, 8), points_per_period=64))
    shift = np.abs(rep.records[-1].values - doubled.records[-1].values)
    assert shift.max() <= rep.records[-1].abs_errors.max()


def test_source_homog_osc1d_reference_norm():
    cfg = ExperimentConfig(
        kind="source-homog", h_list=(4, 8, 16),
        family=make_builtin_family("osc1d", [2.0]),
        source=make_builtin_family("const-source", [1.0]), windows=4)
    rep = run_source_homog(cfg)
    # nodal interpolation shifts the discrete norm by O(delta^2)
    exact_norm = (1.0 / (2 * SQRT3)) * math.sqrt(1.0 / 30.0)
    assert abs(rep.reference_meta["reference_l2_norm"] - exact_norm) <= 5e-7
    rel = [rec.rel_errors[0] for rec in rep.records]
    assert rel[-1] < rel[0]


def test_source_homog_osc_source_same_limit():
    base = ExperimentConfig(
        kind="source-homog", h_list=(4, 8, 16),
        family=make_builtin_family("osc1d", [2.0]),
        source=make_builtin_family("const-source", [1.0]), windows=4)
    osc = ExperimentConfig(
        kind="source-homog", h_list=(4, 8, 16),
        family=make_builtin_family("osc1d", [2.0]),
        source=make_builtin_family("osc-source", [1.0]), windows=4)
    rep_base = run_source_homog(base)
    rep_osc = run_source_homog(osc)
    # f_h = 1 + sin(2 pi x)/h converges strongly to 1: same limit problem
    assert rep_osc.records[-1].rel_errors[0] <= rep_base.records[-1].rel_errors[0] + 2e-3


def test_eigen_potential_const_exact_agreement():
    cfg = ExperimentConfig(kind="eigen-potential", h_list=(4, 8),
                           potential=make_builtin_family("const-potential", [1.0]),
                           eigen_count=2)
    rep = run_eigen_potential(cfg)
    # no oscillation: errors are pure FEM mesh differences, zero at the top rung
    assert rep.records[-1].rel_errors.max() <= 1e-12
    assert rep.records[0].rel_errors.max() <= 1e-3


def test_eigen_potential_sin2_limits():
    cfg = ExperimentConfig(kind="eigen-potential", h_list=(4, 8, 16, 32),
                           potential=make_builtin_family("sin2-potential"),
                           eigen_count=3)
    rep = run_eigen_potential(cfg)
    continuum = np.pi**2 * np.array([1.0, 4.0, 9.0]) + 0.5
    assert np.abs((rep.reference - continuum) / continuum).max() <= 1e-4
    assert np.all(rep.records[-1].limit_residuals
                  <= rep.records[0].limit_residuals)


def test_eigen_potential_min_max_monotonicity():
    # adding a nonnegative potential never decreases any eigenvalue
    base = ExperimentConfig(kind="eigen-potential", h_list=(4, 8),
                            potential=make_builtin_family("const-potential", [0.0]),
                            eigen_count=3)
    bumped = ExperimentConfig(kind="eigen-potential", h_list=(4, 8),
                              potential=make_builtin_family("sin2-potential"),
                              eigen_count=3)
    v0 = run_eigen_potential(base).records[-1].values
    v1 = run_eigen_potential(bumped).records[-1].values
    assert np.all(v1 >= v0 - 1e-10)


def test_gamma_runner_all_pass():
    cfg = ExperimentConfig(kind="gamma", h_list=(8, 16, 32, 64),
                           potential=make_builtin_family("sin2-potential"),
                           targets=5, perturbation_scale=0.5, seed=3)
    rep = run_gamma(cfg)
    assert rep.liminf_passed == rep.liminf_total == 5
    assert np.all(rep.liminf_margins >= 0.0)
    assert rep.recovery.abs_errors[-1] <= 1e-2 * abs(rep.recovery.limit) + 1e-10


def test_divcurl_runner_envelope():
    cfg = ExperimentConfig(kind="divcurl", h_list=(8, 16, 32, 64),
                           family=make_builtin_family("osc1d", [2.0]),
                           source=make_builtin_family("const-source", [1.0]))
    rep = run_divcurl(cfg)
    assert rep.trace.abs_errors[-1] <= 3.0 * rep.envelope_prediction
    assert rep.flux.abs_errors.max() <= 5e-3


def test_emit_csv_shape(tmp_path):
    rep = run_eigen_homog(_eigen_cfg(h_list=(4, 8, 16)))
    path = tmp_path / "r.csv"
    emit_report(rep, "csv", path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "h,k,value,reference,abs_err,rel_err"
    assert len(rows) == 1 + 3 * 2  # 3 rungs x k=2
    first = rows[1].split(",")
    assert first[0] == "4" and first[1] == "1"


def test_emit_json_roundtrip(tmp_path):
    rep = run_eigen_homog(_eigen_cfg(h_list=(4, 8, 16)))
    path = tmp_path / "r.json"
    emit_report(rep, "json", path)
    with open(path) as fh:
        parsed = json.load(fh)
    assert parsed == rep.to_dict()


def test_emit_unknown_format(tmp_path):
    rep = run_eigen_homog(_eigen_cfg(h_list=(4, 8, 16)))
    with pytest.raises(ValueError, match="format"):
        emit_report(rep, "xml", tmp_path / "r.xml")


def test_thread_pool_deterministic(tmp_path):
    cfg = _eigen_cfg(h_list=(4, 8, 16))
    serial = run_eigen_homog(cfg)
    os.environ["GCONV_THREADS"] = "3"
    try:
        pooled = run_eigen_homog(_eigen_cfg(h_list=(4, 8, 16)))
    finally:
        del os.environ["GCONV_THREADS"]
    for a, b in zip(serial.records, pooled.records):
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.abs_errors, b.abs_errors)


def test_cluster_gap_constant_sane():
    assert 0 < CLUSTER_GAP < 1e-3


def test_eigenvector_errors_cluster_uses_subspace_distance():
    from scipy import sparse

    from gconv.sweep import eigenvector_errors

    sp = build_space(build_interval_mesh(8), DIRICHLET)
    n = sp.num_dofs
    eye = sparse.identity(n, format="csr")
    rng = np.random.default_rng(4)
    basis, _ = np.linalg.qr(rng.normal(size=(n, 3)))
    # rotate inside the degenerate pair: individual vectors differ, the
    # spanned subspace does not
    c, s = np.cos(0.7), np.sin(0.7)
    rotated = basis.copy()
    rotated[:, 1] = c * basis[:, 1] + s * basis[:, 2]
    rotated[:, 2] = -s * basis[:, 1] + c * basis[:, 2]
    ref_values = np.array([1.0, 2.0, 2.0])
    errs = eigenvector_errors(sp, rotated, sp, basis, eye, ref_values)
    assert errs[0] <= 1e-12
    assert errs[1] <= 1e-10 and errs[2] <= 1e-10
