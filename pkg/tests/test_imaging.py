from dataclasses import replace

import numpy as np
import pytest

from elastoscan.core import InputError
from elastoscan.farfield import FarField, point_source_farfield, translate_farfield
from elastoscan.imaging import (Detection, IndicatorField, SamplingMesh, canonical_mode,
                                extract_local_maxima, fit_coefficient, indicator_extended,
                                indicator_small, k_diagnostics, lattice_sum, make_tuning_mesh,
                                scheme_m, scheme_r, scheme_s)


def point_field(grid, material, wave, sources, charges):
    vals = point_source_farfield(grid.nodes, sources, charges, material, wave.omega)
    return FarField(grid, vals, material, wave)


def placed(entry, wave, position):
    fp = translate_farfield(entry.fp, position)
    fs = translate_farfield(entry.fs, position)
    return replace(fs, values=wave.alpha * fp.values + wave.beta * fs.values, wave=wave, evaluator=None)


def test_mode_aliases():
    assert canonical_mode("s") == "S" and canonical_mode(3) == "Full" and canonical_mode("P") == "P"
    with pytest.raises(InputError):
        canonical_mode("q")


def test_mesh_layout():
    m = SamplingMesh.cube(1.0, 0.5)
    assert m.shape == (5, 5, 5)
    assert np.allclose(m.point((4, 0, 2)), [1.0, -1.0, 0.0])
    assert m.nearest_index((0.26, -0.7, 0.9)) == (3, 1, 4)
    with pytest.raises(InputError):
        SamplingMesh((0, 0, 0), (1, 1, -1), 0.5)


def test_lattice_sum_matches_direct(coarse_grid, rng):
    m = SamplingMesh((-1.0, 0.0, -0.5), (1.0, 0.5, 0.5), 0.5)
    coef = rng.normal(size=len(coarse_grid)) + 1j * rng.normal(size=len(coarse_grid))
    got = lattice_sum(m.axes, coarse_grid.nodes, coef, 1.3)
    direct = np.exp(1j * 1.3 * m.points @ coarse_grid.nodes.T) @ coef
    assert np.allclose(got.ravel(), direct)


@pytest.mark.parametrize("mode", ["P", "S", "Full"])
def test_small_indicator_is_one_at_point_source(mode, coarse_grid, material, shear_wave):
    z = np.array([[0.5, -1.0, 1.5]])
    f = point_field(coarse_grid, material, shear_wave, z, np.array([[0.3, -0.2j, 1.0]]))
    fld = indicator_small(f, SamplingMesh.cube(2.0, 0.5), mode)
    assert fld.at(z[0]) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(fld.argmax(), z[0])
    assert fld.values.max() <= 1.0 + 1e-12


def test_small_indicator_scale_invariant(coarse_grid, material, shear_wave, rng):
    f = point_field(coarse_grid, material, shear_wave, rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    mesh = SamplingMesh.cube(2.0, 0.5)
    a = indicator_small(f, mesh).values
    b = indicator_small(f.with_values((2.5 - 1.5j) * f.values), mesh).values
    assert np.max(np.abs(a - b)) < 1e-12


def test_zero_data_rejected(coarse_grid, material, shear_wave):
    f = FarField(coarse_grid, np.zeros((len(coarse_grid), 3)), material, shear_wave)
    with pytest.raises(InputError):
        indicator_small(f, SamplingMesh.cube(1.0, 0.5))


def test_fit_coefficient_exact_copy(tiny_library, shear_wave):
    e = tiny_library.find("peanut", (0.0, np.pi / 2, 0.0))
    z = (1.0, -0.5, 0.5)
    f = placed(e, shear_wave, z)
    mesh = SamplingMesh.cube(1.5, 0.5)
    c = fit_coefficient(f, e, mesh)
    assert abs(c[mesh.nearest_index(z)] - 1.0) < 1e-12
    W = indicator_extended(f, e, mesh)
    assert np.allclose(W.argmax(), z)
    # only a unimodular phase leaves W unchanged
    W2 = indicator_extended(f.with_values(1j * f.values), e, mesh)
    assert np.max(np.abs(W.values - W2.values)) < 1e-12


def test_extract_local_maxima_greedy_separation():
    mesh = SamplingMesh.cube(2.0, 0.25)
    p = mesh.points
    vals = (np.exp(-np.sum((p - [1, 1, 1]) ** 2, axis=1) / 0.1)
            + 0.8 * np.exp(-np.sum((p - [1.5, 1, 1]) ** 2, axis=1) / 0.1)
            + 0.6 * np.exp(-np.sum((p + 1) ** 2, axis=1) / 0.1)).reshape(mesh.shape)
    fld = IndicatorField(mesh, vals, "Full")
    dets = extract_local_maxima(fld, 0.3, 1.0)
    assert [tuple(np.round(d.position, 6)) for d in dets] == [(1.0, 1.0, 1.0), (-1.0, -1.0, -1.0)]
    with pytest.raises(InputError):
        extract_local_maxima(fld, 0.3, 0.1)


def test_scheme_s_two_points(coarse_grid, material, shear_wave):
    z = np.array([[-1.5, 1.0, -1.0], [1.5, -1.0, 1.5]])
    f = point_field(coarse_grid, material, shear_wave, z, np.array([[1, 0, 0], [0.5, 0.5, 0]], complex))
    dets = scheme_s(f, SamplingMesh.cube(2.0, 0.25), "Full", 0.3, 2.0)
    assert len(dets) == 2
    # the other source's sidelobe can pull a peak by one mesh step
    for d in dets:
        assert min(np.linalg.norm(z - d.position, axis=1)) <= 0.25 + 1e-9


def test_k_diagnostics_sum_to_one(coarse_grid, material, shear_wave):
    parts = [point_field(coarse_grid, material, shear_wave, [[x, 0, 0]], [[1, 0, 0]]) for x in (-3.0, 3.0)]
    K = k_diagnostics(parts, parts[0] + parts[1])
    assert K.shape == (2, 3)
    assert np.all((K > 0.3) & (K < 0.7))


def test_scheme_r_separates_two_copies(tiny_library, shear_wave):
    ball = tiny_library.find("ball")
    pea = tiny_library.find("peanut", (0.0, np.pi / 2, 0.0))
    f = placed(ball, shear_wave, (-2.0, 0.0, -2.0)) + placed(pea, shear_wave, (2.0, 0.0, 2.0))
    dets = scheme_r(f, tiny_library, SamplingMesh.cube(3.0, 0.5))
    assert len(dets) == 2
    got = {d.entry[0]: d for d in dets}
    assert np.allclose(got["ball"].position, (-2, 0, -2))
    assert np.allclose(got["peanut"].position, (2, 0, 2))
    assert abs(got["peanut"].entry[1][1] % np.pi - np.pi / 2) < 1e-9
    assert dets.report["residual"].norm() < 1e-6 * f.norm()


def test_scheme_r_rejects_foreign_library(tiny_library, material, pressure_wave, coarse_grid):
    f = point_field(coarse_grid, material, pressure_wave, [[0, 0, 0]], [[1, 0, 0]])
    with pytest.raises(InputError):
        scheme_r(f, tiny_library, SamplingMesh.cube(1.0, 0.5))


def test_tuning_mesh(tiny_library):
    det = Detection((2.0, 0.0, 2.0), 1.0, ("peanut", (0.0, np.pi / 2, 0.0), 1.0))
    mesh = SamplingMesh.cube(3.0, 0.5)
    tm = make_tuning_mesh(det, tiny_library, mesh, refine=2)
    assert tm.fine == pytest.approx(0.25)
    assert tm.n_side == 4 and len(tm.offsets_1d) == 9
    # the peanut at 90 deg and its neighbours one quarter turn away
    assert len(tm.entries) == 3


def test_scheme_m_synthetic(tiny_library, material, shear_wave):
    """An exact peanut copy plus a weak point force: stage 2 must find the point force."""
    pea = tiny_library.find("peanut", (0.0, np.pi / 2, 0.0))
    big = placed(pea, shear_wave, (1.5, 0.0, 1.5))
    z = np.array([[-1.5, 0.0, -1.5]])
    small = point_field(big.grid, material, shear_wave, z, [[0.05, 0, 0.02]])
    f = big + small
    mesh = SamplingMesh.cube(2.5, 0.5)
    res = scheme_m(f, tiny_library, mesh, "Full", refine=2, delta=0.5, min_separation=1.0)
    assert len(res.extended) == 1
    assert np.allclose(res.extended[0].position, (1.5, 0.0, 1.5))
    assert len(res.small) >= 1
    assert np.linalg.norm(np.asarray(res.small[0].position) - z[0]) < 0.25 + 1e-9


def test_half_max_width_of_a_tent():
    from elastoscan.imaging import half_max_width
    mesh = SamplingMesh((-2.0, 0.0, 0.0), (2.0, 0.0, 0.0), 0.1)
    vals = np.maximum(0.0, 1.0 - np.abs(mesh.axes[0]) / 1.5).reshape(mesh.shape)
    assert half_max_width(IndicatorField(mesh, vals, "S"), 0) == pytest.approx(1.5)
    with pytest.raises(InputError):
        half_max_width(IndicatorField(mesh, np.ones(mesh.shape), "S"), 0)
