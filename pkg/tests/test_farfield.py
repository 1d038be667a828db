import numpy as np
import pytest

from elastoscan.core import InputError, l2_inner, make_sphere_grid
from elastoscan.farfield import (FarField, add_noise, point_source_farfield, rotate_farfield,
                                 split_ps, translate_farfield)
from elastoscan.geometry import rotation_matrix


def point_field(grid, material, wave, sources, charges):
    vals = point_source_farfield(grid.nodes, sources, charges, material, wave.omega)
    return FarField(grid, vals, material, wave)


@pytest.fixture
def two_sources(rng):
    return rng.normal(size=(2, 3)), rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))


def test_ps_split_is_orthogonal(coarse_grid, material, shear_wave, two_sources):
    f = point_field(coarse_grid, material, shear_wave, *two_sources)
    fp, fs = split_ps(f)
    assert np.allclose(fp.values + fs.values, f.values)
    assert np.max(np.abs(np.einsum("ki,ki->k", fs.values, coarse_grid.nodes))) < 1e-12
    assert abs(l2_inner(fp, fs)) < 1e-12 * f.norm() ** 2


def test_translation_matches_moved_point_sources(coarse_grid, material, shear_wave, two_sources):
    """A point force moved by ``a`` is the exact oracle; the incident phase is exp(i ks d.a)."""
    src, q = two_sources
    a = np.array([0.4, -1.1, 0.7])
    ks = 2.0
    f = point_field(coarse_grid, material, shear_wave, src, q)
    moved = point_field(coarse_grid, material, shear_wave, src + a, q * np.exp(1j * ks * a[2]))
    assert np.allclose(translate_farfield(f, a).values, moved.values, atol=1e-12)


def test_translation_round_trip(coarse_grid, material, shear_wave, two_sources):
    f = point_field(coarse_grid, material, shear_wave, *two_sources)
    g = translate_farfield(translate_farfield(f, (1.0, 2.0, -0.5)), (-1.0, -2.0, 0.5))
    assert np.allclose(g.values, f.values, atol=1e-12)


def test_rotation_matches_rotated_sources(material, shear_wave, two_sources):
    grid = make_sphere_grid(12, 24)
    src, q = two_sources
    R = rotation_matrix((0.3, 0.7, -0.4))
    ev = lambda x: point_source_farfield(x, src, q, material, shear_wave.omega)
    f = FarField(grid, ev(grid.nodes), material, shear_wave, evaluator=ev)
    g = rotate_farfield(f, R)
    expect = point_source_farfield(grid.nodes, src @ R.T, q @ R.T, material, shear_wave.omega)
    assert np.allclose(g.values, expect, atol=1e-12)
    assert np.allclose(g.wave.d, R @ np.asarray(shear_wave.d))


def test_noise_is_deterministic(coarse_grid, material, shear_wave, two_sources):
    f = point_field(coarse_grid, material, shear_wave, *two_sources)
    a, b = add_noise(f, 0.05, 7), add_noise(f, 0.05, 7)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, add_noise(f, 0.05, 8).values)
    rel = np.abs(a.values.real - f.values.real) / np.maximum(np.abs(f.values.real), 1e-300)
    assert rel.max() <= 0.05 + 1e-12
    with pytest.raises(InputError):
        add_noise(f, -0.1)


def test_incompatible_fields_rejected(coarse_grid, material, shear_wave, pressure_wave, two_sources):
    f = point_field(coarse_grid, material, shear_wave, *two_sources)
    g = point_field(coarse_grid, material, pressure_wave, *two_sources)
    with pytest.raises(InputError):
        f + g
    h = point_field(make_sphere_grid(8, 16), material, shear_wave, *two_sources)
    with pytest.raises(InputError):
        f - h


def test_nonfinite_values_rejected(coarse_grid, material, shear_wave):
    v = np.zeros((len(coarse_grid), 3), complex)
    v[0, 0] = np.nan
    with pytest.raises(InputError):
        FarField(coarse_grid, v, material, shear_wave)
