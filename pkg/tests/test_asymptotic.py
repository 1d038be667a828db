import numpy as np
import pytest

from elastoscan.asymptotic import (ball_polarization, foldy_solve, polarization_tensor,
                                   small_scene_farfield)
from elastoscan.core import incident_field
from elastoscan.farfield import point_source_farfield
from elastoscan.geometry import component, rotation_matrix


def test_ball_polarization_matches_closed_form(material):
    C = polarization_tensor("ball", 1.0, material).matrix
    c0 = ball_polarization(1.0, material)
    # closed form for lam=2, mu=1: 16 pi / 3
    assert c0 == pytest.approx(16 * np.pi / 3)
    assert np.max(np.abs(C - c0 * np.eye(3))) / c0 < 1e-3


def test_nystrom_variant_is_close(material):
    C = polarization_tensor("ball", 1.0, material, method="nystrom").matrix
    c0 = ball_polarization(1.0, material)
    assert np.max(np.abs(C - c0 * np.eye(3))) / c0 < 0.05


def test_polarization_scaling_and_rotation(material):
    base = polarization_tensor("peanut", 1.0, material).matrix
    half = polarization_tensor("peanut", 0.5, material).matrix
    assert np.allclose(half, 0.5 * base, rtol=1e-8, atol=1e-10)
    euler = (0.3, 0.7, -0.4)
    R = rotation_matrix(euler)
    turned = polarization_tensor("peanut", 1.0, material, euler=euler).matrix
    assert np.max(np.abs(turned - R @ base @ R.T)) / np.abs(base).max() < 1e-3
    assert np.allclose(base, base.T, atol=1e-6 * np.abs(base).max())


def test_single_foldy_charge(material, shear_wave):
    C = polarization_tensor("ball", 0.1, material)
    z = np.array([[0.5, -0.2, 1.0]])
    sol = foldy_solve(z, [C], shear_wave, material)
    expect = -C.matrix @ incident_field(shear_wave, material, z)[0]
    assert np.allclose(sol.charges[0], expect)


def test_small_scene_farfield_is_point_sources(material, shear_wave, coarse_grid):
    comps = [component("ball", (-2, 3, -2), scale=0.1), component("peanut", (3, -2, -2), scale=0.1)]
    f = small_scene_farfield(comps, shear_wave, material, coarse_grid)
    sol = foldy_solve([c.placement.position for c in comps],
                      [polarization_tensor(c.shape, c.placement.scale, material, euler=c.placement.euler)
                       for c in comps], shear_wave, material)
    expect = point_source_farfield(coarse_grid.nodes, sol.positions, sol.charges, material, shear_wave.omega)
    assert np.allclose(f.values, expect, rtol=1e-10, atol=1e-14)
