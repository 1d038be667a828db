import numpy as np
import pytest

from elastoscan.core import (IncidentWave, InputError, Material, incident_field, kelvin_tensor,
                             kupradze_tensor, l2_norm, make_sphere_grid, wavenumbers)


def test_wavenumbers(material):
    k = wavenumbers(material, 2.0)
    assert k.kp == pytest.approx(2.0 / np.sqrt(4.0))
    assert k.ks == pytest.approx(2.0)


@pytest.mark.parametrize("lam, mu", [(1.0, 0.0), (1.0, -1.0), (-1.0, 1.0)])
def test_material_rejects_nonphysical(lam, mu):
    with pytest.raises(InputError):
        Material(lam, mu)


def test_incident_wave_validation():
    with pytest.raises(InputError):
        IncidentWave((0, 0, 1), (0, 1, 1), 0, 1, 2.0)
    with pytest.raises(InputError):
        IncidentWave((0, 0, 1), (1, 0, 0), 0, 1, -1.0)
    w = IncidentWave((0, 0, 1), (1, 0, 0), 0.5, 1j, 2.0)
    assert not w.is_pure
    assert w.pressure_part().is_pure and w.shear_part().is_pure


def test_kupradze_symmetry_and_reciprocity(material, rng):
    x = rng.normal(size=(5, 3))
    y = rng.normal(size=(5, 3)) + 3.0
    G = kupradze_tensor(x, y, material, 2.0)
    Gt = kupradze_tensor(y, x, material, 2.0)
    assert np.allclose(G, np.swapaxes(G, -1, -2))
    assert np.allclose(G, np.transpose(Gt, (1, 0, 3, 2)))


def test_kupradze_solves_navier(material):
    """Finite-difference residual of the Navier operator away from the source."""
    omega, h = 2.0, 1e-3
    y = np.zeros((1, 3))
    x0 = np.array([0.7, -0.4, 0.9])

    def G(x):
        return kupradze_tensor(np.atleast_2d(x), y, material, omega)[0, 0]

    lap = np.zeros((3, 3), complex)
    graddiv = np.zeros((3, 3), complex)
    e = np.eye(3) * h
    for i in range(3):
        lap += (G(x0 + e[i]) - 2 * G(x0) + G(x0 - e[i])) / h**2
        for j in range(3):
            d2 = (G(x0 + e[i] + e[j]) - G(x0 + e[i] - e[j]) - G(x0 - e[i] + e[j]) + G(x0 - e[i] - e[j])) / (4 * h * h)
            graddiv[i] += d2[j]
    res = material.mu * lap + (material.lam + material.mu) * graddiv + omega**2 * G(x0)
    assert np.max(np.abs(res)) / np.max(np.abs(omega**2 * G(x0))) < 1e-4


def test_static_limit_is_kelvin(material):
    x = np.array([[1.0, 0.5, -0.3]])
    y = np.zeros((1, 3))
    G = kupradze_tensor(x, y, material, 1e-4)[0, 0]
    K = kelvin_tensor(x, y, material)[0, 0]
    # the dynamic tensor differs from Kelvin by an O(omega) constant imaginary shift
    assert np.max(np.abs(G.real - K)) / np.max(np.abs(K)) < 1e-3


def test_kelvin_reference_value(material):
    K = kelvin_tensor(np.array([[1.0, 0.0, 0.0]]), np.zeros((1, 3)), material)[0, 0]
    assert np.allclose(K * 32 * np.pi, np.diag([8.0, 5.0, 5.0]))


def test_sphere_quadrature_exactness():
    g = make_sphere_grid(12, 24)
    x = g.nodes
    assert abs(g.weights.sum() - 4 * np.pi) < 1e-12
    assert abs(np.sum(g.weights * x[:, 2] ** 2) - 4 * np.pi / 3) < 1e-12
    assert abs(np.sum(g.weights * x[:, 0] ** 2 * x[:, 1] ** 2 * x[:, 2] ** 2) - 4 * np.pi / 105) < 1e-12
    assert abs(np.sum(g.weights * np.exp(1j * x[:, 2])) - 4 * np.pi * np.sin(1.0)) < 1e-12


def test_sphere_grid_rejects_bad_sizes():
    with pytest.raises(InputError):
        make_sphere_grid(0, 10)


def test_incident_field_polarisation(material, shear_wave):
    x = np.array([[0.0, 0.0, 0.3], [1.0, 2.0, 0.0]])
    u = incident_field(shear_wave, material, x)
    assert np.allclose(u[:, 1:], 0.0)
    assert np.allclose(np.abs(u[:, 0]), 1.0)
