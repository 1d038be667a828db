"""Small-scatterer model: polarization tensors, Foldy system, point far fields.

A small rigid body ``z + rho B`` responds to an incident field like a point
force ``Q = -C u_in(z)``, where ``C = int Theta ds`` and ``Theta`` solves the
static first-kind equation ``int Gamma(x, y) Theta(y) ds(y) = I`` on the
boundary (``Gamma`` is the Kelvin tensor). Interaction between several small
bodies is captured by the Foldy system.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import (InputError, IncidentWave, Material, SphereGrid, incident_field,
                   kelvin_tensor, kupradze_tensor, wavenumbers)
from .farfield import FARFIELD_CONVENTION, FarField, point_source_farfield
from .forward import DecompositionError
from .geometry import Placement, balanced_points, make_shape, rotation_matrix, sample_surface

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PolarizationTensor:
    matrix: np.ndarray
    shape_id: str
    scale: float
    euler: tuple = (0.0, 0.0, 0.0)
    method: str = "mfs"

    def rotated(self, R) -> "PolarizationTensor":
        R = np.asarray(R, dtype=float)
        return PolarizationTensor(R @ self.matrix @ R.T, self.shape_id, self.scale, self.euler, self.method)

    def scaled(self, rho: float) -> "PolarizationTensor":
        return PolarizationTensor(rho * self.matrix, self.shape_id, self.scale * rho, self.euler, self.method)


def ball_polarization(radius: float, material: Material) -> float:
    """Closed form ``C = c I`` for a rigid ball: the elastostatic drag coefficient."""
    nu = material.lam / (2.0 * (material.lam + material.mu))
    return 24.0 * math.pi * material.mu * radius * (1.0 - nu) / (5.0 - 6.0 * nu)


def _block(T: np.ndarray) -> np.ndarray:
    n, m = T.shape[:2]
    return T.transpose(0, 2, 1, 3).reshape(3 * n, 3 * m)


def _tensor_mfs(shape, placement, material, n_surface, offset_factor=2.0):
    n_src = max(64, n_surface // 3)
    col = balanced_points(shape, placement, n_surface)
    src = balanced_points(shape, placement, n_src)
    y = src.points - offset_factor * src.spacing[:, None] * src.normals
    A = _block(kelvin_tensor(col.points, y, material))
    rhs = np.tile(np.eye(3), (len(col), 1))
    scale = np.linalg.norm(A, axis=0)
    sol, _, rank, sv = scipy.linalg.lstsq(A / scale, rhs, cond=1e-13, lapack_driver="gelsd")
    q = (sol / scale[:, None]).reshape(len(y), 3, 3)
    return q.sum(axis=0), sv[0] / sv[-1]


def _tensor_nystrom(shape, placement, material, n_surface):
    n = max(8, int(round(math.sqrt(n_surface / 2.0))))
    surf = sample_surface(shape, placement, n, 2 * n)
    x, nu, w = surf.points, surf.normals, surf.weights
    diff = x[:, None, :] - x[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(r, 1.0)
    lam, mu = material.lam, material.mu
    den = 8.0 * math.pi * mu * (lam + 2.0 * mu)
    a_c, b_c = (lam + 3.0 * mu) / den, (lam + mu) / den
    G = (a_c / r)[..., None, None] * np.eye(3) + (b_c / r ** 3)[..., None, None] * (diff[..., :, None] * diff[..., None, :])
    G *= w[None, :, None, None]
    # local flat-disc patch for the weakly singular self term
    rad = np.sqrt(w / math.pi)
    self_term = (2.0 * math.pi * rad * a_c)[:, None, None] * np.eye(3) \
        + (math.pi * rad * b_c)[:, None, None] * (np.eye(3) - nu[:, :, None] * nu[:, None, :])
    idx = np.arange(len(x))
    G[idx, idx] = self_term
    A = _block(G)
    rhs = np.tile(np.eye(3), (len(x), 1))
    try:
        lu = scipy.linalg.lu_factor(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DecompositionError(f"polarization system failed: {exc}") from exc
    cond = np.linalg.cond(A)
    theta = scipy.linalg.lu_solve(lu, rhs).reshape(len(x), 3, 3)
    return np.einsum("i,ijk->jk", w, theta), cond


def polarization_tensor(shape, scale: float = 1.0, material: Material = None, n_surface: int = 1200,
                        euler=(0.0, 0.0, 0.0), method: str = "mfs") -> PolarizationTensor:
    """Polarization tensor ``C`` of the rigid body ``scale * R(euler) shape``.

    ``method="mfs"`` fits the static equation with interior Kelvin sources;
    ``C`` is the sum of the source strengths, since the exterior field and hence
    its monopole moment are unique. ``method="nystrom"`` discretises the
    first-kind equation on a tensor quadrature with a flat-disc correction
    for the self term (first-order accurate; kept for comparison).
    """
    if material is None:
        raise InputError("material required")
    if not scale > 0:
        raise InputError("scale must be positive")
    shape = make_shape(shape)
    C = _cached_tensor(shape.shape_id, material.lam, material.mu, int(n_surface), method)
    R = rotation_matrix(euler)
    return PolarizationTensor(scale * (R @ C @ R.T), shape.shape_id, float(scale), tuple(euler), method)


@lru_cache(maxsize=64)
def _cached_tensor(shape_id, lam, mu, n_surface, method):
    shape = make_shape(shape_id)
    material = Material(lam, mu)
    if method == "mfs":
        C, cond = _tensor_mfs(shape, Placement(), material, n_surface)
    elif method == "nystrom":
        C, cond = _tensor_nystrom(shape, Placement(), material, n_surface)
    else:
        raise InputError(f"unknown polarization method {method!r}")
    if not np.all(np.isfinite(C)):
        raise DecompositionError(f"polarization tensor not finite (condition {cond:.3g})")
    logger.debug("polarization tensor %s (%s): condition %.3g", shape_id, method, cond)
    C = 0.5 * (C + C.T)  # symmetric in exact arithmetic
    C.setflags(write=False)
    return C


# ---------------------------------------------------------------------------
# Foldy system
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FoldySolution:
    positions: np.ndarray
    charges: np.ndarray
    residual: float
    wave: IncidentWave = field(repr=False, default=None)
    material: Material = field(repr=False, default=None)


def self_interaction(material: Material, omega: float) -> complex:
    """Finite part ``lim (Pi - Gamma)`` at coincidence; it is a multiple of ``I``."""
    k = wavenumbers(material, omega)
    return 1j * (k.ks / (6.0 * math.pi * material.mu) + k.kp / (12.0 * math.pi * (material.lam + 2.0 * material.mu)))


def foldy_solve(positions, tensors: Sequence, wave: IncidentWave, material: Material,
                omega: float = None, coupling: bool = True,
                radiation_correction: bool = False) -> FoldySolution:
    """Solve ``C_j^{-1} Q_j + sum_{m != j} Pi(z_j, z_m) Q_m = -u_in(z_j)``.

    ``radiation_correction`` adds the finite self-interaction of the dynamic
    tensor to each diagonal block, which removes the leading ``O(k rho)``
    error of the plain system. It is off by default.
    """
    omega = wave.omega if omega is None else omega
    z = np.atleast_2d(np.asarray(positions, dtype=float))
    n = len(tensors)
    if z.shape != (n, 3):
        raise InputError("one position per polarization tensor required")
    if n == 0:
        return FoldySolution(np.zeros((0, 3)), np.zeros((0, 3), dtype=complex), 0.0, wave, material)
    Cs = [np.asarray(getattr(t, "matrix", t), dtype=complex) for t in tensors]
    M = np.zeros((3 * n, 3 * n), dtype=complex)
    for j, C in enumerate(Cs):
        M[3 * j:3 * j + 3, 3 * j:3 * j + 3] = np.linalg.inv(C)
        if radiation_correction:
            M[3 * j:3 * j + 3, 3 * j:3 * j + 3] += self_interaction(material, omega) * np.eye(3)
    if coupling and n > 1:
        for j in range(n):
            for m in range(n):
                if m != j:
                    M[3 * j:3 * j + 3, 3 * m:3 * m + 3] = kupradze_tensor(z[j], z[m], material, omega)
    rhs = -incident_field(wave, material, z).reshape(-1)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e14:
        raise DecompositionError(f"Foldy system singular (condition {cond:.3g})")
    q = np.linalg.solve(M, rhs)
    res = np.linalg.norm(M @ q - rhs) / max(np.linalg.norm(rhs), 1e-300)
    return FoldySolution(z, q.reshape(n, 3), float(res), wave, material)


def asymptotic_farfield(solution: FoldySolution, grid: SphereGrid, material: Material = None,
                        omega: float = None) -> FarField:
    """Leading-order far field of point forces ``Q_j`` at ``z_j``."""
    material = solution.material if material is None else material
    omega = solution.wave.omega if omega is None else omega
    z, q = solution.positions, solution.charges

    def evaluator(x):
        return point_source_farfield(x, z, q, material, omega)

    return FarField(grid, evaluator(grid.nodes), material, solution.wave, FARFIELD_CONVENTION,
                    {"source": "foldy", "components": len(z)}, evaluator)


def small_scene_farfield(components, wave: IncidentWave, material: Material, grid: SphereGrid,
                         n_surface: int = 1200, coupling: bool = True,
                         radiation_correction: bool = False) -> FarField:
    """Foldy far field for a list of small :class:`~elastoscan.geometry.Component` objects."""
    tensors = [polarization_tensor(c.shape, c.placement.scale, material, n_surface, c.placement.euler)
               for c in components]
    pos = [c.placement.position for c in components]
    return asymptotic_farfield(foldy_solve(pos, tensors, wave, material, coupling=coupling,
                                           radiation_correction=radiation_correction), grid, material)
