"""Method of fundamental solutions for rigid (Dirichlet) elastic scatterers.

The scattered field of each component is represented by Kupradze point forces
placed on a shrunken copy of its surface. Coefficients are fitted so that
``u_sc = -u_in`` at collocation points on all boundaries, by least squares
with relative singular-value truncation. All components are solved jointly,
so multiple scattering between them is included.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.linalg

from .core import (InputError, IncidentWave, Material, SphereGrid, incident_field,
                   kupradze_tensor)
from .farfield import FARFIELD_CONVENTION, FarField, point_source_farfield
from .geometry import Component, Placement, Scene, balanced_points, sample_surface

logger = logging.getLogger(__name__)


class DecompositionError(RuntimeError):
    """The least-squares system could not be factorised."""


@dataclass(frozen=True)
class MfsConfig:
    """Discretisation parameters of the fundamental-solution solver.

    Attributes
    ----------
    n_sources : int
        Point forces per component.
    n_collocation : int
        Boundary matching points per component, at least ``2 * n_sources``.
    auxiliary_scale : float
        Shrink factor of the source surface toward the centroid
        (``source_rule="radial"`` only).
    svd_cutoff : float
        Relative singular-value truncation level.
    residual_tol : float
        Boundary misfit above which a quality warning is attached.
    n_test : int
        Test points per direction of the independent residual quadrature.
    source_rule : str
        ``"normal"`` places each source ``offset_factor`` local point
        spacings inside the surface along the inward normal; ``"radial"``
        shrinks the surface toward its centroid by ``auxiliary_scale``.
    offset_factor : float
        Inward offset in units of the local spacing (``"normal"`` rule).
    refine : float
        Curvature refinement of the point sets (0 disables).
    curvature_cap : float
        The inward offset never exceeds this multiple of the local convex
        radius of curvature (``"normal"`` rule).
    """

    n_sources: int = 400
    n_collocation: int = 1200
    auxiliary_scale: float = 0.7
    svd_cutoff: float = 1e-12
    residual_tol: float = 1e-3
    n_test: int = 40
    source_rule: str = "normal"
    offset_factor: float = 2.0
    refine: float = 1.0
    curvature_cap: float = 0.5

    def __post_init__(self):
        if self.n_sources < 4:
            raise InputError("n_sources must be at least 4")
        if self.n_collocation < 2 * self.n_sources:
            raise InputError("n_collocation must be at least 2 * n_sources")
        if not 0.3 <= self.auxiliary_scale <= 0.95:
            raise InputError("auxiliary_scale must lie in [0.3, 0.95]")
        if not 0 < self.svd_cutoff <= 1e-2:
            raise InputError("svd_cutoff must lie in (0, 1e-2]")
        if self.source_rule not in ("normal", "radial"):
            raise InputError("source_rule must be 'normal' or 'radial'")
        if not self.offset_factor > 0:
            raise InputError("offset_factor must be positive")


@dataclass(eq=False)
class MfsSolution:
    """Sources and fitted coefficients for one scene component."""

    component: Component
    source_points: np.ndarray
    coefficients: np.ndarray
    material: Material
    omega: float
    wave: Optional[IncidentWave] = None
    residual: float = float("nan")
    warnings: list = field(default_factory=list)
    rank: int = 0

    def field(self, x) -> np.ndarray:
        """Scattered displacement of this component's sources at points ``(n, 3)``."""
        return scattered_field([self], x)


def _centroid(sample) -> np.ndarray:
    return (sample.weights[:, None] * sample.points).sum(axis=0) / sample.weights.sum()


def _sources_and_collocation(comp: Component, config: MfsConfig):
    surf = balanced_points(comp.shape, comp.placement, config.n_collocation, config.refine)
    src_surf = balanced_points(comp.shape, comp.placement, config.n_sources, config.refine)
    if config.source_rule == "radial":
        c = _centroid(surf)
        sources = c + config.auxiliary_scale * (src_surf.points - c)
    else:
        delta = config.offset_factor * src_surf.spacing
        with np.errstate(divide="ignore"):
            delta = np.minimum(delta, config.curvature_cap / src_surf.convexity)
        sources = src_surf.points - delta[:, None] * src_surf.normals
    return sources, surf.points


def _block_matrix(x, y, material, omega) -> np.ndarray:
    T = kupradze_tensor(x, y, material, omega)  # (n, m, 3, 3)
    n, m = T.shape[:2]
    return T.transpose(0, 2, 1, 3).reshape(3 * n, 3 * m)


def scattered_field(solutions: Sequence[MfsSolution], x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros((len(x), 3), dtype=complex)
    for sol in solutions:
        T = kupradze_tensor(x, sol.source_points, sol.material, sol.omega)
        out += np.einsum("nmij,mj->ni", T, sol.coefficients)
    return out


def solve_mfs_rhs(scene: Scene, material: Material, omega: float,
                  incidents: Sequence[Callable], config: MfsConfig = MfsConfig()):
    """Joint solve for several incident fields sharing one system matrix.

    ``incidents`` are callables mapping points ``(n, 3)`` to displacements.
    Returns one list of :class:`MfsSolution` per incident field (residuals unset).
    """
    comps = list(scene.components)
    if not comps:
        return [[] for _ in incidents]
    layout = [_sources_and_collocation(c, config) for c in comps]
    sources = np.concatenate([s for s, _ in layout])
    colloc = np.concatenate([c for _, c in layout])
    A = _block_matrix(colloc, sources, material, omega)
    rhs = np.stack([-np.asarray(inc(colloc)).reshape(-1) for inc in incidents], axis=1)
    # column equilibration keeps the truncation level meaningful
    scale = np.linalg.norm(A, axis=0)
    try:
        sol, _, rank, sv = scipy.linalg.lstsq(A / scale, rhs, cond=config.svd_cutoff,
                                              lapack_driver="gelsd", check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DecompositionError(f"least-squares factorisation failed: {exc}") from exc
    coef = sol / scale[:, None]
    if not np.all(np.isfinite(coef)):
        raise DecompositionError("non-finite coefficients")
    logger.debug("MFS system %s, rank %d, cond %.3g", A.shape, rank, sv[0] / sv[min(rank, len(sv)) - 1])
    results = []
    for j in range(len(incidents)):
        per = []
        start = 0
        for comp, (src, _) in zip(comps, layout):
            m = len(src)
            c = coef[3 * start:3 * (start + m), j].reshape(m, 3)
            per.append(MfsSolution(comp, src, c, material, float(omega), rank=int(rank)))
            start += m
        results.append(per)
    return results


def boundary_residual(solutions, wave, material: Material, n_test: int = 40,
                      component: Optional[int] = None):
    """Relative L2 misfit of ``u_sc + u_in`` on an independent surface quadrature.

    ``solutions`` may be one :class:`MfsSolution` or the full list of a joint
    solve; the scattered field is always summed over all of them. ``wave`` is
    an :class:`IncidentWave` or a callable incident field. Returns the misfit
    of component ``component``, or the largest over all components.
    """
    sols = [solutions] if isinstance(solutions, MfsSolution) else list(solutions)
    inc = (lambda x: incident_field(wave, material, x)) if isinstance(wave, IncidentWave) else wave
    targets = range(len(sols)) if component is None else [component]
    worst = 0.0
    for j in targets:
        comp = sols[j].component
        q = sample_surface(comp.shape, comp.placement, n_test, n_test + 1)
        u_in = np.asarray(inc(q.points))
        total = scattered_field(sols, q.points) + u_in
        num = np.sum(q.weights * np.sum(np.abs(total) ** 2, axis=1))
        den = np.sum(q.weights * np.sum(np.abs(u_in) ** 2, axis=1))
        worst = max(worst, math.sqrt(num / den))
    return worst


def solve_mfs(scene: Scene, wave: IncidentWave, material: Material,
              config: MfsConfig = MfsConfig()) -> List[MfsSolution]:
    """Solve the rigid scattering problem for ``scene``; one solution per component."""
    if wave.omega <= 0:
        raise InputError("omega must be positive")
    (sols,) = solve_mfs_rhs(scene, material, wave.omega,
                            [lambda x: incident_field(wave, material, x)], config)
    _attach_residuals(sols, wave, material, config)
    return sols


def _attach_residuals(sols, wave, material, config):
    for j, s in enumerate(sols):
        s.wave = wave
        s.residual = boundary_residual(sols, wave, material, config.n_test, component=j)
        if s.residual > config.residual_tol:
            msg = f"boundary residual {s.residual:.2e} exceeds {config.residual_tol:g}"
            s.warnings.append(msg)
            logger.warning("component %d: %s", j, msg)


def solve_mfs_pure(scene: Scene, wave: IncidentWave, material: Material,
                   config: MfsConfig = MfsConfig()):
    """Solve for the pure pressure and pure shear parts of ``wave`` in one factorisation."""
    waves = (wave.pressure_part(), wave.shear_part())
    out = solve_mfs_rhs(scene, material, wave.omega,
                        [lambda x, w=w: incident_field(w, material, x) for w in waves], config)
    for w, sols in zip(waves, out):
        _attach_residuals(sols, w, material, config)
    return out


def farfield_from_mfs(solutions: Sequence[MfsSolution], grid: SphereGrid, material: Material,
                      omega: float, wave: Optional[IncidentWave] = None) -> FarField:
    """Far-field pattern of the fitted sources, sampled on ``grid``."""
    sols = list(solutions)
    for s in sols:
        if s.material != material or s.omega != omega:
            raise InputError("solution computed for a different material or frequency")
    if wave is None:
        if not sols or sols[0].wave is None:
            raise InputError("incident wave unknown; pass wave explicitly")
        wave = sols[0].wave
    if sols:
        src = np.concatenate([s.source_points for s in sols])
        coef = np.concatenate([s.coefficients for s in sols])
    else:
        src = np.zeros((0, 3))
        coef = np.zeros((0, 3), dtype=complex)

    def evaluator(x):
        return point_source_farfield(x, src, coef, material, omega)

    prov = {"source": "mfs", "components": len(sols),
            "residual": max((s.residual for s in sols), default=0.0)}
    return FarField(grid, evaluator(grid.nodes), material, wave, FARFIELD_CONVENTION, prov, evaluator)


def simulate_farfield(scene: Scene, wave: IncidentWave, material: Material, grid: SphereGrid,
                      config: MfsConfig = MfsConfig()) -> FarField:
    """Convenience: solve and sample the far field in one call."""
    sols = solve_mfs(scene, wave, material, config)
    return farfield_from_mfs(sols, grid, material, wave.omega, wave)
