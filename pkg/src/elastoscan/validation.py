"""Identity suite: the exact far-field relations checked against the forward solver.

Each check returns a :class:`Check` with the measured discrepancy and its
tolerance. ``run_identity_suite`` runs them all and ``format_table`` renders
the pass/fail table printed by ``elastoscan validate``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .asymptotic import small_scene_farfield
from .core import IncidentWave, Material, SphereGrid, make_sphere_grid
from .farfield import FarField, rotate_farfield, translate_farfield
from .forward import MfsConfig, simulate_farfield
from .geometry import Placement, Scene, component, rotation_matrix
from .library import scale_farfield_check

logger = logging.getLogger(__name__)

DEFAULT_MATERIAL = Material(2.0, 1.0)
DEFAULT_WAVE = IncidentWave((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), 0.0, 1.0, 2.0)


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)


def rel_l2(f: FarField, ref: FarField) -> float:
    """``||f - ref|| / ||ref||`` in the sphere quadrature."""
    w = ref.grid.weights
    num = np.sum(w * np.sum(np.abs(f.values - ref.values) ** 2, axis=1))
    den = np.sum(w * np.sum(np.abs(ref.values) ** 2, axis=1))
    return float(np.sqrt(num / den))


def _solo(shape, placement: Placement, wave, material, grid, config) -> FarField:
    comp = component(shape, placement.position, placement.euler, placement.scale)
    return simulate_farfield(Scene([comp]), wave, material, grid, config)


def check_translation(shape, shift=(1.0, -0.5, 2.0), material=DEFAULT_MATERIAL, wave=DEFAULT_WAVE,
                      grid=None, config=MfsConfig(), tol=2e-2) -> Check:
    grid = grid or make_sphere_grid(24, 48)
    t = time.perf_counter()
    base = _solo(shape, Placement(), wave, material, grid, config)
    moved = _solo(shape, Placement(tuple(shift)), wave, material, grid, config)
    err = rel_l2(translate_farfield(base, shift), moved)
    return Check(f"translation {shape}", err, tol, err < tol, time.perf_counter() - t)


def check_rotation(shape, euler=(0.3, 0.7, -0.4), material=DEFAULT_MATERIAL, wave=DEFAULT_WAVE,
                   grid=None, config=MfsConfig(), tol=2e-2) -> Check:
    grid = grid or make_sphere_grid(24, 48)
    t = time.perf_counter()
    R = rotation_matrix(euler)
    base = _solo(shape, Placement(), wave, material, grid, config)
    turned = _solo(shape, Placement(euler=tuple(euler)), wave.rotated(R), material, grid, config)
    err = rel_l2(rotate_farfield(base, R), turned)
    return Check(f"rotation {shape}", err, tol, err < tol, time.perf_counter() - t)


def check_scaling(shape, rho=0.5, material=DEFAULT_MATERIAL, wave=DEFAULT_WAVE, grid=None,
                  config=MfsConfig(), tol=2e-2) -> Check:
    grid = grid or make_sphere_grid(24, 48)
    t = time.perf_counter()
    _, _, err = scale_farfield_check(shape, Placement(), rho, material, wave, grid, config)
    return Check(f"scaling {shape} rho={rho:g}", err, tol, err < tol, time.perf_counter() - t)


def check_additivity(separations: Sequence[float] = (5.0, 10.0, 20.0), material=DEFAULT_MATERIAL,
                     wave=DEFAULT_WAVE, grid=None, config=MfsConfig(), tol=5e-2) -> Check:
    """Two unit balls side by side along ``x``: joint solve versus summed single solves.

    The pair is placed across the incident direction; along it, forward
    scattering keeps the interaction large even at separation 20.
    """
    grid = grid or make_sphere_grid(24, 48)
    t = time.perf_counter()
    errs = []
    for L in separations:
        a, b = (-L / 2, 0.0, 0.0), (L / 2, 0.0, 0.0)
        joint = simulate_farfield(Scene([component("ball", a), component("ball", b)]), wave, material, grid, config)
        singles = [_solo("ball", Placement(p), wave, material, grid, config) for p in (a, b)]
        total = joint.with_values(singles[0].values + singles[1].values)
        errs.append(rel_l2(total, joint))
    monotone = all(e2 <= e1 for e1, e2 in zip(errs, errs[1:]))
    return Check("additivity", errs[-1], tol, monotone and errs[-1] < tol, time.perf_counter() - t,
                 {"separations": list(separations), "errors": errs, "monotone": monotone})


def check_asymptotic_order(scales: Sequence[float] = (0.2, 0.1, 0.05), material=DEFAULT_MATERIAL,
                           wave=DEFAULT_WAVE, grid=None, config=MfsConfig(),
                           band=(1.5, 3.0)) -> Check:
    """Single small ball: MFS versus the point-force approximation; ratios of consecutive errors."""
    grid = grid or make_sphere_grid(24, 48)
    t = time.perf_counter()
    errs = []
    for rho in scales:
        comp = component("ball", (0.0, 0.0, 0.0), scale=rho)
        mfs = simulate_farfield(Scene([comp], "small"), wave, material, grid, config)
        asym = small_scene_farfield([comp], wave, material, grid)
        errs.append(rel_l2(asym, mfs))
    ratios = [e1 / e2 for e1, e2 in zip(errs, errs[1:])]
    ok = all(band[0] <= r <= band[1] for r in ratios) and all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    return Check("asymptotic order", min(ratios), band[0], ok, time.perf_counter() - t,
                 {"scales": list(scales), "errors": errs, "ratios": ratios, "band": band})


def run_identity_suite(material: Material = DEFAULT_MATERIAL, wave: IncidentWave = DEFAULT_WAVE,
                       grid: SphereGrid = None, config: MfsConfig = MfsConfig(),
                       include=("translation", "rotation", "scaling", "additivity", "asymptotic")) -> List[Check]:
    grid = grid or make_sphere_grid(24, 48)
    kw = dict(material=material, wave=wave, grid=grid, config=config)
    out = []
    for shape in ("ball", "peanut"):
        if "translation" in include:
            out.append(check_translation(shape, **kw))
        if "rotation" in include:
            out.append(check_rotation(shape, **kw))
        if "scaling" in include:
            out.append(check_scaling(shape, **kw))
    if "additivity" in include:
        out.append(check_additivity(**kw))
    if "asymptotic" in include:
        out.append(check_asymptotic_order(**kw))
    for c in out:
        logger.info("%s: %.3g (tol %.3g) %s", c.name, c.value, c.tolerance, "pass" if c.passed else "FAIL")
    return out


def format_table(checks: Sequence[Check]) -> str:
    rows = [f"{'check':<28} {'value':>11} {'tolerance':>11} {'time[s]':>8}  result"]
    for c in checks:
        rows.append(f"{c.name:<28} {c.value:>11.3e} {c.tolerance:>11.3e} {c.seconds:>8.1f}  "
                    f"{'PASS' if c.passed else 'FAIL'}")
    return "\n".join(rows)
