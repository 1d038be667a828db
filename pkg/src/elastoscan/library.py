"""Reference libraries of precomputed far-field signatures.

Each entry is a reference shape with an orientation and a scale, centred at
the origin, together with its far fields for the two pure incidences that
make up the experiment's incident wave. Entries sharing a shape and scale are
computed from a single factorisation: the far field of ``R D`` under the wave
``(d, dperp)`` is ``R u(R^T xhat)`` of ``D`` under ``(R^T d, R^T dperp)``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .core import InputError, IncidentWave, Material, SphereGrid, incident_field
from .farfield import FarField, rotate_farfield
from .forward import MfsConfig, _attach_residuals, farfield_from_mfs, solve_mfs_rhs
from .geometry import Placement, ReferenceShape, Scene, make_shape, rotation_matrix, Component

logger = logging.getLogger(__name__)

DISTINCTNESS_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class LibraryEntry:
    shape_id: str
    euler: tuple
    scale: float
    fp: FarField
    fs: FarField
    residual: float = 0.0

    @property
    def parts(self):
        return (self.fp, self.fs)

    @property
    def label(self) -> str:
        deg = ",".join(f"{math.degrees(a):g}" for a in self.euler)
        return f"{self.shape_id}[{deg}]x{self.scale:g}"

    def signature(self, wave: IncidentWave) -> np.ndarray:
        """Far-field values for the mixed wave ``alpha * P + beta * S``."""
        return wave.alpha * self.fp.values + wave.beta * self.fs.values

    def norm(self, wave: IncidentWave) -> float:
        v = self.signature(wave)
        return math.sqrt(float(np.sum(self.fp.grid.weights * np.sum(np.abs(v) ** 2, axis=1))))

    def component(self, position=(0.0, 0.0, 0.0)) -> Component:
        return Component(make_shape(self.shape_id), Placement(tuple(position), self.euler, self.scale))


@dataclass
class ReferenceLibrary:
    """Ordered set of reference signatures (largest signature norm first)."""

    entries: List[LibraryEntry]
    wave: IncidentWave
    material: Material
    grid: SphereGrid
    net: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)
    polarization: dict = field(default_factory=dict)  # shape_id -> unit-scale tensor

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def norms(self) -> np.ndarray:
        return np.array([e.norm(self.wave) for e in self.entries])

    def sort(self) -> None:
        order = np.argsort(-self.norms(), kind="stable")
        self.entries = [self.entries[i] for i in order]

    def find(self, shape_id, euler=None, scale=None) -> Optional[LibraryEntry]:
        sid = make_shape(shape_id).shape_id
        for e in self.entries:
            if e.shape_id != sid:
                continue
            if euler is not None and not np.allclose(e.euler, euler, atol=1e-9):
                continue
            if scale is not None and abs(e.scale - scale) > 1e-9:
                continue
            return e
        return None


def in_plane_rotations(n: int, axis: str = "y") -> list:
    """``n`` equally spaced rotations about ``axis`` as Z-Y-Z Euler triples."""
    step = 2.0 * math.pi / n
    if axis == "y":
        return [(0.0, k * step, 0.0) for k in range(n)]
    if axis == "z":
        return [(k * step, 0.0, 0.0) for k in range(n)]
    if axis == "x":
        # Rx(a) = Rz(-pi/2) Ry(a) Rz(pi/2)
        return [(-math.pi / 2, k * step, math.pi / 2) for k in range(n)]
    raise InputError(f"unknown rotation axis {axis!r}")


def rotation_net(n: int, axes=("y",)) -> list:
    """Union of ``n`` in-plane rotations about each axis, duplicates removed."""
    out, mats = [], []
    for ax in axes:
        for e in in_plane_rotations(n, ax):
            R = rotation_matrix(e)
            if not any(np.allclose(R, M, atol=1e-9) for M in mats):
                out.append(e)
                mats.append(R)
    return out


def _snap_wave(f: FarField, wave: IncidentWave) -> FarField:
    if not (np.allclose(f.wave.d, wave.d, atol=1e-10) and np.allclose(f.wave.dperp, wave.dperp, atol=1e-10)):
        raise InputError("rotated far field does not match the library wave")
    return replace(f, wave=wave)


def simulate_oriented(shape, scale: float, eulers: Sequence, wave: IncidentWave, material: Material,
                      grid: SphereGrid, config: MfsConfig = MfsConfig()):
    """Pure-incidence far fields of ``shape`` at ``scale`` for every orientation.

    Returns a list of ``(fp, fs, residual)``, one per Euler triple, all from one
    factorisation.
    """
    shape = make_shape(shape)
    ref = Scene([Component(shape, Placement((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), scale))])
    pw, sw = wave.pressure_part(), wave.shear_part()
    rots = [rotation_matrix(e) for e in eulers]
    waves = []
    for R in rots:
        waves.extend([pw.rotated(R.T), sw.rotated(R.T)])
    sols = solve_mfs_rhs(ref, material, wave.omega,
                         [lambda x, w=w: incident_field(w, material, x) for w in waves], config)
    out = []
    for i, R in enumerate(rots):
        fields = []
        worst = 0.0
        for w, target, s in zip(waves[2 * i:2 * i + 2], (pw, sw), sols[2 * i:2 * i + 2]):
            _attach_residuals(s, w, material, config)
            worst = max(worst, s[0].residual)
            f = farfield_from_mfs(s, grid, material, wave.omega, w)
            fields.append(_snap_wave(rotate_farfield(f, R), target))
        out.append((fields[0], fields[1], worst))
    return out


def audit_library(entries: Sequence[LibraryEntry], wave: IncidentWave, tol: float = DISTINCTNESS_TOL) -> dict:
    """Minimum normalised L2 gap between distinct entries."""
    sigs = [e.signature(wave) for e in entries]
    w = entries[0].fp.grid.weights if entries else None
    norms = [math.sqrt(float(np.sum(w * np.sum(np.abs(s) ** 2, axis=1)))) for s in sigs]
    gap_min = math.inf
    close = []
    for i, j in itertools.combinations(range(len(entries)), 2):
        d = sigs[i] - sigs[j]
        gap = math.sqrt(float(np.sum(w * np.sum(np.abs(d) ** 2, axis=1)))) / max(norms[i], norms[j], 1e-300)
        gap_min = min(gap_min, gap)
        if gap < tol:
            close.append((entries[i].label, entries[j].label, gap))
    return {"min_gap": gap_min, "tolerance": tol, "close_pairs": close, "passed": not close}


def build_library(shapes: Sequence, rotations: Sequence, scales: Sequence[float], material: Material,
                  wave: IncidentWave, grid: SphereGrid, config: MfsConfig = MfsConfig(),
                  net: Optional[dict] = None, polarization: bool = False) -> ReferenceLibrary:
    """Simulate every (shape, rotation, scale) entry and sort by signature norm.

    ``rotations`` is either a list of Euler triples applied to every shape or
    an integer ``n`` meaning ``n`` equally spaced rotations about ``y``.
    With ``polarization=True`` the unit-scale polarization tensor of every
    shape is stored alongside (rotate and scale it for any entry).
    """
    if not shapes or not len(scales):
        raise InputError("library needs at least one shape and one scale")
    if np.isscalar(rotations):
        step = 2.0 * math.pi / int(rotations)
        eulers = in_plane_rotations(int(rotations))
    else:
        step = None
        eulers = [tuple(map(float, e)) for e in rotations]
    if not eulers:
        raise InputError("library needs at least one rotation")
    entries = []
    for shape in shapes:
        sh = make_shape(shape)
        for r in scales:
            logger.info("library: %s at scale %g, %d orientations", sh.shape_id, r, len(eulers))
            for e, (fp, fs, res) in zip(eulers, simulate_oriented(sh, float(r), eulers, wave, material, grid, config)):
                entries.append(LibraryEntry(sh.shape_id, tuple(e), float(r), fp, fs, res))
    lib = ReferenceLibrary(entries, wave, material, grid,
                           net or {"rotations": len(eulers), "rotation_step": step,
                                   "scales": [float(r) for r in scales]})
    if polarization:
        from .asymptotic import polarization_tensor
        lib.polarization = {make_shape(s).shape_id: np.array(polarization_tensor(s, 1.0, material).matrix)
                            for s in shapes}
    lib.sort()
    lib.audit = audit_library(lib.entries, wave)
    if not lib.audit["passed"]:
        logger.warning("library distinctness audit: %d pairs closer than %g",
                       len(lib.audit["close_pairs"]), lib.audit["tolerance"])
    return lib


def scale_farfield_check(shape, placement: Placement, rho: float, material: Material, wave: IncidentWave,
                         grid: SphereGrid, config: MfsConfig = MfsConfig()):
    """Compare ``u(x; rho D, omega)`` with ``rho u(x; D, rho omega)``.

    Returns both fields and their relative L2 discrepancy. The second solve
    uses the unscaled body at the raised frequency.
    """
    if not rho > 0:
        raise InputError("rho must be positive")
    from .forward import simulate_farfield
    shape = make_shape(shape)
    scaled = Placement(placement.position, placement.euler, placement.scale * rho)
    direct = simulate_farfield(Scene([Component(shape, scaled)]), wave, material, grid, config)
    if rho == 1.0:
        return direct, direct, 0.0
    # positions scale with the body
    base = Placement(tuple(np.asarray(placement.position) / rho), placement.euler, placement.scale)
    raised = simulate_farfield(Scene([Component(shape, base)]), wave.with_omega(wave.omega * rho),
                               material, grid, config)
    via = replace(direct, values=rho * raised.values,
                  provenance={"source": "scaling identity", "rho": rho}, evaluator=None)
    err = float(np.sqrt(np.sum(grid.weights * np.sum(np.abs(via.values - direct.values) ** 2, axis=1))
                        / np.sum(grid.weights * np.sum(np.abs(direct.values) ** 2, axis=1))))
    return direct, via, err
