"""Far-field patterns and the exact operations on them.

A far field is sampled on a :class:`~elastoscan.core.SphereGrid` as an array
``(K, 3)`` of complex vectors. The normalisation convention used throughout
the package is

    u_sc(x) ~ exp(i kp r) / (4 pi (lambda + 2 mu) r) * u_p(xhat)
            + exp(i ks r) / (4 pi mu r) * u_s(xhat),

so that a unit point force ``c`` at ``y`` radiates
``u_p = xhat xhat^T c exp(-i kp xhat.y)`` and
``u_s = (I - xhat xhat^T) c exp(-i ks xhat.y)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import (InputError, IncidentWave, Material, SphereGrid, l2_inner,
                   l2_norm, wavenumbers)

logger = logging.getLogger(__name__)

FARFIELD_CONVENTION = "point-source-unit/v1"


@dataclass(frozen=True, eq=False)
class FarField:
    """Sampled far-field pattern with the metadata needed to interpret it.

    ``evaluator``, when present, maps unit directions ``(n, 3)`` to values
    ``(n, 3)`` and allows exact resampling (used by rotation).
    """

    grid: SphereGrid
    values: np.ndarray
    material: Material
    wave: IncidentWave
    convention: str = FARFIELD_CONVENTION
    provenance: dict = field(default_factory=dict)
    evaluator: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (len(self.grid), 3):
            raise InputError(f"far-field values must have shape ({len(self.grid)}, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("far-field values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def omega(self) -> float:
        return self.wave.omega

    def with_values(self, values, **provenance) -> "FarField":
        prov = dict(self.provenance)
        prov.update(provenance)
        return replace(self, values=np.asarray(values, dtype=complex), provenance=prov, evaluator=None)

    def norm(self) -> float:
        return l2_norm(self)

    def __add__(self, other: "FarField") -> "FarField":
        check_compatible(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "FarField") -> "FarField":
        check_compatible(self, other)
        return self.with_values(self.values - other.values)


def check_compatible(f: FarField, g: FarField, same_wave: bool = True) -> None:
    if not f.grid.same_as(g.grid):
        raise InputError("far fields sampled on different grids")
    if f.material != g.material or f.omega != g.omega:
        raise InputError("far fields computed for different material or frequency")
    if f.convention != g.convention:
        raise InputError("far fields use different normalisation conventions")
    if same_wave and f.wave != g.wave:
        raise InputError("far fields computed for different incident waves")


def inner(f: FarField, g: FarField) -> complex:
    return l2_inner(f, g)


def split_ps(f: FarField):
    """Return the longitudinal and transversal parts ``(u_p, u_s)``."""
    x = f.grid.nodes
    radial = np.einsum("ki,ki->k", x, f.values)[:, None] * x
    return f.with_values(radial, part="p"), f.with_values(f.values - radial, part="s")


def point_source_farfield(directions, sources, charges, material: Material, omega: float):
    """Far field of point forces ``charges (m, 3)`` located at ``sources (m, 3)``."""
    k = wavenumbers(material, omega)
    x = np.asarray(directions, dtype=float)
    y = np.asarray(sources, dtype=float)
    c = np.asarray(charges, dtype=complex)
    phase = x @ y.T
    sp = np.exp(-1j * k.kp * phase) @ c
    ss = np.exp(-1j * k.ks * phase) @ c
    return np.einsum("ki,ki->k", x, sp)[:, None] * x + ss - np.einsum("ki,ki->k", x, ss)[:, None] * x


# ---------------------------------------------------------------------------
# Exact transformations
# ---------------------------------------------------------------------------
def _translation_phases(f: FarField, shift: np.ndarray):
    k = wavenumbers(f.material, f.omega)
    x = f.grid.nodes
    d = np.asarray(f.wave.d)
    xs = x @ shift
    ds = float(d @ shift)
    # (incident kp or ks) x (outgoing kp or ks)
    return {(a, b): np.exp(1j * (ka * ds - kb * xs))
            for a, ka in (("p", k.kp), ("s", k.ks)) for b, kb in (("p", k.kp), ("s", k.ks))}


def incidence_of(wave: IncidentWave) -> str:
    """``"pressure"`` or ``"shear"`` for a pure wave; rejects mixed waves."""
    if not wave.is_pure:
        raise InputError("mixed incident wave; handle each pure part separately")
    return "pressure" if wave.beta == 0 else "shear"


def translate_farfield(f: FarField, shift, incidence: Optional[str] = None) -> FarField:
    """Far field of the same body moved by ``shift``.

    Exact for a pure incident wave. ``incidence`` (``"pressure"`` or
    ``"shear"``), if given, must agree with the field's metadata.
    """
    shift = np.asarray(shift, dtype=float)
    if shift.shape != (3,):
        raise InputError("shift must be a 3-vector")
    kind = incidence_of(f.wave)
    if incidence is not None and incidence != kind:
        raise InputError(f"field was computed for {kind} incidence, not {incidence}")
    inc = kind[0]
    ph = _translation_phases(f, shift)
    up, us = split_ps(f)
    vals = ph[(inc, "p")][:, None] * up.values + ph[(inc, "s")][:, None] * us.values
    out = f.with_values(vals, translated=tuple(shift))
    if f.evaluator is not None:
        object.__setattr__(out, "evaluator", _translated_evaluator(f, shift, inc))
    return out


def _translated_evaluator(f: FarField, shift, inc):
    k = wavenumbers(f.material, f.omega)
    kin = k.kp if inc == "p" else k.ks
    ds = float(np.asarray(f.wave.d) @ shift)
    base = f.evaluator

    def ev(x):
        x = np.asarray(x, dtype=float)
        v = base(x)
        rad = np.einsum("ki,ki->k", x, v)[:, None] * x
        xs = x @ shift
        return (np.exp(1j * (kin * ds - k.kp * xs))[:, None] * rad
                + np.exp(1j * (kin * ds - k.ks * xs))[:, None] * (v - rad))
    return ev


def rotate_farfield(f: FarField, R) -> FarField:
    """Far field of the rotated body under the rotated incident wave.

    ``u_R(xhat) = R u(R^T xhat)``. Needs either an evaluator or a grid that
    the rotation maps onto itself (rotations about ``z`` by multiples of the
    azimuthal step).
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or np.abs(R @ R.T - np.eye(3)).max() > 1e-10 or np.linalg.det(R) < 0:
        raise InputError("R must be a proper rotation matrix")
    x = f.grid.nodes
    back = x @ R  # rows: R^T xhat
    if f.evaluator is not None:
        vals = f.evaluator(back)
    else:
        idx = _grid_permutation(f.grid, back)
        if idx is None:
            raise InputError("rotation does not map the grid onto itself and no evaluator is available")
        vals = f.values[idx]
    out = replace(f, values=vals @ R.T, wave=f.wave.rotated(R), evaluator=None,
                  provenance={**f.provenance, "rotated": R.round(15).tolist()})
    if f.evaluator is not None:
        base = f.evaluator
        object.__setattr__(out, "evaluator", lambda y: base(np.asarray(y) @ R) @ R.T)
    return out


def _grid_permutation(grid: SphereGrid, points, tol: float = 1e-10):
    from scipy.spatial import cKDTree
    dist, idx = cKDTree(grid.nodes).query(points)
    return idx if np.all(dist < tol) else None


def add_noise(f: FarField, level: float, seed=None) -> FarField:
    """Multiply every real and imaginary entry by ``1 + level * xi``, ``xi ~ U[-1, 1]``."""
    if level < 0:
        raise InputError("noise level must be non-negative")
    rng = np.random.default_rng(seed)
    shape = f.values.shape
    re = f.values.real * (1.0 + level * rng.uniform(-1.0, 1.0, shape))
    im = f.values.imag * (1.0 + level * rng.uniform(-1.0, 1.0, shape))
    return f.with_values(re + 1j * im, noise={"level": float(level), "seed": seed, "model": "multiplicative-uniform"})


def subtract_library_entry(f: FarField, entry, positions, wave: Optional[IncidentWave] = None) -> FarField:
    """Remove copies of ``entry`` located at ``positions`` from ``f``.

    ``entry`` supplies far fields for both pure incidences (a
    :class:`~elastoscan.library.LibraryEntry` or a pair ``(f_p, f_s)``); they
    are combined with the weights ``alpha, beta`` of ``wave`` (default: the
    data's wave) after translation to each position.
    """
    wave = f.wave if wave is None else wave
    positions = [np.asarray(z, dtype=float) for z in positions]
    if not positions:
        return f
    parts = getattr(entry, "parts", entry)
    parts = tuple(parts) if isinstance(parts, (tuple, list)) else (parts,)
    weights = {"pressure": wave.alpha, "shear": wave.beta}
    have = set()
    total = np.zeros_like(f.values)
    for part in parts:
        check_compatible(f, part, same_wave=False)
        if part.wave.d != wave.d or part.wave.dperp != wave.dperp:
            raise InputError("library entry computed for a different incident direction")
        kind = incidence_of(part.wave)
        have.add(kind)
        amp = part.wave.alpha if kind == "pressure" else part.wave.beta
        coef = weights[kind] / amp
        if coef == 0:
            continue
        for z in positions:
            total = total + coef * translate_farfield(part, z).values
    missing = [k for k, a in weights.items() if a != 0 and k not in have]
    if missing:
        raise InputError(f"library entry lacks the far field for {missing[0]} incidence")
    return f.with_values(f.values - total)
