"""Reference bodies of revolution, rigid placements and surface sampling.

Every reference shape is a planar profile ``(x(s), y(s))``, ``s in [0, pi]``,
running from the positive to the negative end of its axis through ``y >= 0``.
Revolving it gives the closed surface

    P(s, phi) = (y(s) cos phi, y(s) sin phi, x(s)),

i.e. the profile axis is stood upright along ``z``. The polar-form profiles
(Acorn, UFO) use the polar angle itself as parameter.

Rotations use intrinsic Z-Y-Z Euler angles ``(theta, phi, psi)``:
``R = Rz(theta) Ry(phi) Rz(psi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .core import InputError

EULER_CONVENTION = "intrinsic ZYZ: R = Rz(theta) Ry(phi) Rz(psi)"

SHAPE_ALIASES = {
    "b": "ball", "ball": "ball",
    "p": "peanut", "peanut": "peanut",
    "k": "kite", "kite": "kite",
    "a": "acorn", "acorn": "acorn",
    "u": "ufo", "ufo": "ufo",
}


def _polar(r, dr):
    def profile(s):
        rr, dd = r(s), dr(s)
        c, sn = np.cos(s), np.sin(s)
        return rr * c, rr * sn, dd * c - rr * sn, dd * sn + rr * c
    return profile


def _ball(s):
    return np.cos(s), np.sin(s), -np.sin(s), np.cos(s)


def _kite(s):
    x = np.cos(s) + 0.65 * np.cos(2 * s) - 0.65
    y = 1.5 * np.sin(s)
    return x, y, -np.sin(s) - 1.3 * np.sin(2 * s), 1.5 * np.cos(s)


def _peanut_r(s):
    return np.sqrt(3.0 * np.cos(s) ** 2 + 1.0)


def _peanut_dr(s):
    return -3.0 * np.cos(s) * np.sin(s) / _peanut_r(s)


_PROFILES = {
    "ball": _ball,
    "peanut": _polar(_peanut_r, _peanut_dr),
    "kite": _kite,
    "acorn": _polar(lambda t: 1.0 + np.cos(t) * np.cos(2 * t) / 3.0,
                    lambda t: (-np.sin(t) * np.cos(2 * t) - 2.0 * np.cos(t) * np.sin(2 * t)) / 3.0),
    "ufo": _polar(lambda t: 1.0 + 0.2 * np.cos(4 * t), lambda t: -0.8 * np.sin(4 * t)),
}

# Offset subtracted from each profile so the body contains the origin.
# All five built-in bodies already contain the origin, so none is shifted.
RECENTER_OFFSETS = {name: (0.0, 0.0, 0.0) for name in _PROFILES}


@dataclass(frozen=True, eq=False)
class ReferenceShape:
    """A body of revolution described by its profile curve.

    ``profile(s)`` returns ``(x, y, dx/ds, dy/ds)`` for ``s`` in ``[0, pi]``.
    """

    shape_id: str
    profile: Callable = field(repr=False, compare=False)

    def __eq__(self, other):
        return isinstance(other, ReferenceShape) and other.shape_id == self.shape_id

    def __hash__(self):
        return hash(self.shape_id)

    def points(self, s, phi):
        """Surface points, unnormalised normals scaled by the area Jacobian."""
        s = np.asarray(s, dtype=float)
        phi = np.asarray(phi, dtype=float)
        x, y, dx, dy = self.profile(s)
        c, sn = np.cos(phi), np.sin(phi)
        pts = np.stack([y * c, y * sn, x + 0.0 * phi], axis=-1)
        # d/ds x d/dphi = y * (-dx cos, -dx sin, dy)
        nrm = np.stack([-dx * c, -dx * sn, dy + 0.0 * phi], axis=-1) * y[..., None]
        return pts, nrm

    def bounding_radius(self, n: int = 721) -> float:
        x, y, _, _ = self.profile(np.linspace(0.0, math.pi, n))
        return float(np.max(np.hypot(x, y)))


def make_shape(shape_id) -> ReferenceShape:
    if isinstance(shape_id, ReferenceShape):
        return shape_id
    key = SHAPE_ALIASES.get(str(shape_id).strip().lower())
    if key is None:
        raise InputError(f"unknown shape id {shape_id!r}")
    return ReferenceShape(key, _PROFILES[key])


def custom_shape(name: str, x: Callable, y: Callable, h: float = 1e-6) -> ReferenceShape:
    """Wrap a user profile ``x(s), y(s)`` on ``[0, pi]``; derivatives by central differences."""
    def profile(s):
        s = np.asarray(s, dtype=float)
        return (x(s), y(s), (x(s + h) - x(s - h)) / (2 * h), (y(s + h) - y(s - h)) / (2 * h))
    return ReferenceShape(name, profile)


def rotation_matrix(euler: Sequence[float]) -> np.ndarray:
    return Rotation.from_euler("ZYZ", list(euler)).as_matrix()


@dataclass(frozen=True)
class Placement:
    position: tuple = (0.0, 0.0, 0.0)
    euler: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        eul = tuple(float(v) for v in self.euler)
        if len(pos) != 3 or len(eul) != 3:
            raise InputError("position and euler need three entries")
        if not self.scale > 0:
            raise InputError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "euler", eul)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.euler)

    def moved(self, position) -> "Placement":
        return Placement(tuple(position), self.euler, self.scale)


def apply_placement(shape: ReferenceShape, placement: Placement, points) -> np.ndarray:
    """Map reference points ``p`` to ``z + R (r p)``."""
    p = np.asarray(points, dtype=float)
    return np.asarray(placement.position) + placement.scale * p @ placement.rotation.T


@dataclass(frozen=True)
class SurfaceSample:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    spacing: Optional[np.ndarray] = None
    convexity: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.weights)

    @property
    def area(self) -> float:
        return float(self.weights.sum())


def _place_sample(pts, nrm, placement: Placement):
    lengths = np.linalg.norm(nrm, axis=1)
    normals = nrm / lengths[:, None]
    R = placement.rotation
    world = np.asarray(placement.position) + placement.scale * pts @ R.T
    normals = normals @ R.T
    # outward orientation check against the centroid
    centroid = world.mean(axis=0)
    if np.mean(np.einsum("ij,ij->i", world - centroid, normals)) < 0:
        normals = -normals
    return world, normals, lengths


def sample_surface(shape: ReferenceShape, placement: Placement = Placement(),
                   n_s: int = 32, n_rev: int = 32) -> SurfaceSample:
    """Tensor-product quadrature: Gauss-Legendre in ``s`` x trapezoid in azimuth."""
    if n_s < 8 or n_rev < 8:
        raise InputError("surface sampling needs n_s, n_rev >= 8")
    t, wt = np.polynomial.legendre.leggauss(n_s)
    s = 0.5 * math.pi * (t + 1.0)
    ws = 0.5 * math.pi * wt
    phi = 2.0 * math.pi * np.arange(n_rev) / n_rev
    S, PHI = np.meshgrid(s, phi, indexing="ij")
    pts, nrm = shape.points(S.ravel(), PHI.ravel())
    world, normals, jac = _place_sample(pts, nrm, placement)
    weights = np.repeat(ws, n_rev) * (2.0 * math.pi / n_rev) * jac * placement.scale ** 2
    return SurfaceSample(world, normals, weights)


def principal_curvatures(shape: ReferenceShape, s):
    """Meridian and parallel curvatures at ``s``; positive where convex."""
    s = np.asarray(s, dtype=float)
    x, y, dx, dy = shape.profile(s)
    h = 1e-5
    _, _, dx1, dy1 = shape.profile(s + h)
    _, _, dx0, dy0 = shape.profile(s - h)
    ddx, ddy = (dx1 - dx0) / (2 * h), (dy1 - dy0) / (2 * h)
    speed = np.hypot(dx, dy)
    k_meridian = (dx * ddy - dy * ddx) / speed ** 3
    with np.errstate(divide="ignore", invalid="ignore"):
        k_parallel = np.where(y > 1e-8 * speed, -dx / (y * speed), k_meridian)
    return k_meridian, k_parallel


def principal_curvature(shape: ReferenceShape, s) -> np.ndarray:
    """Largest absolute principal curvature of the revolved surface at ``s``."""
    k1, k2 = principal_curvatures(shape, s)
    return np.maximum(np.abs(k1), np.abs(k2))


def _warp_table(shape: ReferenceShape, refine: float, h0: float, n: int = 4001):
    s = np.linspace(0.0, math.pi, n)
    x, y, dx, dy = shape.profile(s)
    speed = np.hypot(dx, dy)
    dens = np.maximum(1.0, refine * h0 * principal_curvature(shape, s)) if refine > 0 else np.ones_like(s)
    f = speed * dens
    tau = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(s))])
    return s, tau, y, dens


def balanced_points(shape: ReferenceShape, placement: Placement, n_points: int,
                    refine: float = 0.0) -> SurfaceSample:
    """Roughly uniform point set of about ``n_points`` nodes on the placed surface.

    Rings are spaced evenly in profile arclength; each ring carries a number of
    points proportional to its circumference, with a golden-angle stagger.
    With ``refine > 0`` the local spacing shrinks to about
    ``1 / (refine * curvature)`` where the surface is strongly curved. The
    local spacing is returned in :attr:`SurfaceSample.spacing`.
    """
    if n_points < 8:
        raise InputError("need at least 8 points")
    s0 = np.linspace(0.0, math.pi, 4001)
    _, y0, dx0, dy0 = shape.profile(s0)
    area = 2.0 * math.pi * np.trapezoid(y0 * np.hypot(dx0, dy0), s0)
    h_ref = math.sqrt(area / n_points)

    def layout(h):
        s_tab, tau, y_tab, dens_tab = _warp_table(shape, refine, h)
        n_rings = max(2, int(round(tau[-1] / h)))
        a = (np.arange(n_rings) + 0.5) * tau[-1] / n_rings
        s = np.interp(a, tau, s_tab)
        dens = np.interp(s, s_tab, dens_tab)
        _, y, _, _ = shape.profile(s)
        spacing = tau[-1] / n_rings / dens
        counts = np.maximum(1, np.round(2.0 * math.pi * y / spacing).astype(int))
        return s, counts, spacing

    # the count is only piecewise monotone in h; keep the closest layout seen
    lo, hi = 0.2 * h_ref, 2.0 * h_ref
    best = None
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        cand = layout(mid)
        total = cand[1].sum()
        if best is None or abs(total - n_points) < abs(best[1].sum() - n_points):
            best = cand
        if total > n_points:
            lo = mid
        else:
            hi = mid
    s, counts, spacing = best
    golden = math.pi * (3.0 - math.sqrt(5.0))
    S = np.repeat(s, counts)
    PHI = np.concatenate([(2.0 * math.pi * np.arange(c) / c + i * golden) for i, c in enumerate(counts)])
    pts, nrm = shape.points(S, PHI)
    world, normals, _ = _place_sample(pts, nrm, placement)
    _, y, _, _ = shape.profile(s)
    weights = np.repeat(2.0 * math.pi * y * spacing / counts, counts) * placement.scale ** 2
    k1, k2 = principal_curvatures(shape, s)
    convex = np.maximum(np.maximum(k1, k2), 0.0)
    return SurfaceSample(world, normals, weights, np.repeat(spacing, counts) * placement.scale,
                         np.repeat(convex, counts) / placement.scale)


@dataclass(frozen=True)
class Component:
    shape: ReferenceShape
    placement: Placement

    @property
    def bounding_radius(self) -> float:
        return self.shape.bounding_radius() * self.placement.scale


SCENE_CLASSES = ("small", "extended", "multiscale")


@dataclass(frozen=True)
class Scene:
    components: tuple
    kind: str = "extended"

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.kind not in SCENE_CLASSES:
            raise InputError(f"scene class must be one of {SCENE_CLASSES}")
        check_separation(self.components)

    def __len__(self):
        return len(self.components)

    @property
    def diameter(self) -> float:
        if not self.components:
            return 0.0
        lo = np.min([np.asarray(c.placement.position) - c.bounding_radius for c in self.components], axis=0)
        hi = np.max([np.asarray(c.placement.position) + c.bounding_radius for c in self.components], axis=0)
        return float(np.linalg.norm(hi - lo))


def surface_distance(a: Component, b: Component, n: int = 24) -> float:
    pa = sample_surface(a.shape, a.placement, n, n).points
    pb = sample_surface(b.shape, b.placement, n, n).points
    return float(cKDTree(pa).query(pb)[0].min())


def _inside(surface: SurfaceSample, x) -> np.ndarray:
    """Solid angle subtended by the closed surface, divided by 4 pi (1 inside, 0 outside)."""
    r = surface.points[None, :, :] - np.atleast_2d(x)[:, None, :]
    dist = np.linalg.norm(r, axis=2)
    flux = np.einsum("mki,ki->mk", r, surface.normals) / dist ** 3
    return (flux @ surface.weights) / (4.0 * math.pi)


def check_separation(components) -> None:
    """Reject scenes whose components touch or overlap."""
    for i, a in enumerate(components):
        for b in components[i + 1:]:
            gap = np.linalg.norm(np.subtract(a.placement.position, b.placement.position))
            if gap > a.bounding_radius + b.bounding_radius:
                continue
            if gap <= 1e-9 or surface_distance(a, b) <= 1e-9:
                raise InputError("scene components overlap")
            sa = sample_surface(a.shape, a.placement, 24, 24)
            sb = sample_surface(b.shape, b.placement, 24, 24)
            for outer, probe in ((sa, sb), (sb, sa)):
                # the quadrature is unreliable within about one node spacing of the surface
                h = math.sqrt(outer.area / len(outer))
                far = cKDTree(outer.points).query(probe.points)[0] > h
                if np.any(_inside(outer, probe.points[far]) > 0.5):
                    raise InputError("scene components overlap")


def component(shape_id, position=(0.0, 0.0, 0.0), euler=(0.0, 0.0, 0.0), scale=1.0) -> Component:
    return Component(make_shape(shape_id), Placement(position, euler, scale))
