"""Materials, incident waves, fundamental tensors and sphere quadrature.

Conventions
-----------
Time dependence ``exp(-i omega t)`` is factored out and the density is one.
Wavenumbers are ``kp = omega / sqrt(lambda + 2 mu)`` (compressional) and
``ks = omega / sqrt(mu)`` (shear).

The Kupradze tensor is written as ``Pi(x, y) = A(r) I + B(r) rhat rhat^T`` with
``r = |x - y|``. Both radial functions are obtained in closed form from the
second derivatives of ``exp(i k r) / r``; for small ``k r`` the bracketed
differences are evaluated by their Taylor series to avoid cancellation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi

# Taylor branch below this |k r|; 30 terms reach machine precision there.
_SERIES_SWITCH = 0.5
_SERIES_TERMS = 30


class InputError(ValueError):
    """Rejected input: a precondition of an operation does not hold."""


class SingularityError(ValueError):
    """A fundamental tensor was requested at (or too close to) its pole."""


@dataclass(frozen=True)
class Material:
    """Isotropic homogeneous elastic background (unit density).

    Attributes
    ----------
    lam : float
        First Lame constant.
    mu : float
        Shear modulus.
    """

    lam: float
    mu: float

    def __post_init__(self):
        if not (self.mu > 0 and 3 * self.lam + 2 * self.mu > 0):
            raise InputError(
                f"inadmissible Lame constants lambda={self.lam}, mu={self.mu}: "
                "need mu > 0 and 3 lambda + 2 mu > 0"
            )


@dataclass(frozen=True)
class WaveNumbers:
    omega: float
    kp: float
    ks: float


def wavenumbers(material: Material, omega: float) -> WaveNumbers:
    """Compressional and shear wavenumbers at angular frequency ``omega``."""
    if not (isinstance(material, Material)):
        raise InputError("material must be a Material")
    if not omega > 0:
        raise InputError(f"omega must be positive, got {omega}")
    kp = omega / math.sqrt(material.lam + 2.0 * material.mu)
    ks = omega / math.sqrt(material.mu)
    return WaveNumbers(omega=float(omega), kp=kp, ks=ks)


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave ``alpha d exp(i kp x.d) + beta dperp exp(i ks x.d)``."""

    d: tuple
    dperp: tuple
    alpha: complex
    beta: complex
    omega: float

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        dp = np.asarray(self.dperp, dtype=float)
        if d.shape != (3,) or dp.shape != (3,):
            raise InputError("d and dperp must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12 or abs(np.linalg.norm(dp) - 1.0) > 1e-12:
            raise InputError("d and dperp must be unit vectors")
        if abs(d @ dp) > 1e-12:
            raise InputError("dperp must be orthogonal to d")
        if not self.omega > 0:
            raise InputError("omega must be positive")
        object.__setattr__(self, "d", tuple(float(v) for v in d))
        object.__setattr__(self, "dperp", tuple(float(v) for v in dp))
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "beta", complex(self.beta))
        object.__setattr__(self, "omega", float(self.omega))

    @property
    def is_pure(self) -> bool:
        return self.alpha * self.beta == 0

    def pressure_part(self) -> "IncidentWave":
        return IncidentWave(self.d, self.dperp, 1.0, 0.0, self.omega)

    def shear_part(self) -> "IncidentWave":
        return IncidentWave(self.d, self.dperp, 0.0, 1.0, self.omega)

    def rotated(self, R: np.ndarray) -> "IncidentWave":
        R = np.asarray(R, dtype=float)
        return IncidentWave(R @ np.asarray(self.d), R @ np.asarray(self.dperp),
                            self.alpha, self.beta, self.omega)

    def with_omega(self, omega: float) -> "IncidentWave":
        return IncidentWave(self.d, self.dperp, self.alpha, self.beta, omega)


def incident_field(wave: IncidentWave, material: Material, x) -> np.ndarray:
    """Evaluate the incident displacement at one point ``(3,)`` or many ``(n, 3)``."""
    k = wavenumbers(material, wave.omega)
    x = np.asarray(x, dtype=float)
    d = np.asarray(wave.d)
    phase = x @ d
    out = (wave.alpha * np.exp(1j * k.kp * phase))[..., None] * d \
        + (wave.beta * np.exp(1j * k.ks * phase))[..., None] * np.asarray(wave.dperp)
    return out


# ---------------------------------------------------------------------------
# Fundamental tensors
# ---------------------------------------------------------------------------
def _series(x: np.ndarray, coef) -> np.ndarray:
    """sum_{m>=2} (i x)^m coef(m) / m!  evaluated by Horner-free accumulation."""
    ix = 1j * x
    term = ix * ix / 2.0
    total = term * coef(2)
    for m in range(3, _SERIES_TERMS):
        term = term * ix / m
        total = total + term * coef(m)
    return total


def _h1(x: np.ndarray) -> np.ndarray:
    # exp(ix)(ix - 1) + 1
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_SWITCH
    closed = np.exp(1j * x) * (1j * x - 1.0) + 1.0
    if np.any(small):
        closed = np.where(small, _series(np.where(small, x, 0.0), lambda m: m - 1), closed)
    return closed


def _h2(x: np.ndarray) -> np.ndarray:
    # exp(ix)(3 - 3ix - x^2) - 3
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_SWITCH
    closed = np.exp(1j * x) * (3.0 - 3.0j * x - x * x) - 3.0
    if np.any(small):
        closed = np.where(small, _series(np.where(small, x, 0.0), lambda m: (m - 1) * (m - 3)), closed)
    return closed


def kupradze_coefficients(r: np.ndarray, material: Material, omega: float):
    """Radial functions ``A(r), B(r)`` with ``Pi = A I + B rhat rhat^T``."""
    k = wavenumbers(material, omega)
    r = np.asarray(r, dtype=float)
    w2 = omega * omega
    r3 = r ** 3
    A = np.exp(1j * k.ks * r) / (FOUR_PI * material.mu * r) \
        + (_h1(k.ks * r) - _h1(k.kp * r)) / (FOUR_PI * w2 * r3)
    B = (_h2(k.ks * r) - _h2(k.kp * r)) / (FOUR_PI * w2 * r3)
    return A, B


def _pairwise(x, y, eps):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x[..., None, :] - y[None, ...] if x.ndim == 2 and y.ndim == 2 else x - y
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r <= eps):
        raise SingularityError(f"tensor evaluated within {eps:g} of its pole")
    return diff, r


def kupradze_tensor(x, y, material: Material, omega: float, eps: float = 1e-12) -> np.ndarray:
    """Time-harmonic Green's tensor of the Navier operator.

    ``x`` and ``y`` may be single points or arrays ``(n, 3)`` and ``(m, 3)``;
    in the latter case the result has shape ``(n, m, 3, 3)``.
    """
    diff, r = _pairwise(x, y, eps)
    A, B = kupradze_coefficients(r, material, omega)
    rhat = diff / r[..., None]
    return A[..., None, None] * np.eye(3) + B[..., None, None] * (rhat[..., :, None] * rhat[..., None, :])


def kelvin_tensor(x, y, material: Material, eps: float = 1e-12) -> np.ndarray:
    """Static (omega = 0) Green's tensor; shapes as in :func:`kupradze_tensor`."""
    diff, r = _pairwise(x, y, eps)
    lam, mu = material.lam, material.mu
    denom = 8.0 * math.pi * mu * (lam + 2.0 * mu)
    a = (lam + 3.0 * mu) / denom / r
    b = (lam + mu) / denom / r ** 3
    outer = diff[..., :, None] * diff[..., None, :]
    return a[..., None, None] * np.eye(3) + b[..., None, None] * outer


# ---------------------------------------------------------------------------
# Sphere quadrature
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss-Legendre (in cos polar) x trapezoid (in azimuth) rule on the unit sphere."""

    n_polar: int
    n_azimuth: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    polar: np.ndarray = field(repr=False)
    azimuth: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.weights)

    @property
    def spec(self) -> tuple:
        return (self.n_polar, self.n_azimuth)

    def same_as(self, other: "SphereGrid") -> bool:
        return self is other or (self.spec == other.spec
                                 and np.array_equal(self.nodes, other.nodes))


def make_sphere_grid(n_polar: int, n_azimuth: int) -> SphereGrid:
    if n_polar < 2 or n_azimuth < 4:
        raise InputError(f"sphere grid too small: ({n_polar}, {n_azimuth})")
    t, wt = np.polynomial.legendre.leggauss(n_polar)
    polar = np.arccos(t)
    az = 2.0 * math.pi * np.arange(n_azimuth) / n_azimuth
    P, A = np.meshgrid(polar, az, indexing="ij")
    sinp = np.sqrt(1.0 - t * t)[:, None]
    nodes = np.stack([
        (sinp * np.cos(A)).ravel(),
        (sinp * np.sin(A)).ravel(),
        np.broadcast_to(t[:, None], P.shape).ravel(),
    ], axis=1)
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    weights = np.repeat(wt, n_azimuth) * (2.0 * math.pi / n_azimuth)
    for arr in (nodes, weights):
        arr.setflags(write=False)
    return SphereGrid(n_polar, n_azimuth, nodes, weights, P.ravel(), A.ravel())


def l2_inner(f, g) -> complex:
    """Discrete L2(S^2)^3 inner product ``sum_k w_k f_k . conj(g_k)``."""
    if not f.grid.same_as(g.grid):
        raise InputError("far fields sampled on different grids")
    return complex(np.sum(f.grid.weights * np.sum(f.values * np.conj(g.values), axis=1)))


def l2_norm(f) -> float:
    return math.sqrt(max(l2_inner(f, f).real, 0.0))
