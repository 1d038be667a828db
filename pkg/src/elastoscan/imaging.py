"""Indicator functions and the three locating schemes.

Small scatterers (Scheme S) are found by correlating the data with the far
fields of unit point forces, ``I_m``. Extended scatterers (Scheme R) are found
by correlating with translated library signatures, ``W_m``, one entry at a
time, removing each identified component before moving on. Multiscale scenes
(Scheme M) run Scheme R first and then Scheme S on the data with a locally
tuned copy of the extended estimate removed.

All correlations are plane-wave sums ``sum_k c_k exp(i k xhat_k . z)`` over a
rectangular lattice; they are evaluated axis by axis, which reduces the cost
to a sequence of small matrix products.

Normalisation. ``I_m`` is divided by the Gram constant of its test fields
(``4 pi / 3``, ``8 pi / 3``, ``4 pi`` for P, S, Full), so that ``0 <= I_m <= 1``
with equality for a single point scatterer. ``W_m`` is divided by the squared
norm of the translated signature twice, so that ``W_m = 1`` when the data is
exactly one translated copy of the entry.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .core import InputError, IncidentWave, wavenumbers
from .farfield import FarField, check_compatible, split_ps, subtract_library_entry
from .geometry import make_shape, rotation_matrix

logger = logging.getLogger(__name__)

MODES = ("P", "S", "Full")
_MODE_ALIASES = {"p": "P", "1": "P", "s": "S", "2": "S", "full": "Full", "3": "Full", "f": "Full"}
GRAM = {"P": 4.0 * math.pi / 3.0, "S": 8.0 * math.pi / 3.0, "Full": 4.0 * math.pi}


def canonical_mode(mode) -> str:
    key = _MODE_ALIASES.get(str(mode).strip().lower())
    if key is None:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    return key


# ---------------------------------------------------------------------------
# Meshes and results
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SamplingMesh:
    """Axis-aligned lattice ``lo + spacing * (i, j, k)`` inside ``[lo, hi]``."""

    lo: tuple
    hi: tuple
    spacing: float

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise InputError("mesh bounds need three entries")
        if not self.spacing > 0:
            raise InputError("mesh spacing must be positive")
        if any(h < l for l, h in zip(lo, hi)):
            raise InputError("mesh box is empty")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def cube(cls, half_width: float, spacing: float, center=(0.0, 0.0, 0.0)) -> "SamplingMesh":
        c = np.asarray(center, dtype=float)
        return cls(tuple(c - half_width), tuple(c + half_width), spacing)

    @property
    def axes(self) -> List[np.ndarray]:
        return [l + self.spacing * np.arange(int(math.floor((h - l) / self.spacing + 1e-9)) + 1)
                for l, h in zip(self.lo, self.hi)]

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    def __len__(self):
        return int(np.prod(self.shape))

    @property
    def points(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def point(self, index) -> np.ndarray:
        return np.array([a[i] for a, i in zip(self.axes, index)])

    def nearest_index(self, p) -> tuple:
        return tuple(int(np.clip(round((v - l) / self.spacing), 0, n - 1))
                     for v, l, n in zip(p, self.lo, self.shape))


@dataclass(frozen=True, eq=False)
class IndicatorField:
    mesh: SamplingMesh
    values: np.ndarray
    mode: str
    provenance: dict = field(default_factory=dict)

    def argmax(self) -> np.ndarray:
        return self.mesh.point(np.unravel_index(np.argmax(self.values), self.values.shape))

    def max(self) -> float:
        return float(np.max(self.values))

    def at(self, p) -> float:
        return float(self.values[self.mesh.nearest_index(p)])


@dataclass(frozen=True)
class Detection:
    position: tuple
    peak_value: float
    entry: Optional[tuple] = None  # (shape_id, euler, scale)

    def distance(self, p) -> float:
        return float(np.linalg.norm(np.subtract(self.position, p)))


class DetectionList(list):
    """A list of :class:`Detection` that also carries a run report."""

    def __init__(self, items=(), **report):
        super().__init__(items)
        self.report = report
        self.warnings = report.pop("warnings", [])


# ---------------------------------------------------------------------------
# Plane-wave sums on a lattice
# ---------------------------------------------------------------------------
def lattice_sum(axes, nodes, coef, k: float) -> np.ndarray:
    """``S(z) = sum_k coef_k exp(i k nodes_k . z)`` for ``z`` on the lattice ``axes``.

    ``coef`` has shape ``(K,)`` or ``(K, m)``; the result has shape
    ``(nx, ny, nz)`` or ``(m, nx, ny, nz)``.
    """
    coef = np.asarray(coef, dtype=complex)
    flat = coef.reshape(len(nodes), -1)
    ax, ay, az = (np.asarray(a, dtype=float) for a in axes)
    Ex = np.exp(1j * k * np.outer(nodes[:, 0], ax))
    Ey = np.exp(1j * k * np.outer(nodes[:, 1], ay))
    Ez = np.exp(1j * k * np.outer(nodes[:, 2], az))
    out = np.empty((flat.shape[1], len(ax), len(ay), len(az)), dtype=complex)
    for j in range(flat.shape[1]):
        cx = flat[:, j:j + 1] * Ex  # (K, nx)
        for i in range(len(ax)):
            out[j, i] = (Ey * cx[:, i:i + 1]).T @ Ez
    return out[0] if coef.ndim == 1 else out


def _wnorm2(grid, v) -> float:
    return float(np.sum(grid.weights * np.sum(np.abs(v) ** 2, axis=1)))


def _winner(grid, a, b) -> complex:
    return complex(np.sum(grid.weights * np.sum(a * np.conj(b), axis=1)))


def _small_parts(f: FarField, mode: str):
    """Weighted coefficients and wavenumbers of the test-field correlation."""
    k = wavenumbers(f.material, f.omega)
    fp, fs = split_ps(f)
    w = f.grid.weights[:, None]
    if mode == "P":
        return [(w * fp.values, k.kp)], _wnorm2(f.grid, fp.values)
    if mode == "S":
        return [(w * fs.values, k.ks)], _wnorm2(f.grid, fs.values)
    return [(w * fp.values, k.kp), (w * fs.values, k.ks)], _wnorm2(f.grid, f.values)


def indicator_small(f: FarField, mesh: SamplingMesh, mode="Full") -> IndicatorField:
    """Point-scatterer indicator ``I_m`` on ``mesh``."""
    mode = canonical_mode(mode)
    parts, norm2 = _small_parts(f, mode)
    if not norm2 > 0:
        raise InputError("far-field data has zero norm for this mode")
    V = sum(lattice_sum(mesh.axes, f.grid.nodes, c, k) for c, k in parts)
    vals = np.sum(np.abs(V) ** 2, axis=0) / (GRAM[mode] * norm2)
    return IndicatorField(mesh, vals, mode, {"indicator": "I", "mode": mode})


def _entry_parts(entry):
    fp_full, fs_full = getattr(entry, "parts", entry)
    return split_ps(fp_full), split_ps(fs_full)


def _extended_terms(f: FarField, entry, mesh: SamplingMesh, mode: str, wave: IncidentWave):
    """``<f_m, A(z)>`` and ``||A(z)||^2`` on the mesh for one entry."""
    (pp, ps), (sp, ss) = _entry_parts(entry)
    for part in (pp, sp):
        check_compatible(f, part, same_wave=False)
        if part.wave.d != wave.d or part.wave.dperp != wave.dperp:
            raise InputError("library entry computed for a different incident direction")
    a, b = wave.alpha, wave.beta
    k = wavenumbers(f.material, f.omega)
    grid = f.grid
    w = grid.weights
    dp, ds = split_ps(f)
    grids = np.meshgrid(*mesh.axes, indexing="ij")
    pts_d = sum(wave.d[i] * grids[i] for i in range(3))
    ph_p, ph_s = np.exp(-1j * k.kp * pts_d), np.exp(-1j * k.ks * pts_d)
    rel = np.exp(1j * (k.kp - k.ks) * pts_d)

    def channel(data, e_p, e_s, kout):
        coef = np.stack([w * np.sum(data.values * np.conj(e_p.values), axis=1),
                         w * np.sum(data.values * np.conj(e_s.values), axis=1)], axis=1)
        S = lattice_sum(mesh.axes, grid.nodes, coef, kout)
        inner = np.conj(a) * ph_p * S[0] + np.conj(b) * ph_s * S[1]
        norm2 = (abs(a) ** 2 * _wnorm2(grid, e_p.values) + abs(b) ** 2 * _wnorm2(grid, e_s.values)
                 + 2.0 * np.real(a * np.conj(b) * rel * _winner(grid, e_p.values, e_s.values)))
        return inner, norm2

    inner, norm2 = 0.0, 0.0
    if mode in ("P", "Full"):
        i1, n1 = channel(dp, pp, sp, k.kp)
        inner, norm2 = inner + i1, norm2 + n1
    if mode in ("S", "Full"):
        i2, n2 = channel(ds, ps, ss, k.ks)
        inner, norm2 = inner + i2, norm2 + n2
    if not np.all(np.asarray(norm2) > 0):
        raise InputError("library entry has zero norm for this mode")
    return inner, norm2


def fit_coefficient(f: FarField, entry, mesh: SamplingMesh, mode="Full",
                    wave: Optional[IncidentWave] = None) -> np.ndarray:
    """Least-squares amplitude ``c(z) = <f_m, A(z)> / ||A(z)||^2`` of the translated entry.

    ``W_m = |c|^2``. A genuine copy of the entry gives ``c close to 1`` including
    its phase, because library and data share the incident wave.
    """
    mode = canonical_mode(mode)
    inner, norm2 = _extended_terms(f, entry, mesh, mode, f.wave if wave is None else wave)
    return inner / norm2


def indicator_extended(f: FarField, entry, mesh: SamplingMesh, mode="Full",
                       wave: Optional[IncidentWave] = None) -> IndicatorField:
    """Library indicator ``W_m`` for one entry on ``mesh``.

    The kernels are the P- and S-parts of the entry's mixed-wave signature
    translated to ``z``; for a pure wave they reduce to the single-incidence
    kernels.
    """
    mode = canonical_mode(mode)
    c = fit_coefficient(f, entry, mesh, mode, wave)
    label = getattr(entry, "label", "entry")
    return IndicatorField(mesh, np.abs(c) ** 2, mode, {"indicator": "W", "mode": mode, "entry": label})


# ---------------------------------------------------------------------------
# Peak extraction
# ---------------------------------------------------------------------------
def extract_local_maxima(fld: IndicatorField, threshold: float, min_separation: float,
                         upper: Optional[float] = None, mask: Optional[np.ndarray] = None,
                         entry=None) -> List[Detection]:
    """Greedy non-maximum suppression over lattice local maxima.

    A lattice point is a candidate if no neighbour (26-connectivity) exceeds
    it and its value is at least ``threshold`` (and at most ``upper``).
    Candidates are accepted in decreasing order; each accepted point
    suppresses all candidates closer than ``min_separation``. ``mask`` marks
    excluded lattice points.
    """
    if not threshold > 0:
        raise InputError("threshold must be positive")
    if min_separation < fld.mesh.spacing - 1e-12:
        raise InputError("min_separation must be at least the mesh spacing")
    vals = np.array(fld.values, dtype=float)
    if mask is not None:
        vals[np.asarray(mask, dtype=bool)] = -np.inf
    peaks = (ndimage.maximum_filter(vals, size=3, mode="constant", cval=-np.inf) == vals)
    peaks &= vals >= threshold
    if upper is not None:
        peaks &= vals <= upper
    idx = np.argwhere(peaks)
    order = np.argsort(-vals[peaks], kind="stable")
    accepted: List[Detection] = []
    for i in order:
        p = fld.mesh.point(idx[i])
        if all(np.linalg.norm(p - np.asarray(d.position)) >= min_separation for d in accepted):
            accepted.append(Detection(tuple(float(v) for v in p), float(vals[tuple(idx[i])]), entry))
    return accepted


def half_max_width(fld: IndicatorField, axis: int) -> float:
    """Full width at half maximum of the peak, along ``axis`` through the maximiser.

    The crossings are linearly interpolated; raises ``InputError`` when the
    half-maximum level is not reached inside the mesh on both sides.
    """
    idx = np.unravel_index(int(np.argmax(fld.values)), fld.mesh.shape)
    line = [slice(None) if a == axis else idx[a] for a in range(3)]
    v = np.asarray(fld.values[tuple(line)], dtype=float)
    x = fld.mesh.axes[axis]
    i0 = idx[axis]
    half = 0.5 * v[i0]
    below = np.nonzero(v[i0:] <= half)[0]
    above = np.nonzero(v[:i0 + 1][::-1] <= half)[0]
    if not len(below) or not len(above):
        raise InputError("peak does not fall to half maximum inside the mesh")
    r, l = i0 + below[0], i0 - above[0]
    xr = x[r - 1] + (half - v[r - 1]) * (x[r] - x[r - 1]) / (v[r] - v[r - 1])
    xl = x[l] + (half - v[l]) * (x[l + 1] - x[l]) / (v[l + 1] - v[l])
    return float(xr - xl)


def default_separation(f: FarField) -> float:
    """Half the shear wavelength."""
    return math.pi / wavenumbers(f.material, f.omega).ks


# ---------------------------------------------------------------------------
# Scheme S
# ---------------------------------------------------------------------------
def scheme_s(f: FarField, mesh: SamplingMesh, mode="Full", threshold: float = 0.3,
             min_separation: Optional[float] = None, relative: bool = True,
             mask: Optional[np.ndarray] = None) -> DetectionList:
    """Locate small scatterers as significant local maxima of ``I_m``.

    With ``relative=True`` the threshold is a fraction of the largest
    indicator value (outside ``mask``): ``I_m`` peaks at roughly the share of
    the scattered energy carried by each scatterer, so absolute levels shrink
    as the number of scatterers grows.
    """
    fld = indicator_small(f, mesh, mode)
    sep = default_separation(f) if min_separation is None else min_separation
    vals = fld.values if mask is None else np.where(mask, -np.inf, fld.values)
    top = float(np.max(vals))
    thr = threshold * top if relative else threshold
    dets = extract_local_maxima(fld, max(thr, 1e-300), sep, mask=mask)
    return DetectionList(dets, field=fld, threshold=thr)


def k_diagnostics(component_fields: Sequence[FarField], total: FarField) -> np.ndarray:
    """Energy shares ``K_m^j`` of each component in each mode; shape ``(l, 3)``."""
    out = []
    tp, ts = split_ps(total)
    n = [_wnorm2(total.grid, tp.values), _wnorm2(total.grid, ts.values), _wnorm2(total.grid, total.values)]
    for f in component_fields:
        p, s = split_ps(f)
        out.append([_wnorm2(f.grid, p.values) / n[0], _wnorm2(f.grid, s.values) / n[1],
                    _wnorm2(f.grid, f.values) / n[2]])
    return np.array(out)


# ---------------------------------------------------------------------------
# Scheme R
# ---------------------------------------------------------------------------
def _entry_key(e) -> tuple:
    return (e.shape_id, tuple(e.euler), e.scale)


def _mode_energy(f: FarField, mode: str) -> float:
    if mode == "Full":
        return _wnorm2(f.grid, f.values)
    p, s = split_ps(f)
    return _wnorm2(f.grid, (p if mode == "P" else s).values)


def best_local_entry(h: FarField, candidates: Sequence, center, spacing: float, mode="Full",
                     wave: Optional[IncidentWave] = None, half_width: Optional[float] = None):
    """Entry and position near ``center`` that best explain ``h`` as one unit copy.

    Minimises the relative residual ``||h - T_z E||^2 / ||h||^2`` over the
    candidates and over a cube of half-width ``half_width`` (default two
    spacings) sampled at half the spacing. Returns ``(residual, entry,
    position, W)``; ties keep the earlier candidate.
    """
    mode = canonical_mode(mode)
    wave = h.wave if wave is None else wave
    hw = 2.0 * spacing if half_width is None else half_width
    c = np.asarray(center, dtype=float)
    m = SamplingMesh(tuple(c - hw), tuple(c + hw), spacing / 2.0)
    hn = _mode_energy(h, mode)
    if not hn > 0:
        raise InputError("far-field data has zero norm for this mode")
    best = None
    for e in candidates:
        inner, n2 = _extended_terms(h, e, m, mode, wave)
        r = (hn - 2.0 * inner.real + n2) / hn
        i = np.unravel_index(np.argmin(r), r.shape)
        if best is None or r[i] < best[0]:
            best = (float(r[i]), e, tuple(float(v) for v in m.point(i)), float(abs(inner[i] / n2[i]) ** 2))
    return best


def coupling_delta(f: FarField, placed: Sequence, forward_config=None) -> Optional[np.ndarray]:
    """Multiple-scattering part of the far field of the hypothesised scene.

    ``placed`` lists ``(entry, position)`` pairs. Returns the joint forward
    solution minus the sum of translated library signatures, or ``None`` if
    the hypothesised components overlap.
    """
    from .forward import MfsConfig, simulate_farfield
    from .geometry import Scene

    try:
        scene = Scene([e.component(p) for e, p in placed])
    except InputError:
        return None
    cfg = MfsConfig() if forward_config is None else forward_config
    joint = simulate_farfield(scene, f.wave, f.material, f.grid, cfg)
    single = joint
    for e, p in placed:
        single = subtract_library_entry(single, e, [p], f.wave)
    return single.values


def _refine(f, candidates, found, mode, wave, spacing, sep, coupling, forward_config, sweeps=4):
    state = [[e, p, 0.0, 0.0] for e, p in found]
    delta = np.zeros_like(f.values)
    g = f
    for outer in range(coupling + 1):
        if outer:
            d = coupling_delta(f, [(e, p) for e, p, _, _ in state], forward_config)
            if d is None:
                logger.warning("scheme R: hypothesised components overlap; coupling correction skipped")
                break
            delta = d
            logger.info("scheme R: coupling correction %.3g of the data norm",
                        math.sqrt(_wnorm2(f.grid, d)) / f.norm())
        g = f.with_values(f.values - delta)
        for _ in range(sweeps):
            changed = False
            for k in range(len(state)):
                h = g
                for j, (e, p, _, _) in enumerate(state):
                    if j != k:
                        h = subtract_library_entry(h, e, [p], wave)
                r, e, p, w = best_local_entry(h, candidates, state[k][1], spacing, mode, wave)
                changed |= e is not state[k][0] or p != state[k][1]
                state[k] = [e, p, r, w]
            if not changed:
                break
    kept = []
    for e, p, r, w in state:
        if any(e is e2 and np.linalg.norm(np.subtract(p, p2)) < sep for e2, p2, _, _ in kept):
            continue
        kept.append((e, p, r, w))
    residual = g
    for e, p, _, _ in kept:
        residual = subtract_library_entry(residual, e, [p], wave)
    return kept, residual, delta


def scheme_r(f: FarField, library, mesh: SamplingMesh, mode="Full", wave: Optional[IncidentWave] = None,
             threshold: float = 0.8, upper: float = 1.25, min_separation: Optional[float] = None,
             entries: Optional[Sequence] = None, refine: bool = True, coupling: int = 0,
             forward_config=None) -> DetectionList:
    """Identify extended components entry by entry, removing each one found.

    Entries are visited in library order (largest signature first). A lattice
    local maximum of ``W_m`` inside ``[threshold, upper]`` is taken as a copy
    of the entry; the copies found are subtracted from the data before the
    next entry is tried.

    Similar shapes of similar size reach ``W close to 1`` at each other's
    positions, and the cross-talk between components is of order ``1/L_e``.
    With ``refine`` the first-pass assignment is revised by back-fitting:
    each detection in turn is re-assigned the entry and nearby position
    that best explain the data once all other detections are removed.
    ``coupling > 0`` adds that many multiple-scattering corrections: the
    hypothesised scene is solved jointly with the forward solver
    (``forward_config``) and the interaction part of its far field is
    removed from the data before back-fitting again.
    """
    mode = canonical_mode(mode)
    wave = f.wave if wave is None else wave
    if wave != library.wave:
        raise InputError("library was built for a different incident wave")
    if not library.grid.same_as(f.grid):
        raise InputError("library and data use different sphere grids")
    sep = default_separation(f) if min_separation is None else min_separation
    warnings = []
    if library.audit and not library.audit.get("passed", True):
        msg = f"library distinctness audit failed: {len(library.audit['close_pairs'])} close pairs"
        warnings.append(msg)
        logger.warning(msg)
    candidates = list(library.entries if entries is None else entries)
    current = f
    found = []
    trace = []
    for entry in candidates:
        W = indicator_extended(current, entry, mesh, mode, wave)
        dets = extract_local_maxima(W, threshold, sep, upper=upper, entry=_entry_key(entry))
        trace.append((entry.label, W.max()))
        if not dets:
            continue
        logger.info("scheme R: %s found at %s", entry.label, [d.position for d in dets])
        found.extend((entry, d) for d in dets)
        current = subtract_library_entry(current, entry, [d.position for d in dets], wave)
    first = [d for _, d in found]
    if not (refine and found):
        return DetectionList(first, residual=current, trace=trace, first_pass=first, warnings=warnings)
    kept, residual, delta = _refine(f, candidates, [(e, d.position) for e, d in found], mode, wave,
                                    mesh.spacing, sep, coupling, forward_config)
    dets = [Detection(p, w, _entry_key(e)) for e, p, r, w in kept]
    for d in dets:
        logger.info("scheme R refined: %s at %s", d.entry, d.position)
    return DetectionList(dets, residual=residual, trace=trace, first_pass=first,
                         fit_residuals=[r for _, _, r, _ in kept], coupling_delta=delta, warnings=warnings)


# ---------------------------------------------------------------------------
# Scheme M
# ---------------------------------------------------------------------------
@dataclass
class TuningMesh:
    """Local tune-ups around one stage-1 estimate.

    ``offsets`` is a cubic lattice of half-width ``delta`` and spacing
    ``fine``; ``entries`` are the library entries (orientation and scale
    neighbours) that may replace the stage-1 entry.
    """

    center: np.ndarray
    delta: float
    fine: float
    entries: list
    exclusion_radius: float

    @property
    def n_side(self) -> int:
        return int(round(self.delta / self.fine))

    @property
    def offsets_1d(self) -> np.ndarray:
        return self.fine * np.arange(-self.n_side, self.n_side + 1)

    def __len__(self):
        return (2 * self.n_side + 1) ** 3 * len(self.entries)


def _rotation_gap(e1, e2) -> float:
    R = rotation_matrix(e1).T @ rotation_matrix(e2)
    return float(np.linalg.norm(Rotation.from_matrix(R).as_rotvec()))


def make_tuning_mesh(detection: Detection, library, mesh: SamplingMesh, delta: Optional[float] = None,
                     refine: int = 4, rotation_step: Optional[float] = None, scale_steps: int = 1,
                     rotation_steps: int = 1) -> TuningMesh:
    shape_id, euler, scale = detection.entry
    delta = 2.0 * mesh.spacing if delta is None else delta
    fine = mesh.spacing / refine
    step = rotation_step if rotation_step is not None else (library.net.get("rotation_step") or math.pi / 2)
    scales = sorted({e.scale for e in library.entries if e.shape_id == shape_id})
    i = scales.index(scale)
    near_scales = scales[max(0, i - scale_steps):i + scale_steps + 1]
    cands = [e for e in library.entries
             if e.shape_id == shape_id and e.scale in near_scales
             and _rotation_gap(e.euler, euler) <= rotation_steps * step + 1e-9]
    # keep one representative per distinct rotation matrix
    uniq = []
    for e in cands:
        if not any(u.scale == e.scale and _rotation_gap(u.euler, e.euler) < 1e-9 for u in uniq):
            uniq.append(e)
    extent = make_shape(shape_id).bounding_radius() * max(near_scales)
    return TuningMesh(np.asarray(detection.position, dtype=float), float(delta), fine, uniq, extent + delta)


class MultiscaleResult(NamedTuple):
    extended: list
    small: list
    report: dict


def _small_mode_kernels(parts_pair, mode, k, w):
    """Per incidence part, the weighted P/S coefficient sets for the H-lattice."""
    (e_p, e_s) = parts_pair
    terms = []
    if mode in ("P", "Full"):
        terms.append((w * e_p.values, k.kp))
    if mode in ("S", "Full"):
        terms.append((w * e_s.values, k.ks))
    return terms


def _tune_scores(f, entry, tm: TuningMesh, mesh: SamplingMesh, mode, wave, Vf, norm_f2, mask,
                 threshold, sep):
    """Evaluate every position tune-up of one entry.

    Returns a list of ``(position, score, detections, residual2)`` where
    ``residual2`` is the squared norm of the data minus the tuned copy.
    """
    k = wavenumbers(f.material, f.omega)
    grid = f.grid
    w = grid.weights[:, None]
    refine = int(round(mesh.spacing / tm.fine))
    J = tm.n_side
    d = np.asarray(wave.d)
    (pp, ps), (sp, ss) = _entry_parts(entry)
    # H lattice covering z - a for all z on the mesh and a in the tuning cube
    h_axes = [l - c - tm.delta + tm.fine * np.arange(refine * (n - 1) + 2 * J + 1)
              for l, c, n in zip(mesh.lo, tm.center, mesh.shape)]
    H = {}
    for name, amp, pair in (("a", wave.alpha, (pp, ps)), ("b", wave.beta, (sp, ss))):
        if amp == 0:
            continue
        H[name] = sum(lattice_sum(h_axes, grid.nodes, c, kk) for c, kk in _small_mode_kernels(pair, mode, k, w))
    # norms and cross terms as functions of the translation a
    dp, ds = split_ps(f)
    parts = {"P": [(dp, pp, sp, k.kp)], "S": [(ds, ps, ss, k.ks)],
             "Full": [(dp, pp, sp, k.kp), (ds, ps, ss, k.ks)]}[mode]
    a_axes = [c + tm.offsets_1d for c in tm.center]
    cross = 0.0
    enorm = 0.0
    A, B = np.meshgrid(*a_axes, indexing="ij"), None
    a_d = sum(d[i] * A[i] for i in range(3))
    for data, e_pinc, e_sinc, kout in parts:
        coef = np.stack([grid.weights * np.sum(data.values * np.conj(e_pinc.values), axis=1),
                         grid.weights * np.sum(data.values * np.conj(e_sinc.values), axis=1)], axis=1)
        S = lattice_sum(a_axes, grid.nodes, coef, kout)
        cross = cross + (np.conj(wave.alpha) * np.exp(-1j * k.kp * a_d) * S[0]
                         + np.conj(wave.beta) * np.exp(-1j * k.ks * a_d) * S[1])
        enorm = enorm + (abs(wave.alpha) ** 2 * _wnorm2(grid, e_pinc.values)
                         + abs(wave.beta) ** 2 * _wnorm2(grid, e_sinc.values)
                         + 2.0 * np.real(wave.alpha * np.conj(wave.beta) * np.exp(1j * (k.kp - k.ks) * a_d)
                                         * _winner(grid, e_pinc.values, e_sinc.values)))
    resid2 = norm_f2 - 2.0 * np.real(cross) + enorm
    n = mesh.shape
    n_off = 2 * J + 1
    out = []
    for ix in range(n_off):
        for iy in range(n_off):
            for iz in range(n_off):
                sl = tuple(slice(2 * J - j, 2 * J - j + refine * (m - 1) + 1, refine)
                           for j, m in zip((ix, iy, iz), n))
                a = np.array([a_axes[0][ix], a_axes[1][iy], a_axes[2][iz]])
                T = 0.0
                if "a" in H:
                    T = T + wave.alpha * np.exp(1j * k.kp * (d @ a)) * H["a"][(slice(None),) + sl]
                if "b" in H:
                    T = T + wave.beta * np.exp(1j * k.ks * (d @ a)) * H["b"][(slice(None),) + sl]
                r2 = resid2[ix, iy, iz]
                if not r2 > 0:
                    continue
                vals = np.sum(np.abs(Vf - T) ** 2, axis=0) / (GRAM[mode] * r2)
                fld = IndicatorField(mesh, vals, mode)
                masked = np.where(mask, -np.inf, vals)
                top = float(masked.max())
                dets = extract_local_maxima(fld, max(threshold * top, 1e-300), sep, mask=mask)
                out.append((a, top, dets, float(r2)))
    return out


def scheme_m(f: FarField, library, mesh: SamplingMesh, mode="Full", wave: Optional[IncidentWave] = None,
             delta: Optional[float] = None, refine: int = 4, rotation_steps: int = 1, scale_steps: int = 1,
             min_extended_size: Optional[float] = None, r_threshold: float = 0.8, r_upper: float = 1.25,
             s_threshold: float = 0.3, min_separation: Optional[float] = None,
             vote_fraction: float = 0.5, admit_factor: float = 2.0, coupling: int = 0,
             forward_config=None) -> MultiscaleResult:
    """Locate extended and small components together.

    Stage 1 runs :func:`scheme_r` with the library entries whose diameter is
    at least ``min_extended_size`` (default: half the shear wavelength).
    Stage 2 scans local tune-ups of each extended estimate (positions on a
    fine cube, neighbouring orientations and scales), removes the tuned copy
    from the data, and runs the point-scatterer indicator outside the
    exclusion zone. Tune-ups whose residual energy exceeds ``admit_factor``
    times the smallest one are discarded: a copy that is off by a fraction of
    a wavelength leaves a residual far stronger than any small scatterer.
    Small detections are accepted where more than ``vote_fraction`` of the
    remaining tune-ups agree (bins of one fine spacing); the admitted tune-up
    with the sharpest small peak becomes the updated extended estimate.
    """
    mode = canonical_mode(mode)
    wave = f.wave if wave is None else wave
    sep = default_separation(f) if min_separation is None else min_separation
    ks = wavenumbers(f.material, f.omega).ks
    size = math.pi / ks if min_extended_size is None else min_extended_size
    extended_entries = [e for e in library.entries
                        if 2.0 * make_shape(e.shape_id).bounding_radius() * e.scale >= size]
    stage1 = scheme_r(f, library, mesh, mode, wave, r_threshold, r_upper, sep, entries=extended_entries,
                      coupling=coupling, forward_config=forward_config)
    if not stage1:
        logger.info("scheme M: no extended component found; falling back to scheme S")
        small = scheme_s(f, mesh, mode, s_threshold, sep)
        return MultiscaleResult([], list(small), {"stage1": [], "fallback": True})
    extended = list(stage1)
    small_all = []
    report = {"stage1": list(stage1), "fallback": False, "tuneups": 0}
    # the tuned components are handled one at a time; the others stay at their stage-1 estimates
    for n_det, det in enumerate(stage1):
        others = [d for d in stage1 if d is not det]
        base = f
        for o in others:
            e = library.find(o.entry[0], o.entry[1], o.entry[2])
            base = subtract_library_entry(base, e, [o.position], wave)
        tm = make_tuning_mesh(det, library, mesh, delta, refine, scale_steps=scale_steps,
                              rotation_steps=rotation_steps)
        pts = mesh.points.reshape(mesh.shape + (3,))
        mask = np.linalg.norm(pts - tm.center, axis=-1) <= tm.exclusion_radius
        for o in others:
            mask |= np.linalg.norm(pts - np.asarray(o.position), axis=-1) <= tm.exclusion_radius
        parts, norm_f2 = _small_parts(base, mode)
        Vf = sum(lattice_sum(mesh.axes, base.grid.nodes, c, k) for c, k in parts)
        results = []
        for entry in tm.entries:
            for a, score, dets, r2 in _tune_scores(base, entry, tm, mesh, mode, wave, Vf, norm_f2, mask,
                                                   s_threshold, sep):
                results.append((entry, a, score, dets, r2))
        report["tuneups"] += len(results)
        if not results:
            continue
        # only tune-ups that fit the data about as well as the best one take part in the vote
        floor = min(r[4] for r in results)
        voters = [r for r in results if r[4] <= admit_factor * floor]
        votes = {}
        for entry, a, score, dets, r2 in voters:
            for dd in dets:
                key = tuple(int(round(v / tm.fine)) for v in dd.position)
                votes.setdefault(key, []).append(dd.peak_value)
        need = vote_fraction * len(voters)
        accepted = [(key, v) for key, v in votes.items() if len(v) > need]
        entry, a, score, dets, r2 = max(voters, key=lambda r: r[2])
        extended[n_det] = Detection(tuple(float(v) for v in a), float(score), _entry_key(entry))
        for key, v in accepted:
            pos = tuple(float(c * tm.fine) for c in key)
            small_all.append(Detection(pos, float(max(v))))
        report.setdefault("voters", []).append(len(voters))
        report.setdefault("votes", []).append({k: len(v) for k, v in votes.items()})
        report.setdefault("best_score", []).append(score)
        report.setdefault("fit_residual", []).append(math.sqrt(r2 / _mode_energy(f, mode)))
    small_all.sort(key=lambda d: -d.peak_value)
    return MultiscaleResult(extended, small_all, report)
