"""Text file formats and experiment configuration.

Configuration files are flat ``key = value`` lists; ``#`` starts a comment.
Vectors are whitespace- or comma-separated; angles are radians and may be
written with ``pi`` (``pi/2``, ``-pi``, ``1.5*pi``). Scene components are
repeated ``component`` keys::

    component = peanut pos=3,-2,-2 euler=0,0,0 scale=0.1

Recognised keys (defaults in brackets):

``lam``, ``mu``                Lame constants [2, 1]
``omega``                      angular frequency [2]
``d``, ``dperp``               incident direction and polarisation [0 0 1 / 1 0 0]
``alpha``, ``beta``            P and S amplitudes, complex allowed [0 / 1]
``grid``                       sphere grid ``n_polar n_azimuth`` [24 48]
``n_sources``, ``n_collocation``, ``svd_cutoff``, ``residual_tol``,
``source_rule``, ``offset_factor``, ``refine``  forward-solver settings
``solver``                     ``auto`` | ``mfs`` | ``foldy`` [auto]
``scene_class``                ``small`` | ``extended`` | ``multiscale``
``n_surface``                  polarization-tensor surface points [1200]
``box``, ``spacing``           sampling mesh ``lo hi`` per axis or six numbers
``noise``, ``seed``            noise level and generator seed [0 / 0]
``mode``                       ``p`` | ``s`` | ``full`` [full]
``threshold``, ``min_separation``, ``upper``  detection settings
``lib_shapes``, ``lib_rotations``, ``lib_axes``, ``lib_scales``,
``lib_n_sources``, ``lib_n_collocation``      library specification
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .core import InputError, IncidentWave, Material, make_sphere_grid
from .asymptotic import small_scene_farfield
from .farfield import FARFIELD_CONVENTION, FarField, add_noise
from .forward import MfsConfig, simulate_farfield
from .geometry import Component, Placement, Scene, make_shape
from .imaging import IndicatorField, SamplingMesh, canonical_mode
from .library import LibraryEntry, ReferenceLibrary, build_library, rotation_net

FARFIELD_FORMAT = "elastoscan-farfield 1"
LIBRARY_FORMAT = "elastoscan-library 1"


class ParseError(InputError):
    """Malformed input file; ``line`` is 1-based (0 when not line-specific)."""

    def __init__(self, path, line: int, message: str):
        self.path, self.line = str(path), int(line)
        super().__init__(f"{path}:{line}: {message}")


# ---------------------------------------------------------------------------
# Atomic writes and digests
# ---------------------------------------------------------------------------
def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_digest(raw: Dict[str, List[str]]) -> str:
    """sha256 of the canonical ``key = value`` listing."""
    lines = [f"{k} = {v}" for k in sorted(raw) for v in raw[k]]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
_PI_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)?)\*?pi(?:/(\d+\.?\d*))?$")


def parse_number(token: str) -> float:
    token = token.strip()
    m = _PI_RE.match(token)
    if m:
        lead = m.group(1)
        coef = {"": 1.0, "+": 1.0, "-": -1.0}.get(lead)
        coef = float(lead) if coef is None else coef
        return coef * math.pi / (float(m.group(2)) if m.group(2) else 1.0)
    return float(token)


def _vector(text: str, n: Optional[int] = None) -> List[float]:
    vals = [parse_number(t) for t in re.split(r"[\s,]+", text.strip()) if t]
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {len(vals)}")
    return vals


def read_keyvalues(path) -> Dict[str, List[tuple]]:
    """Raw ``key -> [(value, line), ...]`` mapping of a config file."""
    out: Dict[str, List[tuple]] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ParseError(path, n, f"expected 'key = value', got {text!r}")
            key, value = (s.strip() for s in text.split("=", 1))
            if not key:
                raise ParseError(path, n, "empty key")
            out.setdefault(key.lower(), []).append((value, n))
    return out


def parse_component(text: str) -> Component:
    parts = text.split()
    if not parts:
        raise ValueError("empty component")
    shape = make_shape(parts[0])
    opts = {"pos": "0,0,0", "euler": "0,0,0", "scale": "1"}
    for tok in parts[1:]:
        if "=" not in tok:
            raise ValueError(f"component option {tok!r} must be key=value")
        k, v = tok.split("=", 1)
        if k not in opts:
            raise ValueError(f"unknown component option {k!r}")
        opts[k] = v
    return Component(shape, Placement(tuple(_vector(opts["pos"], 3)), tuple(_vector(opts["euler"], 3)),
                                      parse_number(opts["scale"])))


@dataclass
class ExperimentConfig:
    material: Material
    wave: IncidentWave
    grid_spec: tuple = (24, 48)
    mfs: MfsConfig = field(default_factory=MfsConfig)
    solver: str = "auto"
    n_surface: int = 1200
    scene: Optional[Scene] = None
    mesh: Optional[SamplingMesh] = None
    noise: float = 0.0
    seed: int = 0
    mode: str = "Full"
    threshold: Optional[float] = None
    upper: Optional[float] = None
    min_separation: Optional[float] = None
    library: dict = field(default_factory=dict)
    digest: str = ""
    source: str = ""

    @property
    def grid(self):
        return make_sphere_grid(*self.grid_spec)

    def library_mfs(self) -> MfsConfig:
        n_src = self.library.get("n_sources", self.mfs.n_sources)
        n_col = self.library.get("n_collocation", max(self.mfs.n_collocation, 3 * n_src))
        return replace(self.mfs, n_sources=n_src, n_collocation=n_col)

    def build_library(self, polarization: bool = False) -> ReferenceLibrary:
        """Reference library described by the ``lib_*`` keys."""
        if not self.library:
            raise InputError(f"{self.source or 'configuration'}: no 'lib_shapes' entry")
        spec = self.library
        eulers = rotation_net(spec["rotations"], spec["axes"])
        net = {"rotations": len(eulers), "rotation_step": 2.0 * math.pi / spec["rotations"],
               "axes": list(spec["axes"]), "scales": [float(r) for r in spec["scales"]]}
        return build_library(spec["shapes"], eulers, spec["scales"], self.material, self.wave, self.grid,
                             self.library_mfs(), net, polarization=polarization)

    def simulate(self, scene: Optional[Scene] = None, noise: Optional[float] = None,
                 seed: Optional[int] = None) -> FarField:
        """Far field of ``scene`` (default: the configured one) with the configured noise.

        ``solver = auto`` uses the point-scatterer model for scenes of class
        ``small`` and the MFS solver otherwise.
        """
        scene = self.scene if scene is None else scene
        if scene is None:
            raise InputError(f"{self.source or 'configuration'}: no 'component' entries")
        solver = self.solver
        if solver == "auto":
            solver = "foldy" if scene.kind == "small" else "mfs"
        if solver == "foldy":
            f = small_scene_farfield(scene.components, self.wave, self.material, self.grid, self.n_surface)
        else:
            f = simulate_farfield(scene, self.wave, self.material, self.grid, self.mfs)
        desc = [f"{c.shape.shape_id} pos={','.join(repr(float(v)) for v in c.placement.position)} "
                f"euler={','.join(repr(float(v)) for v in c.placement.euler)} scale={c.placement.scale!r}"
                for c in scene.components]
        f = f.with_values(f.values, scene=desc, solver=solver)
        noise = self.noise if noise is None else noise
        seed = self.seed if seed is None else seed
        return add_noise(f, noise, seed) if noise > 0 else f


_KNOWN = {"lam", "mu", "omega", "d", "dperp", "alpha", "beta", "grid", "n_sources", "n_collocation",
          "svd_cutoff", "residual_tol", "source_rule", "offset_factor", "refine", "auxiliary_scale",
          "solver", "scene_class", "n_surface", "component", "box", "spacing", "noise", "seed", "mode",
          "threshold", "upper", "min_separation", "lib_shapes", "lib_rotations", "lib_axes", "lib_scales",
          "lib_n_sources", "lib_n_collocation", "description"}


def load_config(path) -> ExperimentConfig:
    """Parse a configuration (and optional scene) file."""
    raw = read_keyvalues(path)
    for key, vals in raw.items():
        if key not in _KNOWN:
            raise ParseError(path, vals[0][1], f"unknown key {key!r}")
        if key != "component" and len(vals) > 1:
            raise ParseError(path, vals[1][1], f"key {key!r} given twice")

    def get(key, conv, default=None):
        if key not in raw:
            return default
        value, line = raw[key][0]
        try:
            return conv(value)
        except (ValueError, InputError) as exc:
            raise ParseError(path, line, f"{key}: {exc}") from None

    def line_of(key):
        return raw[key][0][1] if key in raw else 0

    try:
        material = Material(get("lam", parse_number, 2.0), get("mu", parse_number, 1.0))
    except InputError as exc:
        raise ParseError(path, line_of("lam") or line_of("mu"), str(exc)) from None
    try:
        wave = IncidentWave(tuple(get("d", lambda s: _vector(s, 3), [0, 0, 1])),
                            tuple(get("dperp", lambda s: _vector(s, 3), [1, 0, 0])),
                            get("alpha", complex, 0.0), get("beta", complex, 1.0),
                            get("omega", parse_number, 2.0))
    except InputError as exc:
        raise ParseError(path, line_of("d") or line_of("omega"), str(exc)) from None
    grid_spec = tuple(int(v) for v in get("grid", lambda s: _vector(s, 2), [24, 48]))
    mfs_kw = {}
    for key, conv in (("n_sources", int), ("n_collocation", int), ("svd_cutoff", float),
                      ("residual_tol", float), ("source_rule", str), ("offset_factor", float),
                      ("refine", float), ("auxiliary_scale", float)):
        if key in raw:
            mfs_kw[key] = get(key, conv)
    if "n_sources" in mfs_kw and "n_collocation" not in mfs_kw:
        mfs_kw["n_collocation"] = 3 * mfs_kw["n_sources"]
    try:
        mfs = MfsConfig(**mfs_kw)
    except InputError as exc:
        raise ParseError(path, line_of("n_sources"), str(exc)) from None
    scene = None
    if "component" in raw:
        comps = []
        for value, line in raw["component"]:
            try:
                comps.append(parse_component(value))
            except (ValueError, InputError) as exc:
                raise ParseError(path, line, f"component: {exc}") from None
        try:
            scene = Scene(comps, get("scene_class", str, "extended"))
        except InputError as exc:
            raise ParseError(path, raw["component"][0][1], str(exc)) from None
    mesh = None
    if "box" in raw:
        box = get("box", _vector)
        if len(box) == 2:
            box = [box[0], box[1]] * 3
        if len(box) != 6:
            raise ParseError(path, line_of("box"), "box needs 2 or 6 numbers (lo hi per axis)")
        try:
            mesh = SamplingMesh(tuple(box[0::2]), tuple(box[1::2]), get("spacing", parse_number, 0.25))
        except InputError as exc:
            raise ParseError(path, line_of("box"), str(exc)) from None
    library = {}
    if "lib_shapes" in raw:
        library["shapes"] = get("lib_shapes", lambda s: [make_shape(t).shape_id for t in s.split()])
        library["rotations"] = get("lib_rotations", int, 4)
        library["axes"] = get("lib_axes", lambda s: s.split(), ["y"])
        library["scales"] = get("lib_scales", _vector, [1.0])
        for key in ("n_sources", "n_collocation"):
            if "lib_" + key in raw:
                library[key] = get("lib_" + key, int)
    solver = get("solver", str, "auto")
    if solver not in ("auto", "mfs", "foldy"):
        raise ParseError(path, line_of("solver"), f"unknown solver {solver!r}")
    return ExperimentConfig(
        material=material, wave=wave, grid_spec=grid_spec, mfs=mfs, solver=solver,
        n_surface=get("n_surface", int, 1200), scene=scene, mesh=mesh,
        noise=get("noise", parse_number, 0.0), seed=get("seed", int, 0),
        mode=get("mode", canonical_mode, "Full"), threshold=get("threshold", parse_number),
        upper=get("upper", parse_number), min_separation=get("min_separation", parse_number),
        library=library, digest=config_digest({k: [v for v, _ in vs] for k, vs in raw.items()}),
        source=os.fspath(path))


# ---------------------------------------------------------------------------
# Far-field files
# ---------------------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if obj is None or isinstance(obj, (str, int, float, bool)):
        return obj
    return str(obj)


def _common_header(material, wave, grid, convention) -> List[str]:
    return [
        f"lam = {material.lam!r}",
        f"mu = {material.mu!r}",
        f"omega = {wave.omega!r}",
        "d = " + " ".join(repr(v) for v in wave.d),
        "dperp = " + " ".join(repr(v) for v in wave.dperp),
        f"alpha = {wave.alpha.real!r} {wave.alpha.imag!r}",
        f"beta = {wave.beta.real!r} {wave.beta.imag!r}",
        f"grid = {grid.n_polar} {grid.n_azimuth}",
        f"convention = {convention}",
    ]


def _format_rows(grid, *arrays) -> List[str]:
    rows = []
    for i in range(len(grid)):
        nums = [grid.polar[i], grid.azimuth[i], grid.weights[i]]
        for a in arrays:
            for c in a[i]:
                nums.extend((c.real, c.imag))
        rows.append(" ".join(repr(float(v)) for v in nums))
    return rows


def write_farfield(path, f: FarField, digest: str = "") -> None:
    head = [FARFIELD_FORMAT] + _common_header(f.material, f.wave, f.grid, f.convention)
    prov = {k: v for k, v in f.provenance.items() if k != "config_digest"}
    head += [f"provenance = {json.dumps(_jsonable(prov), sort_keys=True)}",
             f"noise = {json.dumps(_jsonable(f.provenance.get('noise')), sort_keys=True)}",
             f"config_digest = {digest or '-'}",
             f"nodes = {len(f.grid)}"]
    lines = ["# " + h for h in head] + _format_rows(f.grid, f.values)
    atomic_write(path, "\n".join(lines) + "\n")


def _parse_header(path, lines, expected_format):
    if not lines or lines[0].strip() != "# " + expected_format:
        raise ParseError(path, 1, f"not a {expected_format!r} file (version mismatch or wrong type)")
    header = {}
    n = 1
    while n < len(lines) and lines[n].startswith("#"):
        body = lines[n][1:].strip()
        if "=" not in body:
            raise ParseError(path, n + 1, "malformed header line")
        key, value = (s.strip() for s in body.split("=", 1))
        header[key] = (value, n + 1)
        n += 1
    return header, n


def _header_objects(path, header):
    def need(key):
        if key not in header:
            raise ParseError(path, len(header) + 1, f"header lacks {key!r}")
        return header[key]

    try:
        value, line = need("lam")
        material = Material(float(value), float(need("mu")[0]))
        line = need("omega")[1]
        a = [float(v) for v in need("alpha")[0].split()]
        b = [float(v) for v in need("beta")[0].split()]
        wave = IncidentWave(tuple(float(v) for v in need("d")[0].split()),
                            tuple(float(v) for v in need("dperp")[0].split()),
                            complex(a[0], a[1]), complex(b[0], b[1]), float(need("omega")[0]))
        value, line = need("grid")
        npol, naz = (int(v) for v in value.split())
        grid = make_sphere_grid(npol, naz)
        value, line = need("nodes")
        if int(value) != len(grid):
            raise ParseError(path, line, f"nodes = {value} inconsistent with grid {npol}x{naz}")
    except ParseError:
        raise
    except (ValueError, IndexError, InputError) as exc:
        raise ParseError(path, line, str(exc)) from None
    return material, wave, grid, need("convention")[0]


def _parse_rows(path, lines, start, grid, width):
    data = np.empty((len(grid), 3 + width))
    for i in range(len(grid)):
        n = start + i
        if n >= len(lines):
            raise ParseError(path, n + 1, f"truncated: expected {len(grid)} records, got {i}")
        try:
            vals = [float(v) for v in lines[n].split()]
        except ValueError:
            raise ParseError(path, n + 1, "non-numeric field in record") from None
        if len(vals) != 3 + width:
            raise ParseError(path, n + 1, f"expected {3 + width} numbers, got {len(vals)}")
        data[i] = vals
        if (abs(vals[0] - grid.polar[i]) > 1e-12 or abs(vals[1] - grid.azimuth[i]) > 1e-12
                or abs(vals[2] - grid.weights[i]) > 1e-12):
            raise ParseError(path, n + 1, "record does not match the header grid")
    return data[:, 3:], start + len(grid)


def _complex_columns(block: np.ndarray) -> np.ndarray:
    return (block[:, 0::2] + 1j * block[:, 1::2]).reshape(len(block), -1, 3)


def read_farfield(path) -> FarField:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header, start = _parse_header(path, lines, FARFIELD_FORMAT)
    material, wave, grid, conv = _header_objects(path, header)
    block, end = _parse_rows(path, lines, start, grid, 6)
    if any(l.strip() for l in lines[end:]):
        raise ParseError(path, end + 1, "unexpected data after the last record")
    prov = json.loads(header["provenance"][0]) if "provenance" in header else {}
    if "config_digest" in header:
        prov.setdefault("config_digest", header["config_digest"][0])
    return FarField(grid, _complex_columns(block)[:, 0, :], material, wave, conv, prov)


# ---------------------------------------------------------------------------
# Library files
# ---------------------------------------------------------------------------
def write_library(path, lib: ReferenceLibrary, digest: str = "", polarization: Optional[dict] = None) -> None:
    """Library file: shared header, audit, polarization tensors, then entry blocks."""
    pol = lib.polarization if polarization is None else polarization
    head = [LIBRARY_FORMAT] + _common_header(lib.material, lib.wave, lib.grid, FARFIELD_CONVENTION)
    head += [f"net = {json.dumps(_jsonable(lib.net), sort_keys=True)}",
             f"audit = {json.dumps(_jsonable(lib.audit), sort_keys=True)}",
             f"polarization = {json.dumps(_jsonable(pol), sort_keys=True)}",
             f"config_digest = {digest or '-'}",
             f"nodes = {len(lib.grid)}",
             f"entries = {len(lib)}"]
    lines = ["# " + h for h in head]
    for e in lib.entries:
        lines.append("@entry " + " ".join([e.shape_id] + [repr(float(v)) for v in e.euler]
                                          + [repr(float(e.scale)), repr(float(e.residual))]))
        lines.extend(_format_rows(lib.grid, e.fp.values, e.fs.values))
    atomic_write(path, "\n".join(lines) + "\n")


def read_library(path) -> ReferenceLibrary:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header, n = _parse_header(path, lines, LIBRARY_FORMAT)
    material, wave, grid, conv = _header_objects(path, header)
    try:
        count = int(header["entries"][0])
        net = json.loads(header.get("net", ("{}", 0))[0])
        audit = json.loads(header.get("audit", ("{}", 0))[0])
        pol = json.loads(header.get("polarization", ("{}", 0))[0])
    except (KeyError, ValueError) as exc:
        raise ParseError(path, n, f"bad library header: {exc}") from None
    pw, sw = wave.pressure_part(), wave.shear_part()
    entries = []
    for _ in range(count):
        if n >= len(lines) or not lines[n].startswith("@entry "):
            raise ParseError(path, n + 1, "expected '@entry' line")
        tok = lines[n].split()[1:]
        if len(tok) != 6:
            raise ParseError(path, n + 1, "entry line needs shape, three angles, scale, residual")
        try:
            shape_id = make_shape(tok[0]).shape_id
            euler = tuple(float(v) for v in tok[1:4])
            scale, residual = float(tok[4]), float(tok[5])
        except (ValueError, InputError) as exc:
            raise ParseError(path, n + 1, str(exc)) from None
        block, n = _parse_rows(path, lines, n + 1, grid, 12)
        vals = _complex_columns(block)
        prov = {"source": "library", "file": os.fspath(path)}
        fp = FarField(grid, vals[:, 0, :], material, pw, conv, prov)
        fs = FarField(grid, vals[:, 1, :], material, sw, conv, prov)
        entries.append(LibraryEntry(shape_id, euler, scale, fp, fs, residual))
    if any(l.strip() for l in lines[n:]):
        raise ParseError(path, n + 1, "unexpected data after the last entry")
    return ReferenceLibrary(entries, wave, material, grid, net, audit,
                            {k: np.array(v, dtype=float).reshape(3, 3) for k, v in pol.items()})


# ---------------------------------------------------------------------------
# Indicator and detection output
# ---------------------------------------------------------------------------
def write_indicator(path, fld: IndicatorField, vtk_path=None, digest: str = "") -> None:
    """CSV ``x,y,z,value`` (9 significant digits) and optionally a legacy VTK volume."""
    pts = fld.mesh.points
    vals = np.asarray(fld.values, dtype=float).ravel()
    lines = [f"# indicator = {json.dumps(_jsonable(fld.provenance), sort_keys=True)}",
             f"# config_digest = {digest or '-'}", "x,y,z,value"]
    lines += [f"{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},{v:.9g}" for p, v in zip(pts, vals)]
    lines.append(f"# max = {vals.max() if vals.size else 0.0:.9g}")
    atomic_write(path, "\n".join(lines) + "\n")
    if vtk_path is not None:
        nx, ny, nz = fld.mesh.shape
        h = fld.mesh.spacing
        # VTK point order is x fastest
        ordered = np.asarray(fld.values, dtype=float).transpose(2, 1, 0).ravel()
        body = ["# vtk DataFile Version 3.0",
                f"indicator {fld.mode} digest {digest or '-'}",
                "ASCII", "DATASET STRUCTURED_POINTS",
                f"DIMENSIONS {nx} {ny} {nz}",
                "ORIGIN " + " ".join(f"{v:.9g}" for v in fld.mesh.lo),
                f"SPACING {h:.9g} {h:.9g} {h:.9g}",
                f"POINT_DATA {nx * ny * nz}", "SCALARS indicator double 1", "LOOKUP_TABLE default"]
        body += [f"{v:.9g}" for v in ordered]
        atomic_write(vtk_path, "\n".join(body) + "\n")


def write_detections(path, detections, digest: str = "", title: str = "detections") -> None:
    lines = [f"# {title}", f"# config_digest = {digest or '-'}", "x,y,z,peak,shape,theta,phi,psi,scale"]
    for d in detections:
        if d.entry is None:
            tail = ",,,,"
        else:
            shape_id, euler, scale = d.entry
            tail = f"{shape_id}," + ",".join(f"{v:.9g}" for v in euler) + f",{scale:.9g}"
        lines.append(",".join(f"{v:.9g}" for v in d.position) + f",{d.peak_value:.9g}," + tail)
    atomic_write(path, "\n".join(lines) + "\n")
