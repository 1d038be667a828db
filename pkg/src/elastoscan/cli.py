"""Command-line interface: ``elastoscan <subcommand> ...``.

Every subcommand exits with status 0 on success. On failure a single JSON
line ``{"error": ..., "message": ..., "file": ..., "line": ...}`` is written
to standard error and the status is 2 (bad input), 3 (solver failure) or
4 (I/O failure). Paths of the form ``preset:NAME`` refer to the shipped
configuration files (``preset:example1`` and so on).
"""

from __future__ import annotations

import argparse
import errno
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from importlib import resources

import numpy as np

from . import __version__
from .core import InputError
from .forward import DecompositionError
from .imaging import SamplingMesh, indicator_extended, scheme_m, scheme_r, scheme_s
from .io import (ExperimentConfig, ParseError, config_digest, load_config, read_farfield,
                 read_library, write_detections, write_farfield, write_indicator, write_library)

logger = logging.getLogger("elastoscan")

PRESETS = ("example1", "example2", "example3")


def resolve(path: str) -> str:
    if path.startswith("preset:"):
        name = path.split(":", 1)[1]
        if name not in PRESETS:
            raise InputError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
        return str(resources.files("elastoscan") / "presets" / f"{name}.cfg")
    if not os.path.exists(path):
        raise FileNotFoundError(errno.ENOENT, "no such file", path)
    return path


def _digest(args, *files) -> str:
    raw = {k: [repr(v)] for k, v in sorted(vars(args).items()) if k not in ("func", "verbose", "output")}
    for i, p in enumerate(files):
        with open(p, "rb") as fh:
            raw[f"input{i}"] = [hashlib.sha256(fh.read()).hexdigest()]
    return config_digest(raw)


def _config(path) -> ExperimentConfig:
    return load_config(resolve(path)) if path else None


def _mesh(args, cfg) -> SamplingMesh:
    if args.box is not None:
        box = args.box if len(args.box) == 6 else [args.box[0], args.box[1]] * 3
        if len(box) != 6:
            raise InputError("--box needs 2 or 6 numbers")
        return SamplingMesh(tuple(box[0::2]), tuple(box[1::2]), args.spacing or 0.25)
    if cfg is not None and cfg.mesh is not None:
        if args.spacing:
            return SamplingMesh(cfg.mesh.lo, cfg.mesh.hi, args.spacing)
        return cfg.mesh
    return SamplingMesh.cube(4.0, args.spacing or 0.25)


def _pick(value, cfg, attr, default):
    if value is not None:
        return value
    if cfg is not None and getattr(cfg, attr) is not None:
        return getattr(cfg, attr)
    return default


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_simulate(args) -> int:
    scene_cfg = load_config(resolve(args.scene))
    cfg = load_config(resolve(args.config)) if args.config else scene_cfg
    if scene_cfg.scene is None:
        raise InputError(f"{args.scene}: no 'component' entries")
    f = cfg.simulate(scene_cfg.scene, args.noise, args.seed)
    inputs = [resolve(args.scene)] + ([resolve(args.config)] if args.config else [])
    write_farfield(args.output, f, _digest(args, *inputs))
    noise = f.provenance.get("noise") or {"level": 0.0, "seed": None}
    print(f"wrote {args.output}: {len(f.grid)} directions, solver {f.provenance['solver']}, "
          f"noise {noise['level']:g} (seed {noise['seed']})")
    return 0


def cmd_build_lib(args) -> int:
    spec = load_config(resolve(args.spec))
    if args.config:
        cfg = load_config(resolve(args.config))
        spec = replace(cfg, library=spec.library, source=spec.source)
    lib = spec.build_library(polarization=args.polarization)
    write_library(args.output, lib, _digest(args, resolve(args.spec)))
    audit = lib.audit
    print(f"wrote {args.output}: {len(lib)} entries; minimum normalised gap {audit['min_gap']:.3e} "
          f"(tolerance {audit['tolerance']:g}) -> {'passed' if audit['passed'] else 'FAILED'}")
    for a, b, gap in audit["close_pairs"]:
        print(f"  close pair: {a} ~ {b} (gap {gap:.2e})")
    return 0


def _print_detections(dets, header):
    print(header)
    if not dets:
        print("  (none)")
    for d in dets:
        pos = " ".join(f"{v:8.3f}" for v in d.position)
        label = ""
        if d.entry is not None:
            shape_id, euler, scale = d.entry
            label = f"  {shape_id} euler=({', '.join(f'{np.degrees(a):g}' for a in euler)}) deg scale={scale:g}"
        print(f"  ({pos})  peak {d.peak_value:.4f}{label}")


def cmd_locate_small(args) -> int:
    cfg = _config(args.config)
    path = resolve(args.farfield)
    f = read_farfield(path)
    mesh = _mesh(args, cfg)
    mode = args.mode or (cfg.mode if cfg else "Full")
    thr = _pick(args.threshold, cfg, "threshold", 0.3)
    sep = _pick(args.min_separation, cfg, "min_separation", None)
    dets = scheme_s(f, mesh, mode, thr, sep, relative=not args.absolute)
    digest = _digest(args, path)
    write_detections(args.output + "_detections.csv", dets, digest, "scheme S detections")
    write_indicator(args.output + "_indicator.csv", dets.report["field"],
                    args.output + "_indicator.vtk" if args.vtk else None, digest)
    _print_detections(dets, f"{len(dets)} small scatterer(s):")
    return 0


def _forward_config(cfg):
    return cfg.mfs if cfg is not None else None


def cmd_locate_extended(args) -> int:
    cfg = _config(args.config)
    path, lib_path = resolve(args.farfield), resolve(args.lib)
    f = read_farfield(path)
    lib = read_library(lib_path)
    mesh = _mesh(args, cfg)
    mode = args.mode or (cfg.mode if cfg else "Full")
    dets = scheme_r(f, lib, mesh, mode, threshold=_pick(args.threshold, cfg, "threshold", 0.8),
                    upper=_pick(args.upper, cfg, "upper", 1.25),
                    min_separation=_pick(args.min_separation, cfg, "min_separation", None),
                    refine=not args.no_refine, coupling=args.coupling, forward_config=_forward_config(cfg))
    digest = _digest(args, path, lib_path)
    write_detections(args.output + "_detections.csv", dets, digest, "scheme R detections")
    if args.volumes:
        for i, e in enumerate(lib.entries):
            write_indicator(f"{args.output}_W{i:03d}.csv", indicator_extended(f, e, mesh, mode), None, digest)
    for w in dets.warnings:
        print(f"warning: {w}")
    _print_detections(dets, f"{len(dets)} extended component(s):")
    return 0


def cmd_locate_multiscale(args) -> int:
    cfg = _config(args.config)
    path, lib_path = resolve(args.farfield), resolve(args.lib)
    f = read_farfield(path)
    lib = read_library(lib_path)
    mesh = _mesh(args, cfg)
    mode = args.mode or (cfg.mode if cfg else "Full")
    res = scheme_m(f, lib, mesh, mode, delta=args.delta, refine=args.refine_factor,
                   s_threshold=args.s_threshold, r_threshold=_pick(args.threshold, cfg, "threshold", 0.8),
                   min_separation=_pick(args.min_separation, cfg, "min_separation", None),
                   coupling=args.coupling, forward_config=_forward_config(cfg))
    digest = _digest(args, path, lib_path)
    write_detections(args.output + "_extended.csv", res.extended, digest, "scheme M extended components")
    write_detections(args.output + "_small.csv", res.small, digest, "scheme M small components")
    _print_detections(res.report.get("stage1", []), "stage 1 (extended, before tuning):")
    _print_detections(res.extended, "stage 2 tuned extended component(s):")
    _print_detections(res.small, "stage 2 small component(s):")
    return 0


def cmd_validate(args) -> int:
    from .validation import format_table, run_identity_suite
    include = ("translation", "rotation", "scaling", "additivity", "asymptotic")
    if args.only:
        include = tuple(args.only)
    checks = run_identity_suite(include=include)
    print(format_table(checks))
    ok = all(c.passed for c in checks)
    print("all identity checks passed" if ok else "some identity checks FAILED")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastoscan", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="compute a far-field pattern for a scene")
    s.add_argument("scene", help="file with 'component' entries (or preset:NAME)")
    s.add_argument("config", nargs="?", help="experiment configuration (default: the scene file)")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--noise", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("build-lib", help="build a reference library")
    s.add_argument("spec", help="file with 'lib_*' entries (or preset:NAME)")
    s.add_argument("config", nargs="?", help="experiment configuration (default: the spec file)")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--polarization", action="store_true", help="also store polarization tensors")
    s.set_defaults(func=cmd_build_lib)

    def common(s):
        s.add_argument("farfield")
        s.add_argument("--config", help="take mesh, mode and thresholds from this configuration")
        s.add_argument("--mode", type=str.lower, choices=("p", "s", "full"))
        s.add_argument("--box", type=float, nargs="+", help="lo hi (all axes) or xlo xhi ylo yhi zlo zhi")
        s.add_argument("--spacing", type=float)
        s.add_argument("--threshold", type=float)
        s.add_argument("--min-separation", type=float)
        s.add_argument("-o", "--output", default="elastoscan", help="output file prefix")

    s = sub.add_parser("locate-small", help="Scheme S: point-scatterer indicator")
    common(s)
    s.add_argument("--absolute", action="store_true", help="threshold is absolute, not relative to the maximum")
    s.add_argument("--vtk", action="store_true", help="also write a legacy VTK volume")
    s.set_defaults(func=cmd_locate_small)

    s = sub.add_parser("locate-extended", help="Scheme R: library matching with subtraction")
    common(s)
    s.add_argument("--lib", required=True)
    s.add_argument("--upper", type=float)
    s.add_argument("--no-refine", action="store_true", help="skip the back-fitting refinement")
    s.add_argument("--coupling", type=int, default=0, help="multiple-scattering corrections (forward solves)")
    s.add_argument("--volumes", action="store_true", help="write the indicator volume of every entry")
    s.set_defaults(func=cmd_locate_extended)

    s = sub.add_parser("locate-multiscale", help="Scheme M: extended components, then small ones")
    common(s)
    s.add_argument("--lib", required=True)
    s.add_argument("--delta", type=float, help="tune-up half-width (default two mesh spacings)")
    s.add_argument("--refine-factor", type=int, default=4, help="fine spacing = spacing / factor")
    s.add_argument("--s-threshold", type=float, default=0.3)
    s.add_argument("--coupling", type=int, default=0)
    s.set_defaults(func=cmd_locate_multiscale)

    s = sub.add_parser("validate", help="run the far-field identity suite")
    s.add_argument("--only", nargs="+", choices=("translation", "rotation", "scaling", "additivity", "asymptotic"))
    s.set_defaults(func=cmd_validate)
    return p


def _fail(kind: str, exc: BaseException, status: int) -> int:
    rec = {"error": kind, "message": str(exc)}
    if isinstance(exc, ParseError):
        rec.update(file=exc.path, line=exc.line)
    elif isinstance(exc, OSError) and exc.filename:
        rec.update(file=str(exc.filename))
    sys.stderr.write(json.dumps(rec) + "\n")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        return _fail("ParseError", exc, 2)
    except InputError as exc:
        return _fail("InputError", exc, 2)
    except (DecompositionError, np.linalg.LinAlgError) as exc:
        return _fail("SolverError", exc, 3)
    except OSError as exc:
        return _fail("IOError", exc, 4)


if __name__ == "__main__":
    sys.exit(main())
