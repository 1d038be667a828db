"""Acceptance criteria 1 to 8.

Each test prints one ``CRITERION n: PASS|FAIL ...`` line (collected again in
the terminal summary) and then asserts. Reference libraries for Examples 2
and 3 are cached under pytest's cache directory, keyed by the preset digest
and package version, so only the first run pays for them.
"""

import math
import time
from importlib import resources

import numpy as np
import pytest

import elastoscan
from elastoscan.asymptotic import polarization_tensor, ball_polarization, small_scene_farfield
from elastoscan.core import IncidentWave, Material, l2_inner, make_sphere_grid
from elastoscan.farfield import add_noise, split_ps, subtract_library_entry
from elastoscan.geometry import component
from elastoscan.imaging import (SamplingMesh, half_max_width, indicator_extended, indicator_small,
                                scheme_m, scheme_r, scheme_s)
from elastoscan.io import load_config, read_farfield, read_library, write_farfield, write_library
from elastoscan.library import audit_library
from elastoscan.validation import (check_additivity, check_asymptotic_order, run_identity_suite)

RESULTS = {}


def report(n, passed, detail):
    line = f"CRITERION {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return passed


def preset(name):
    return load_config(resources.files("elastoscan") / "presets" / f"{name}.cfg")


def cached(request, name, make, read, write):
    """Build ``name`` once per preset digest and package version."""
    d = request.config.cache.mkdir("elastoscan")
    path = d / name
    if path.exists():
        return read(path)
    obj = make()
    write(path, obj)
    return obj


def example_data(request, name, cfg):
    key = f"{name}-data-{elastoscan.__version__}-{cfg.digest[:16]}.dat"
    # noise-free data; noise is added per seed in the tests
    return cached(request, key, lambda: cfg.simulate(noise=0.0), read_farfield, write_farfield)


def example_library(request, name, cfg):
    key = f"{name}-lib-{elastoscan.__version__}-{cfg.digest[:16]}.dat"
    return cached(request, key, cfg.build_library, read_library, write_library)


def same_cell(lib, entry_key, truth_key):
    """True when the detected entry is the true one or indistinguishable from it."""
    a = lib.find(*entry_key)
    b = lib.find(*truth_key)
    if a is None or b is None:
        return False
    return a is b or audit_library([a, b], lib.wave)["min_gap"] < lib.audit.get("tolerance", 1e-3)


# ---------------------------------------------------------------------------
def test_criterion_1_identity_suite():
    t = time.perf_counter()
    checks = run_identity_suite(include=("translation", "rotation", "scaling"))
    elapsed = time.perf_counter() - t
    worst = max(c.value for c in checks)
    ok = all(c.passed for c in checks) and worst < 2e-2 and elapsed < 120
    detail = ", ".join(f"{c.name} {c.value:.1e}" for c in checks)
    report(1, ok, f"max discrepancy {worst:.2e} (< 2e-2), {elapsed:.0f} s (< 120 s); {detail}")
    assert ok


def test_criterion_2_additivity():
    c = check_additivity((5.0, 10.0, 20.0))
    errs = c.detail["errors"]
    ok = c.detail["monotone"] and errs[-1] < 5e-2
    report(2, ok, "discrepancy at separations 5/10/20: " + " / ".join(f"{e:.3e}" for e in errs)
           + f"; monotone {c.detail['monotone']}, last < 5e-2")
    assert ok


def test_criterion_3_asymptotic_order():
    c = check_asymptotic_order((0.2, 0.1, 0.05))
    errs, ratios = c.detail["errors"], c.detail["ratios"]
    ok = all(b < a for a, b in zip(errs, errs[1:])) and all(1.5 <= r <= 3.0 for r in ratios)
    report(3, ok, "errors " + ", ".join(f"{e:.3e}" for e in errs)
           + "; ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (band [1.5, 3])")
    assert ok


def test_criterion_4_example_1(request):
    cfg = preset("example1")
    t = time.perf_counter()
    clean = example_data(request, "example1", cfg)
    truth = np.array([c.placement.position for c in cfg.scene.components])
    hits, counts = 0, []
    for seed in range(10):
        f = add_noise(clean, 0.05, seed)
        dets = scheme_s(f, cfg.mesh, "Full", cfg.threshold, cfg.min_separation)
        counts.append(len(dets))
        if len(dets) == 3:
            err = [min(np.linalg.norm(truth - d.position, axis=1)) for d in dets]
            near = [int(np.argmin(np.linalg.norm(truth - d.position, axis=1))) for d in dets]
            if max(err) <= 0.5 and len(set(near)) == 3:
                hits += 1
    elapsed = time.perf_counter() - t
    ok = hits >= 9 and elapsed < 600
    report(4, ok, f"{hits}/10 seeds with exactly 3 detections within 0.5 (need 9); "
                  f"counts {counts}; {elapsed:.0f} s (< 600 s)")
    assert ok


def test_criterion_5_s_mode_sharper_than_p():
    mat = Material(20.0, 1.0)
    wave = IncidentWave((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), 0.0, 1.0, 2.0)
    f = small_scene_farfield([component("ball", (0.0, 0.0, 0.0), scale=0.1)], wave, mat, make_sphere_grid(24, 48))
    widths = {}
    for axis in range(3):
        lo, hi = [0.0] * 3, [0.0] * 3
        lo[axis], hi[axis] = -12.0, 12.0
        line = SamplingMesh(tuple(lo), tuple(hi), 0.01)
        for mode in ("P", "S"):
            widths[mode, axis] = half_max_width(indicator_small(f, line, mode), axis)
    ok = all(widths["S", a] < widths["P", a] for a in range(3))
    report(5, ok, "FWHM S vs P along x/y/z: "
           + ", ".join(f"{widths['S', a]:.2f} < {widths['P', a]:.2f}" for a in range(3)))
    assert ok


@pytest.mark.slow
def test_criterion_6_example_2(request):
    cfg = preset("example2")
    lib = example_library(request, "example2", cfg)
    clean = example_data(request, "example2", cfg)
    assert len(lib) == 24
    truth = {c.shape.shape_id: c for c in cfg.scene.components}
    ok_runs, notes = 0, []
    seeds = range(3)
    for seed in seeds:
        f = add_noise(clean, 0.05, seed)
        dets = scheme_r(f, lib, cfg.mesh, "Full", threshold=cfg.threshold, upper=cfg.upper)
        good = len(dets) == 2
        for d in dets:
            c = truth.get(d.entry[0])
            if c is None:
                good = False
                continue
            key = (c.shape.shape_id, c.placement.euler, c.placement.scale)
            err = d.distance(c.placement.position)
            good &= same_cell(lib, d.entry, key) and err <= 0.25
        good &= {d.entry[0] for d in dets} == set(truth)
        ok_runs += good
        notes.append(" + ".join(f"{d.entry[0]}[{','.join(f'{math.degrees(a):g}' for a in d.entry[1])}]"
                                f"x{d.entry[2]:g}@({','.join(f'{v:g}' for v in d.position)})" for d in dets))
    # separation margin of the correct acorn orientation on data with the UFO removed
    f = add_noise(clean, 0.05, 0)
    ufo = truth["ufo"]
    g = subtract_library_entry(f, lib.find("ufo", ufo.placement.euler, 1.0), [ufo.placement.position])
    acorn = truth["acorn"]
    near = SamplingMesh.cube(0.5, 0.125, acorn.placement.position)
    right = lib.find("acorn", acorn.placement.euler, 1.0)
    peaks = {e.label: indicator_extended(g, e, near).max()
             for e in lib.entries if e.shape_id == "acorn" and e.scale == 1.0}
    wrong = max(v for e in lib.entries if e.shape_id == "acorn" and e.scale == 1.0
                and not same_cell(lib, (e.shape_id, e.euler, e.scale), ("acorn", acorn.placement.euler, 1.0))
                for v in [peaks[e.label]])
    eps0 = peaks[right.label] - wrong
    ok = ok_runs == len(seeds) and eps0 > 0.05
    report(6, ok, f"{ok_runs}/{len(seeds)} seeds fully correct ({'; '.join(notes)}); "
                  f"eps0 = {peaks[right.label]:.3f} - {wrong:.3f} = {eps0:.3f} (> 0.05)")
    assert ok


@pytest.mark.slow
def test_criterion_7_example_3(request):
    cfg = preset("example3")
    lib = example_library(request, "example3", cfg)
    clean = example_data(request, "example3", cfg)
    f = add_noise(clean, 0.03, 0)
    t = time.perf_counter()
    res = scheme_m(f, lib, cfg.mesh, "Full")
    elapsed = time.perf_counter() - t
    small_truth = np.array(cfg.scene.components[0].placement.position)
    acorn_truth = np.array(cfg.scene.components[1].placement.position)
    stage1 = [d for d in res.report["stage1"] if d.entry[0] == "acorn"]
    fine = cfg.mesh.spacing / 4
    ok = bool(stage1) and bool(res.small)
    e1 = stage1[0].distance(acorn_truth) if stage1 else math.inf
    tuned = [d for d in res.extended if d.entry[0] == "acorn"]
    e2 = tuned[0].distance(acorn_truth) if tuned else math.inf
    es = min((d.distance(small_truth) for d in res.small), default=math.inf)
    ok = ok and e1 <= 1.0 and es <= fine + 1e-9 and e2 <= e1 + 1e-12
    report(7, ok, f"stage 1 acorn error {e1:.3f}; small UFO error {es:.3f} (<= {fine:g}); "
                  f"tuned acorn error {e2:.3f} (<= stage 1); {res.report['tuneups']} tune-ups, {elapsed:.0f} s")
    assert ok


def test_criterion_8_invariants():
    t = time.perf_counter()
    mat = Material(2.0, 1.0)
    wave = IncidentWave((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), 0.0, 1.0, 2.0)
    grid = make_sphere_grid(24, 48)
    f = small_scene_farfield([component("ball", (-2, 3, -2), scale=0.1),
                              component("peanut", (3, -2, -2), scale=0.1)], wave, mat, grid)
    fp, fs = split_ps(f)
    ortho = abs(l2_inner(fp, fs)) / f.norm() ** 2
    mesh = SamplingMesh.cube(4.0, 0.5)
    a = indicator_small(f, mesh).values
    b = indicator_small(f.with_values((3.7 - 2.1j) * f.values), mesh).values
    scale_inv = float(np.max(np.abs(a - b)))
    x = grid.nodes
    quad = max(abs(grid.weights.sum() - 4 * np.pi),
               abs(np.sum(grid.weights * x[:, 2] ** 2) - 4 * np.pi / 3),
               abs(np.sum(grid.weights * x[:, 0] ** 4) - 4 * np.pi / 5))
    deterministic = np.array_equal(add_noise(f, 0.05, 11).values, add_noise(f, 0.05, 11).values)
    C = polarization_tensor("ball", 1.0, mat).matrix
    c0 = ball_polarization(1.0, mat)
    iso = float(np.max(np.abs(C - c0 * np.eye(3))) / c0)
    elapsed = time.perf_counter() - t
    ok = ortho < 1e-12 and scale_inv < 1e-12 and quad < 1e-12 and deterministic and iso < 1e-3 and elapsed < 60
    report(8, ok, f"P/S orthogonality {ortho:.1e}, indicator scale invariance {scale_inv:.1e}, "
                  f"quadrature {quad:.1e}, noise bit-exact {deterministic}, ball isotropy {iso:.1e}; "
                  f"{elapsed:.1f} s (< 60 s)")
    assert ok
