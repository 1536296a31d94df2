"""Acceptance suite: one test per criterion, printed pass/fail lines.

Run with ``pytest -v -s tests/test_acceptance.py`` to see the lines.
"""

import time

import numpy as np

import lyapcert as lc
from lyapcert import cli
from lyapcert.certify import CertifyParams, QI_NOT, QI_QUASI
from lyapcert.geometry import _parity_points

from conftest import BOX2, field
from test_field_expr import SMOOTH_FUNCS, random_expr
from lyapcert import field_expr as fe

ORIGIN = (0.0, 0.0)


def report(n, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {n} ({name}): {status}" +
          (f": {detail}" if detail else ""), flush=True)
    assert ok, f"criterion {n} ({name}): {detail}"


def test_criterion_1_pipeline_positive():
    t0 = time.perf_counter()
    F = lc.parse_expression("x^2 + y^2", 2)
    grid = lc.build_grid(F, BOX2, 256)
    damped = field("y", "-x - y")
    family = lc.build_nested_family(F, ORIGIN, grid, CertifyParams(count=6))
    cert = lc.certify_stability(damped, family)
    elapsed = time.perf_counter() - t0
    min_S = min(r.min_S for r in cert.reports)
    ok = (cert.verdict == "certified-stable"
          and len(family) >= 6
          and all(r.min_S >= -1e-4 for r in cert.reports)
          and elapsed < 10.0)
    report(1, "damped oscillator certified", ok,
           f"verdict={cert.verdict}, surfaces={len(family)}, "
           f"min S={min_S:.3g}, runtime={elapsed:.2f}s")


def test_criterion_2_tangent_case(circle_family):
    harmonic = field("y", "-x")
    cert = lc.certify_stability(harmonic, circle_family)
    max_abs = max(max(abs(r.min_S), abs(r.max_S)) for r in cert.reports)
    ok = cert.verdict == "certified-stable" and max_abs <= 1e-4
    report(2, "harmonic oscillator tangent", ok,
           f"verdict={cert.verdict}, max |S|={max_abs:.3g}")


def test_criterion_3_violation_detection(circle_F, circle_grid, circle_family):
    source = field("x", "y")
    cert = lc.certify_stability(source, circle_family)
    falsifier = lc.containment_test(source, circle_family,
                                    trials=200, horizon=100.0)
    unit_family = lc.build_nested_family(circle_F, ORIGIN, circle_grid,
                                         CertifyParams(a0=1.0))
    t_escape = lc.first_escape_time(source, unit_family.surfaces[0],
                                    (0.1, 0.0), 10.0)
    ok = (cert.verdict == "violated"
          and cert.witness is not None and cert.witness["S"] <= -0.2
          and falsifier.escape_rate >= 0.95
          and t_escape is not None
          and abs(t_escape - 2.303) <= 0.1)
    report(3, "source field violation", ok,
           f"verdict={cert.verdict}, witness S={cert.witness['S']:.3g}, "
           f"escape rate={falsifier.escape_rate:.0%}, "
           f"first escape t={t_escape:.3f} (ln 10 = 2.303)")


def test_criterion_4_quasi_isolation_suite():
    quasi = ["x^2 + y^2", "x^2 + y^4", "x^4 + y^4"]
    not_quasi = ["x^2", "x*y", "x^3 - 3*x*y^2", "x^2 - y^2"]
    correct = 0
    results = []
    for source, expected in ([(s, QI_QUASI) for s in quasi]
                             + [(s, QI_NOT) for s in not_quasi]):
        F = lc.parse_expression(source, 2)
        grid = lc.build_grid(F, BOX2, 256)
        verdict = lc.check_quasi_isolated(F, ORIGIN, grid).verdict
        hit = verdict == expected
        correct += hit
        results.append(f"{source}:{'ok' if hit else verdict}")
    total = len(quasi) + len(not_quasi)
    ok = correct == total
    report(4, "quasi-isolation oracle suite", ok,
           f"{correct}/{total} correct ({', '.join(results)})")


def test_criterion_5_gradient_classification(circle_F, circle_grid):
    gc_bowl = lc.classify_gradient_system(circle_F, ORIGIN, circle_grid)
    F_dome = lc.parse_expression("-(x^2 + y^2)", 2)
    grid_dome = lc.build_grid(F_dome, BOX2, 256)
    gc_dome = lc.classify_gradient_system(F_dome, ORIGIN, grid_dome)
    ok = (gc_bowl.verdict == "stable-for-F"
          and gc_bowl.certificate.verdict == "certified-stable"
          and all(s == 1 for s in gc_bowl.surface_signs)
          and gc_dome.verdict == "stable-for-minus-F"
          and gc_dome.certificate.verdict == "certified-stable"
          and all(s == -1 for s in gc_dome.surface_signs))
    report(5, "gradient system classification", ok,
           f"x^2+y^2 -> {gc_bowl.verdict}, -(x^2+y^2) -> {gc_dome.verdict}, "
           f"no mixed-sign surface")


def test_criterion_6_hamiltonian_pendulum():
    F = lc.parse_expression("z^2/2 - cos(y)", 2, ("y", "z"))
    grid = lc.build_grid(F, BOX2, 256)
    cert = lc.certify_hamiltonian(F, 1, ORIGIN, grid)
    max_abs = cert.extras["hamiltonian_max_abs_S"]
    ok = cert.verdict == "certified-stable" and max_abs <= 1e-6
    report(6, "Hamiltonian pendulum", ok,
           f"verdict={cert.verdict}, max |S|={max_abs:.3g}")


def test_criterion_7_geometry_oracles(circle_F, unit_circle):
    C = 2.0
    residuals = {}
    for res in (128, 256):
        grid = lc.build_grid(circle_F, BOX2, res)
        comps = lc.extract_level_components(grid, 1.0)
        r = np.linalg.norm(comps[0].vertices, axis=1)
        residuals[res] = float(np.max(np.abs(r - 1.0)))
    bound_ok = all(residuals[res] <= C * 4.0 / res ** 2 for res in (128, 256))
    halves_ok = residuals[256] <= residuals[128] / 2.0

    rng = np.random.default_rng(777)
    pts = rng.uniform(-2, 2, size=(1000, 2))
    r = np.linalg.norm(pts, axis=1)
    keep = np.abs(r - 1.0) > unit_circle.cell
    agree = np.array_equal(_parity_points(unit_circle, pts[keep]),
                           r[keep] < 1.0)

    F3 = lc.parse_expression("x^2 + y^2 + z^2", 3)
    grid3 = lc.build_grid(F3, [(-2, 2)] * 3, 64)
    comps3 = lc.extract_level_components(grid3, 1.0)
    sphere = lc.classify_closed(comps3[0], grid3)  # raises if not watertight
    edges = np.sort(np.concatenate([
        sphere.faces[:, [0, 1]], sphere.faces[:, [1, 2]], sphere.faces[:, [2, 0]],
    ]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    watertight = bool(np.all(counts == 2))

    ok = bound_ok and halves_ok and agree and watertight
    report(7, "geometry oracles", ok,
           f"residuals 128/256 = {residuals[128]:.2e}/{residuals[256]:.2e}, "
           f"parity agreement={agree}, sphere watertight={watertight} "
           f"({len(sphere.faces)} triangles)")


def test_criterion_8_symbolic_derivative_check():
    rng = np.random.default_rng(2718)
    checked = 0
    attempts = 0
    worst = 0.0
    h = 1e-4
    while checked < 100 and attempts < 5000:
        attempts += 1
        e = random_expr(rng, depth=int(rng.integers(1, 5)), n=2,
                        funcs=SMOOTH_FUNCS)
        p = rng.uniform(-2, 2, size=2)
        grads_ok = True
        errs = []
        for i in range(2):
            d = lc.differentiate(e, i)
            sym = fe.evaluate_unchecked(d, p)
            step = np.zeros(2)
            step[i] = h
            fd = (fe.evaluate_unchecked(e, p + step)
                  - fe.evaluate_unchecked(e, p - step)) / (2 * h)
            if not (np.isfinite(sym) and np.isfinite(fd)) or abs(sym) > 1e3:
                grads_ok = False
                break
            errs.append(abs(fd - sym) / max(1.0, abs(sym)))
        val = fe.evaluate_unchecked(e, p)
        if not grads_ok or not np.isfinite(val) or abs(val) > 1e3:
            continue
        checked += 1
        worst = max(worst, max(errs))
    ok = checked == 100 and worst <= 1e-5
    report(8, "symbolic derivatives vs central differences", ok,
           f"{checked} expressions, worst relative error {worst:.2e}")


def test_criterion_9_determinism(tmp_path):
    config = """
[system]
dimension = 2
mode = "explicit"
f = ["y", "-x - y"]
F = "x^2 + y^2"
x0 = [0.0, 0.0]

[grid]
box = [[-2.0, 2.0], [-2.0, 2.0]]
resolution = 256
"""
    cfg = tmp_path / "system.toml"
    cfg.write_text(config)
    outs = []
    for run in ("run1", "run2"):
        d = tmp_path / run
        d.mkdir()
        out = d / "certificate.json"
        code = cli.main(["certify", str(cfg), "--out", str(out)])
        assert code == 0
        outs.append(out.read_bytes())
    ok = outs[0] == outs[1]
    report(9, "byte-identical certificates", ok,
           f"{len(outs[0])} bytes each")
