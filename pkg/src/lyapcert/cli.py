"""Command-line front end.

    lyapcert certify <config.toml> [--out FILE] [--falsify] [--seed N]
                     [--traj-csv DIR]
    lyapcert levels  <config.toml> --out DIR
    lyapcert plot    <certificate.json> --out FILE.svg [--trajectories N]

Exit codes: 0 certified-stable, 1 violated, 2 inconclusive, 3 config or
usage errors, 4 runtime errors.  Certificates are deterministic for a
given config and seed.  LYAPCERT_THREADS caps falsifier parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import certificate, certify, dynamics, meshio, svgplot
from .certify import CertifyParams, VERDICT_INCONCLUSIVE
from .config import SystemConfig, load_config
from .errors import (
    AmbiguousOrientationError,
    ConfigError,
    InsufficientSurfacesError,
    LyapcertError,
    MixedSignError,
    QuasiIsolationError,
    QuasiIsolationRequired,
    SamplerError,
)
from .field_expr import make_gradient_system, make_hamiltonian_system, parse_expression
from .geometry import build_grid

_EXIT = {"certified-stable": 0, "violated": 1, "inconclusive": 2}

# pipeline outcomes that are verdicts, not crashes
_INCONCLUSIVE_ERRORS = (
    InsufficientSurfacesError,
    MixedSignError,
    QuasiIsolationRequired,
    QuasiIsolationError,
    AmbiguousOrientationError,
    SamplerError,
)


def _atomic_write_text(path: str, data: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=".cert-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _system_desc(cfg: SystemConfig, f_sources) -> dict:
    F = cfg.parse_F()
    return {
        "dimension": cfg.dimension,
        "mode": cfg.mode,
        "F": str(F),
        "f": f_sources,
        "x0": [float(c) for c in cfg.x0],
        "variables": list(F.names),
    }


def _tolerance_desc(params: CertifyParams) -> dict:
    return {
        "eta": params.eta,
        "tol_S": params.tol_S,
        "tol_H": params.tol_H,
        "quasi_tol": params.quasi_tol,
        "family_count": params.count,
    }


def _effective_field(cfg: SystemConfig, cert_extras: dict):
    F = cfg.parse_F()
    if cfg.mode == "explicit":
        return cfg.parse_f()
    if cfg.mode == "gradient-of-F":
        direction = cert_extras.get("gradient_direction", "stable-for-F")
        return make_gradient_system(F, negate_F=(direction == "stable-for-minus-F"))
    return make_hamiltonian_system(F, cfg.dof)


def cmd_certify(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    params = cfg.params
    F = cfg.parse_F()
    grid = build_grid(F, cfg.box, cfg.resolution)
    x0 = np.asarray(cfg.x0, dtype=np.float64)

    qi = certify.check_quasi_isolated(F, x0, grid, params)
    f_sources = cfg.f_sources if cfg.mode == "explicit" else None
    cert = None
    reasons = []
    extras = {}
    witness = None
    rows = []
    verdict = VERDICT_INCONCLUSIVE

    if qi.verdict != certify.QI_QUASI:
        reasons.append(f"quasi-isolation verdict: {qi.verdict} ({qi.reason})")
    else:
        try:
            if cfg.mode == "explicit":
                f = cfg.parse_f()
                family = certify.build_nested_family(F, x0, grid, params, qi)
                cert = certify.certify_stability(f, family, params.tol_S)
            elif cfg.mode == "gradient-of-F":
                gc = certify.classify_gradient_system(F, x0, grid, params, qi)
                cert = gc.certificate
            else:
                cert = certify.certify_hamiltonian(F, cfg.dof, x0, grid, params, qi)
        except _INCONCLUSIVE_ERRORS as exc:
            reasons.append(str(exc))
            if isinstance(exc, InsufficientSurfacesError):
                reasons.extend(f"level {a:.6g}: {why}" for a, why in exc.level_log)

    empirical = None
    if cert is not None:
        verdict = cert.verdict
        reasons.extend(cert.reasons)
        extras = dict(cert.extras)
        witness = cert.witness
        rows = certificate.surface_rows(cert.family, cert)
        f_eff = _effective_field(cfg, cert.extras)
        f_sources = f_eff.sources()
        if args.falsify:
            report = dynamics.containment_test(
                f_eff, cert.family,
                trials=cfg.falsifier.trials,
                horizon=cfg.falsifier.horizon,
                cfg=dynamics.IntegratorConfig(rel_tol=cfg.falsifier.rel_tol,
                                              abs_tol=cfg.falsifier.abs_tol),
                seed=seed,
                dump_dir=args.traj_csv,
            )
            empirical = report.as_dict()
            empirical["note"] = ("simulation evidence only; it never upgrades "
                                 "the certificate verdict")

    doc = certificate.assemble(
        verdict=verdict,
        mode=cfg.mode,
        system=_system_desc(cfg, f_sources),
        grid=grid.descriptor(),
        tolerances=_tolerance_desc(params),
        quasi=qi.as_dict(),
        family_rows=rows,
        witness=witness,
        reasons=reasons,
        extras=extras,
        seed=seed,
        empirical=empirical,
    )

    out = args.out or "certificate.json"
    if cert is not None and cert.family is not None:
        stem = os.path.splitext(os.path.basename(out))[0]
        mesh_dir = os.path.join(os.path.dirname(out) or ".", f"{stem}_surfaces")
        os.makedirs(mesh_dir, exist_ok=True)
        for name in os.listdir(mesh_dir):
            if name.startswith("surface_") and name.endswith(".mesh"):
                os.unlink(os.path.join(mesh_dir, name))
        files = []
        for i, H in enumerate(cert.family.surfaces):
            name = f"surface_{i:02d}.mesh"
            meshio.write_surface(H, os.path.join(mesh_dir, name))
            files.append(name)
        doc["meshes"] = {"directory": os.path.basename(mesh_dir), "files": files}

    _atomic_write_text(out, certificate.dumps(doc))
    print(f"{verdict}: certificate written to {out}")
    return _EXIT[verdict]


def cmd_levels(args) -> int:
    cfg = load_config(args.config)
    F = cfg.parse_F()
    grid = build_grid(F, cfg.box, cfg.resolution)
    x0 = np.asarray(cfg.x0, dtype=np.float64)
    surfaces, levels, _, _, log = certify.collect_level_surfaces(
        F, x0, grid, cfg.params)
    os.makedirs(args.out, exist_ok=True)
    for i, H in enumerate(surfaces):
        meshio.write_surface(H, os.path.join(args.out, f"surface_{i:02d}.mesh"))
    for target, why in log:
        print(f"level {target:.8g}: {why}")
    print(f"{len(surfaces)} surface(s) accepted "
          f"(family_count = {cfg.params.count}); meshes in {args.out}")
    return 0 if len(surfaces) >= cfg.params.count else 2


def cmd_plot(args) -> int:
    with open(args.certificate, "r") as fh:
        doc = json.load(fh)
    system = doc.get("system", {})
    if system.get("dimension") != 2:
        print("plotting supports n=2 only", file=sys.stderr)
        return 3
    meshes = doc.get("meshes")
    if not meshes:
        print("certificate has no mesh sidecar files", file=sys.stderr)
        return 3
    base = os.path.dirname(os.path.abspath(args.certificate))
    mesh_dir = os.path.join(base, meshes["directory"])
    surfaces = [meshio.read_surface(os.path.join(mesh_dir, name))
                for name in meshes["files"]]

    f_sources = system.get("f")
    names = system.get("variables")
    S_values = []
    tols = []
    rows = doc.get("surfaces", [])
    for i, H in enumerate(surfaces):
        if f_sources and H.normals is not None:
            comps = [parse_expression(src, 2, names) for src in f_sources]
            fv = np.stack([c.eval_many(H.vertices) for c in comps], axis=-1)
            S = np.einsum("ij,ij->i", H.normals, fv)
        else:
            S = np.zeros(len(H.vertices))
        S_values.append(S)
        tol = rows[i].get("tol_S", 1e-6) if i < len(rows) else 1e-6
        tols.append(tol)

    trajectories = None
    if args.trajectories and f_sources:
        comps = [parse_expression(src, 2, names) for src in f_sources]
        from .field_expr import VectorFieldDef

        f = VectorFieldDef(comps)
        rng = np.random.default_rng(doc.get("seed", 42))
        inner = surfaces[-1]
        starts = dynamics.sample_inside(inner, np.asarray(system["x0"]),
                                        args.trajectories, rng)
        trajectories = [
            dynamics.integrate(f, s, 20.0,
                               dynamics.IntegratorConfig(blowup_norm=1e3)).states
            for s in starts
        ]

    box = doc["grid"]["box"]
    svgplot.render_svg(box, surfaces, S_values, tols, system["x0"],
                       args.out, trajectories)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lyapcert",
        description="Lyapunov stability certificates from nested level-set "
                    "hypersurfaces, with an ODE falsifier cross-check.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="run the certification pipeline")
    p.add_argument("config")
    p.add_argument("--out", default="certificate.json")
    p.add_argument("--falsify", action="store_true",
                   help="run the trajectory containment falsifier")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--traj-csv", default=None, metavar="DIR",
                   help="dump falsifier trajectories as CSV into DIR")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("levels", help="extract and export level surfaces only")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_levels)

    p = sub.add_parser("plot", help="render a 2D certificate as SVG")
    p.add_argument("certificate")
    p.add_argument("--out", required=True)
    p.add_argument("--trajectories", type=int, default=0)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except LyapcertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
