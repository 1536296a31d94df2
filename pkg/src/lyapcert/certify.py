"""Certification engine: quasi-isolation, nested families, sign conditions.

The stability argument: a sequence of connected closed hypersurfaces, each
bounding the equilibrium, nested, with Hausdorff distances to the
equilibrium going to zero, on which the scalar product S(x) = <N(x), f(x)>
of the inward unit normal with the field is everywhere >= 0, certifies
Lyapunov stability.  Families are constructed from level sets of a
candidate scalar function F around a quasi-isolated point (a point that is
alone a connected component of its own level set); quasi-isolation is
probed numerically by flood-filling the band |F - F(x0)| < eps across a
shrinking schedule of eps and watching the component diameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage

from . import field_expr, geometry
from .errors import (
    InsufficientSurfacesError,
    LyapcertError,
    MixedSignError,
    NonFiniteError,
    QuasiIsolationError,
    QuasiIsolationRequired,
    SurfaceRejected,
    TooCloseToSurfaceError,
)
from .field_expr import ScalarExpr, VectorFieldDef, evaluate
from .geometry import Hypersurface, SampleGrid

__all__ = [
    "CertifyParams",
    "QuasiIsolationReport",
    "NestedFamily",
    "SignReport",
    "StabilityCertificate",
    "GradientClassification",
    "check_quasi_isolated",
    "build_nested_family",
    "collect_level_surfaces",
    "sign_condition",
    "tilde_sign_condition",
    "certify_stability",
    "classify_gradient_system",
    "certify_hamiltonian",
]

VERDICT_CERTIFIED = "certified-stable"
VERDICT_VIOLATED = "violated"
VERDICT_INCONCLUSIVE = "inconclusive"

QI_QUASI = "quasi-isolated"
QI_NOT = "not-quasi-isolated"
QI_INCONCLUSIVE = "inconclusive"

# stall detection: diameters within 5% over the last 3 bands, above 10 cells
_STALL_WINDOW = 3
_STALL_RATIO = 1.05
_STALL_MIN_CELLS = 10.0
_QUASI_TOL_CELLS = 16.0


@dataclass
class CertifyParams:
    """Knobs for the certification pipeline, with desk-scale defaults."""

    count: int = 6                     # surfaces required in a family
    eta: float = 1e-4                  # min ||grad F|| on a usable level
    tol_S: Optional[float] = None      # None: per-surface default
    tol_H: float = 1e-9                # Hamiltonian tangency tolerance
    quasi_tol: Optional[float] = None  # None: 16 cells
    qi_steps: int = 12                 # bands in the eps schedule
    eps0: Optional[float] = None       # None: max|F| over half ball / 16
    a0: Optional[float] = None         # None: max|F| over half ball / 2
    a_schedule: Optional[List[float]] = None  # explicit level magnitudes
    max_levels: int = 40


@dataclass
class QuasiIsolationReport:
    verdict: str
    eps: List[float]
    diameters: List[float]
    delta: float
    quasi_tol: float
    cell: float
    reason: str

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "delta": self.delta,
            "quasi_tol": self.quasi_tol,
            "eps": list(self.eps),
            "band_diameters": list(self.diameters),
            "reason": self.reason,
        }


def _ball_setup(F: ScalarExpr, x0, grid: SampleGrid):
    x0 = np.asarray(x0, dtype=np.float64)
    if not grid.contains(x0):
        raise QuasiIsolationError("x0 must lie strictly inside the grid box")
    margin = float(min(np.min(x0 - grid.lo), np.min(grid.hi - x0)))
    delta = 0.95 * margin
    axes = grid.node_axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    dist2 = np.zeros_like(grid.values)
    for d in range(grid.dimension):
        dist2 = dist2 + (mesh[d] - x0[d]) ** 2
    dist = np.sqrt(dist2)
    f0 = evaluate(F, x0)
    shifted = grid.values - f0
    node0 = tuple(
        int(np.clip(round((x0[d] - grid.lo[d]) / grid.spacing[d]),
                    0, grid.resolution[d]))
        for d in range(grid.dimension))
    return x0, delta, dist, f0, shifted, node0


def check_quasi_isolated(F: ScalarExpr, x0, grid: SampleGrid,
                         params: Optional[CertifyParams] = None) -> QuasiIsolationReport:
    """Probe whether x0 is quasi-isolated for F on this grid.

    For each eps_i = eps0 * 2^-i the band {|F - F(x0)| < eps_i} restricted
    to the ball B_delta(x0) is flood-filled from the node nearest x0; the
    component's bounding-box diameter is recorded.  Shrinking diameters
    witness quasi-isolation; a stall witnesses a higher-dimensional piece
    of the level set through x0.
    """
    params = params or CertifyParams()
    x0, delta, dist, _, shifted, node0 = _ball_setup(F, x0, grid)
    cell = grid.min_cell
    ball = dist <= delta
    half_ball = dist <= 0.5 * delta
    absvals = np.abs(shifted)
    peak = float(np.max(absvals[half_ball]))
    eps0 = params.eps0 if params.eps0 is not None else peak / 16.0
    if not eps0 > 0:
        raise QuasiIsolationError("F is constant near x0; no eps schedule exists")
    if absvals[node0] >= eps0:
        raise QuasiIsolationError(
            f"schedule start too small: |F - F(x0)| = {absvals[node0]:.3g} at the "
            f"node nearest x0, eps0 = {eps0:.3g}")
    quasi_tol = (params.quasi_tol if params.quasi_tol is not None
                 else _QUASI_TOL_CELLS * cell)

    eps_list = []
    diams = []
    for i in range(params.qi_steps):
        eps = eps0 * 2.0 ** (-i)
        mask = (absvals < eps) & ball
        if not mask[node0]:
            break  # band quantized away at node scale; stop the schedule
        # full connectivity: thin diagonal bands stay connected at grid scale
        structure = np.ones((3,) * grid.dimension, dtype=bool)
        labels, _ = ndimage.label(mask, structure=structure)
        comp = labels == labels[node0]
        count = int(np.count_nonzero(comp))
        if i == 0 and count <= 1:
            raise QuasiIsolationError(
                "grid too coarse: first band component is a single cell")
        extent2 = 0.0
        for d in range(grid.dimension):
            other = tuple(k for k in range(grid.dimension) if k != d)
            proj = comp.any(axis=other) if other else comp
            idx = np.nonzero(proj)[0]
            extent2 += ((idx[-1] - idx[0]) * grid.spacing[d]) ** 2
        diam = max(float(np.sqrt(extent2)), cell)
        eps_list.append(float(eps))
        diams.append(diam)

    if len(diams) < 4:
        return QuasiIsolationReport(
            QI_INCONCLUSIVE, eps_list, diams, delta, quasi_tol, cell,
            "eps schedule truncated before 4 usable bands")
    if diams[-1] < quasi_tol:
        return QuasiIsolationReport(
            QI_QUASI, eps_list, diams, delta, quasi_tol, cell,
            f"band diameter shrank to {diams[-1]:.3g} < {quasi_tol:.3g}")
    tail = diams[-_STALL_WINDOW:]
    stalled = (max(tail) <= _STALL_RATIO * min(tail)
               and diams[-1] > _STALL_MIN_CELLS * cell)
    if stalled:
        return QuasiIsolationReport(
            QI_NOT, eps_list, diams, delta, quasi_tol, cell,
            f"band diameter stalled near {diams[-1]:.3g} over the last "
            f"{_STALL_WINDOW} bands")
    return QuasiIsolationReport(
        QI_INCONCLUSIVE, eps_list, diams, delta, quasi_tol, cell,
        "band diameters still shrinking but not yet below quasi_tol")


# --- nested families ---------------------------------------------------------

@dataclass
class NestedFamily:
    """Ordered nested surfaces converging to x0, with per-surface evidence."""

    x0: np.ndarray
    surfaces: List[Hypersurface]
    levels: List[float]
    d_to_x0: List[float]
    diameters: List[float]
    min_grad_norms: List[float]
    cell: float
    provenance: dict
    level_log: List[tuple] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.surfaces)

    def subset(self, indices) -> "NestedFamily":
        indices = list(indices)
        prov = dict(self.provenance)
        prov["subset"] = indices
        return NestedFamily(
            x0=self.x0,
            surfaces=[self.surfaces[i] for i in indices],
            levels=[self.levels[i] for i in indices],
            d_to_x0=[self.d_to_x0[i] for i in indices],
            diameters=[self.diameters[i] for i in indices],
            min_grad_norms=[self.min_grad_norms[i] for i in indices],
            cell=self.cell,
            provenance=prov,
            level_log=list(self.level_log),
        )


def _smoothness_guard(F: ScalarExpr, H: Hypersurface) -> Optional[str]:
    """Refuse surfaces passing through loci where F or grad F is non-smooth."""
    exprs = field_expr.nonsmooth_args(F)
    for i in range(F.dimension):
        exprs += field_expr.nonsmooth_args(field_expr.differentiate(F, i))
    for e in exprs:
        vals = np.abs(e.eval_many(H.vertices))
        if float(np.min(vals)) < 1e-9:
            return f"surface passes through non-smooth locus of '{e}'"
    return None


def build_nested_family(F: ScalarExpr, x0, grid: SampleGrid,
                        params: Optional[CertifyParams] = None,
                        quasi_report: Optional[QuasiIsolationReport] = None) -> NestedFamily:
    """Build a nested family of level-set surfaces of F converging to x0.

    Levels follow a_i = a0 * 2^-i, positive sign tried before negative.
    A level contributes the innermost component that is accepted as a
    closed hypersurface, bounds x0, clears the regular-value floor eta,
    and stays nested with strictly shrinking distance and diameter.
    Fewer accepted surfaces than params.count is an error carrying the
    per-level rejection log.
    """
    params = params or CertifyParams()
    if quasi_report is None:
        quasi_report = check_quasi_isolated(F, x0, grid, params)
    if quasi_report.verdict != QI_QUASI:
        raise QuasiIsolationRequired(quasi_report.verdict)
    accepted, levels, a0, delta, log = collect_level_surfaces(F, x0, grid, params)

    if len(accepted) < params.count:
        raise InsufficientSurfacesError(len(accepted), params.count, log)

    x0 = np.asarray(x0, dtype=np.float64)
    return NestedFamily(
        x0=x0,
        surfaces=accepted,
        levels=levels,
        d_to_x0=[geometry.distance_to_point(x0, H) for H in accepted],
        diameters=[H.diameter for H in accepted],
        min_grad_norms=[geometry.min_gradient_norm(F, H) for H in accepted],
        cell=grid.min_cell,
        provenance={
            "F": str(F),
            "x0": [float(c) for c in x0],
            "grid": grid.descriptor(),
            "eta": params.eta,
            "a0": a0,
            "delta": delta,
        },
        level_log=log,
    )


def collect_level_surfaces(F: ScalarExpr, x0, grid: SampleGrid,
                           params: CertifyParams):
    """Run the level schedule and gather accepted, nested, oriented surfaces.

    Returns (surfaces, levels, a0, delta, log) without enforcing a count or
    the quasi-isolation gate; build_nested_family wraps this with both.
    """
    x0, delta, dist, f0, shifted, _ = _ball_setup(F, x0, grid)
    half_ball = dist <= 0.5 * delta
    a0 = params.a0 if params.a0 is not None else float(
        np.max(np.abs(shifted[half_ball]))) / 2.0
    if not a0 > 0:
        raise LyapcertError("no usable level scale: F is flat near x0")
    if params.a_schedule is not None:
        schedule = [float(a) for a in params.a_schedule]
        if any(a <= 0 for a in schedule) or \
                any(b >= a for a, b in zip(schedule, schedule[1:])):
            raise LyapcertError("a_schedule must be positive and strictly decreasing")
    else:
        schedule = [a0 * 2.0 ** (-i) for i in range(params.max_levels)]

    accepted: List[Hypersurface] = []
    levels: List[float] = []
    log: List[tuple] = []
    failures_before_start = 0
    for a in schedule:
        took_level = False
        for s in (1.0, -1.0):
            target = f0 + s * a
            surface = _best_surface_at_level(
                F, x0, grid, target, params.eta, accepted, log)
            if surface is not None:
                accepted.append(surface)
                levels.append(surface.level)
                took_level = True
                break
        if took_level:
            continue
        if accepted:
            break  # longest prefix ends at the first failing level
        failures_before_start += 1
        if failures_before_start >= 8:
            break
    return accepted, levels, a0, delta, log


def _best_surface_at_level(F, x0, grid, target, eta, accepted, log):
    try:
        comps = geometry.extract_level_components(grid, target)
    except LyapcertError as exc:
        log.append((target, f"extraction failed: {exc}"))
        return None
    if not comps:
        log.append((target, "level set misses the box"))
        return None
    candidates = []
    for c in comps:
        try:
            H = geometry.classify_closed(c, grid)
        except SurfaceRejected as exc:
            log.append((target, exc.reason))
            continue
        try:
            if not geometry.bounds_point(H, x0):
                log.append((target, "does not bound x0"))
                continue
        except TooCloseToSurfaceError:
            log.append((target, "x0 too close to surface"))
            continue
        candidates.append((geometry.distance_to_point(x0, H), H))
    if not candidates:
        return None
    candidates.sort(key=lambda pair: pair[0])
    d, H = candidates[0]

    gn = geometry.min_gradient_norm(F, H)
    if gn < eta:
        log.append((target, f"min grad norm {gn:.3g} below eta {eta:.3g}"))
        return None
    why = _smoothness_guard(F, H)
    if why is not None:
        log.append((target, why))
        return None
    try:
        H = geometry.orient_inward(H, x0, F)
    except LyapcertError as exc:
        log.append((target, f"orientation failed: {exc}"))
        return None
    if accepted:
        prev = accepted[-1]
        try:
            if not geometry.is_nested(prev, H):
                log.append((target, "not nested inside the previous surface"))
                return None
        except TooCloseToSurfaceError:
            log.append((target, "too close to the previous surface"))
            return None
        d_prev = geometry.distance_to_point(x0, prev)
        if not d < d_prev:
            log.append((target, "distance to x0 not strictly decreasing"))
            return None
        if not H.diameter < prev.diameter:
            log.append((target, "diameter not strictly decreasing"))
            return None
    log.append((target, "accepted"))
    return H


# --- sign conditions ---------------------------------------------------------

@dataclass
class SignReport:
    """Extrema of the surface sign condition and its tolerance bookkeeping."""

    index: int
    min_S: float
    max_S: float
    argmin_vertex: np.ndarray
    argmin_index: int
    violations: int
    tol: float
    interp_margin: float
    max_f_norm: float
    eps_sign: Optional[int] = None
    values: np.ndarray = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "min_S": self.min_S,
            "max_S": self.max_S,
            "argmin_vertex": [float(c) for c in self.argmin_vertex],
            "violations": self.violations,
            "tol_S": self.tol,
            "interp_margin": self.interp_margin,
        }


def _field_values(f: VectorFieldDef, H: Hypersurface) -> np.ndarray:
    fv = f.eval_many(H.vertices)
    bad = ~np.isfinite(fv)
    if np.any(bad):
        vi, ci = np.argwhere(bad)[0]
        # re-evaluate through the locating walker for a precise message
        evaluate(f.components[int(ci)], H.vertices[int(vi)])
        raise NonFiniteError(str(f.components[int(ci)]), H.vertices[int(vi)])
    return fv


def _default_tol(max_f_norm: float, cell: float,
                 tol_S: Optional[float]) -> tuple:
    margin = cell * max_f_norm
    tol = tol_S if tol_S is not None else 1e-6 * max_f_norm + margin
    return tol, margin


def sign_condition(f: VectorFieldDef, H: Hypersurface,
                   tol_S: Optional[float] = None, index: int = -1) -> SignReport:
    """Evaluate S(v) = <N(v), f(v)> at every vertex of an oriented surface."""
    if H.normals is None:
        raise LyapcertError("surface has no inward normals; orient it first")
    fv = _field_values(f, H)
    S = np.einsum("ij,ij->i", H.normals, fv)
    max_f = float(np.max(np.linalg.norm(fv, axis=1)))
    tol, margin = _default_tol(max_f, H.cell, tol_S)
    k = int(np.argmin(S))
    return SignReport(
        index=index,
        min_S=float(S[k]),
        max_S=float(np.max(S)),
        argmin_vertex=H.vertices[k].copy(),
        argmin_index=k,
        violations=int(np.count_nonzero(S < -tol)),
        tol=tol,
        interp_margin=margin,
        max_f_norm=max_f,
        values=S,
    )


def tilde_sign_condition(F: ScalarExpr, f: VectorFieldDef, H: Hypersurface,
                         tol_S: Optional[float] = None, index: int = -1) -> SignReport:
    """Gradient form of the sign condition: <eps(H) grad F(v), f(v)>.

    eps(H) is +1 when grad F points into the internal component and -1
    otherwise, fixed at the best-conditioned vertex and validated across
    the surface; inconsistent gradient direction rejects the surface as
    coming from a non-regular level.
    """
    if H.normals is None:
        raise LyapcertError("surface has no inward normals; orient it first")
    g = geometry._grad_field(F).eval_many(H.vertices)
    gnorm = np.linalg.norm(g, axis=1)
    if float(np.min(gnorm)) == 0.0:
        raise MixedSignError("zero gradient on surface; level is not regular")
    k = int(np.argmax(gnorm))
    h = 0.5 * H.cell
    unit_k = g[k] / gnorm[k]
    plus, minus = geometry._parity_points(
        H, np.array([H.vertices[k] + h * unit_k, H.vertices[k] - h * unit_k]))
    if plus and not minus:
        eps = 1
    elif minus and not plus:
        eps = -1
    else:
        raise MixedSignError("gradient probe undecidable; level is not regular")
    dots = np.einsum("ij,ij->i", g, H.normals)
    if np.any(eps * dots <= 0.5 * gnorm):
        raise MixedSignError(
            "gradient direction inconsistent across vertices; "
            "surface rejected as non-regular")
    fv = _field_values(f, H)
    S_tilde = eps * np.einsum("ij,ij->i", g, fv)
    # sign pattern must agree with S * ||grad F|| wherever both are resolved
    S = np.einsum("ij,ij->i", H.normals, fv)
    both = (np.abs(S_tilde) > 1e-12) & (np.abs(S * gnorm) > 1e-12)
    if np.any(np.sign(S_tilde[both]) != np.sign(S[both])):
        raise MixedSignError("tilde sign condition disagrees with S sign pattern")
    max_f = float(np.max(np.linalg.norm(fv, axis=1)))
    tol, margin = _default_tol(max_f * float(np.max(gnorm)), H.cell, tol_S)
    j = int(np.argmin(S_tilde))
    return SignReport(
        index=index,
        min_S=float(S_tilde[j]),
        max_S=float(np.max(S_tilde)),
        argmin_vertex=H.vertices[j].copy(),
        argmin_index=j,
        violations=int(np.count_nonzero(S_tilde < -tol)),
        tol=tol,
        interp_margin=margin,
        max_f_norm=max_f,
        eps_sign=eps,
        values=S_tilde,
    )


# --- certificates -------------------------------------------------------------

@dataclass
class StabilityCertificate:
    verdict: str
    reports: List[SignReport]
    tolerances: dict
    provenance: dict
    witness: Optional[dict]
    reasons: List[str]
    extras: dict = field(default_factory=dict)
    family: Optional[NestedFamily] = field(default=None, repr=False)


def certify_stability(f: VectorFieldDef, family: NestedFamily,
                      tol_S: Optional[float] = None) -> StabilityCertificate:
    """Check S >= 0 (within tolerance) on every surface of the family.

    certified-stable requires min S >= -tol on every surface; violated
    requires a vertex below -(tol + interpolation margin); anything in the
    noise band between is inconclusive.
    """
    reports = []
    reasons = []
    witness = None
    worst = 0.0
    any_violated = False
    all_ok = True
    for i, H in enumerate(family.surfaces):
        try:
            rep = sign_condition(f, H, tol_S, index=i)
        except NonFiniteError as exc:
            reasons.append(f"surface {i}: {exc}")
            all_ok = False
            continue
        reports.append(rep)
        if rep.min_S < -rep.tol:
            all_ok = False
            if rep.min_S < -(rep.tol + rep.interp_margin):
                any_violated = True
                if rep.min_S < worst:
                    worst = rep.min_S
                    witness = {
                        "surface_index": i,
                        "point": [float(c) for c in rep.argmin_vertex],
                        "S": rep.min_S,
                    }
            else:
                reasons.append(
                    f"surface {i}: min S {rep.min_S:.3g} inside the noise band "
                    f"(-tol-margin, -tol]")
    if len(reports) < len(family.surfaces):
        verdict = VERDICT_INCONCLUSIVE
    elif all_ok:
        verdict = VERDICT_CERTIFIED
    elif any_violated:
        verdict = VERDICT_VIOLATED
    else:
        verdict = VERDICT_INCONCLUSIVE
    return StabilityCertificate(
        verdict=verdict,
        reports=reports,
        tolerances={
            "tol_S": tol_S,
            "eta": family.provenance.get("eta"),
            "per_surface_tol": [r.tol for r in reports],
        },
        provenance=dict(family.provenance, f=f.sources()),
        witness=witness,
        reasons=reasons,
        family=family,
    )


@dataclass
class GradientClassification:
    verdict: str                    # stable-for-F | stable-for-minus-F
    certificate: StabilityCertificate
    surface_signs: List[int]
    family: NestedFamily


def classify_gradient_system(F: ScalarExpr, x0, grid: SampleGrid,
                             params: Optional[CertifyParams] = None,
                             quasi_report: Optional[QuasiIsolationReport] = None,
                             ) -> GradientClassification:
    """Decide which of the gradient systems of F or -F is certified stable.

    With f = -grad F, S is sign-definite on each regular level surface;
    surfaces are partitioned by that sign and the majority side yields the
    certificate (for F when S > 0, for -F when S < 0).  Mixed signs beyond
    tolerance on one surface contradict regularity and are reported.
    """
    params = params or CertifyParams()
    family = build_nested_family(F, x0, grid, params, quasi_report)
    f_minus_grad = field_expr.make_gradient_system(F)
    signs = []
    for i, H in enumerate(family.surfaces):
        rep = sign_condition(f_minus_grad, H, params.tol_S, index=i)
        pos = int(np.count_nonzero(rep.values > rep.tol))
        neg = int(np.count_nonzero(rep.values < -rep.tol))
        if pos > 0 and neg > 0:
            raise MixedSignError(
                f"surface {i}: S has both signs beyond tolerance "
                f"({pos} positive, {neg} negative vertices)")
        if pos == 0 and neg == 0:
            raise MixedSignError(
                f"surface {i}: |S| below tolerance everywhere; "
                f"cannot assign a sign")
        signs.append(1 if pos > 0 else -1)
    plus_idx = [i for i, s in enumerate(signs) if s > 0]
    minus_idx = [i for i, s in enumerate(signs) if s < 0]
    if len(plus_idx) >= len(minus_idx):
        cert = certify_stability(f_minus_grad, family.subset(plus_idx), params.tol_S)
        verdict = "stable-for-F"
    else:
        f_plus_grad = field_expr.make_gradient_system(F, negate_F=True)
        cert = certify_stability(f_plus_grad, family.subset(minus_idx), params.tol_S)
        verdict = "stable-for-minus-F"
    cert.extras["gradient_direction"] = verdict
    cert.extras["surface_signs"] = list(signs)
    return GradientClassification(verdict, cert, signs, family)


def certify_hamiltonian(F: ScalarExpr, dof: int, x0, grid: SampleGrid,
                        params: Optional[CertifyParams] = None,
                        quasi_report: Optional[QuasiIsolationReport] = None,
                        ) -> StabilityCertificate:
    """Certify the canonical system of F; trajectories ride level sets,
    so besides S >= 0 the stronger max |S| <= tol_H must hold."""
    params = params or CertifyParams()
    f = field_expr.make_hamiltonian_system(F, dof)
    family = build_nested_family(F, x0, grid, params, quasi_report)
    cert = certify_stability(f, family, params.tol_S)
    if not cert.reports:
        return cert
    max_abs = max(max(abs(r.min_S), abs(r.max_S)) for r in cert.reports)
    cert.extras["hamiltonian_max_abs_S"] = max_abs
    cert.extras["tol_H"] = params.tol_H
    if max_abs > params.tol_H:
        cert.verdict = VERDICT_INCONCLUSIVE
        cert.reasons.append(
            f"max |S| = {max_abs:.3g} exceeds tol_H = {params.tol_H:.3g}: "
            f"discretization error or wrong dof split")
    return cert
