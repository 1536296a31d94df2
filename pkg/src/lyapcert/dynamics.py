"""Trajectory integration and empirical falsification.

A hand-rolled Dormand-Prince 5(4) embedded pair with PI-free elementary
step control drives both the single-trajectory integrator and a batched
mode that advances many trials at once (step accepted when the worst
per-trajectory error ratio passes).  The falsifier samples start points
inside the innermost surface of a family and looks for states escaping
the outermost surface; it can corroborate or refute a certificate but
never upgrade one; the sign condition is the only proof path here.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import geometry
from .certify import NestedFamily
from .errors import (
    DynamicsError,
    NotAnEquilibriumError,
    SamplerError,
    StepUnderflowError,
)
from .field_expr import VectorFieldDef
from .geometry import Hypersurface

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "FalsificationReport",
    "integrate",
    "containment_test",
    "sample_inside",
    "first_escape_time",
    "epsilon_delta_probe",
]

# Dormand-Prince 5(4) tableau; the 5th-order solution is propagated and
# the first stage is reused from the previous step (FSAL).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_E = _B5 - _B4

_BATCH_CHUNK = 64   # fixed batching keeps results identical for any thread count


@dataclass
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = np.inf
    max_state_step: Optional[float] = None   # cap on |y_new - y| per step
    blowup_norm: float = 1e6
    max_steps: int = 2_000_000
    stop_box: Optional[tuple] = None         # (lo, hi) arrays: stop on exit


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    steps: np.ndarray
    termination: str     # horizon | left-box | blow-up


class _Stepper:
    """Advances a batch of states with shared adaptive steps."""

    def __init__(self, f: VectorFieldDef, y0: np.ndarray, cfg: IntegratorConfig):
        self.f = f
        self.cfg = cfg
        self.y = np.array(y0, dtype=np.float64, copy=True)
        self.t = 0.0
        self.active = np.ones(len(self.y), dtype=bool)
        self.k1 = f.eval_many(self.y)
        if not np.all(np.isfinite(self.k1[self.active])):
            raise DynamicsError("field is not finite at a start point")
        self.h = self._initial_step()
        self.n_steps = 0

    def _initial_step(self) -> float:
        with np.errstate(all="ignore"):
            scale = self.cfg.abs_tol + self.cfg.rel_tol * np.abs(self.y)
            d0 = np.sqrt(np.mean((self.y / scale) ** 2))
            d1 = np.sqrt(np.mean((self.k1 / scale) ** 2))
            h0 = 0.01 * d0 / d1 if d1 > 1e-12 else 1e-6
        if not np.isfinite(h0):
            h0 = 1e-6
        return float(min(max(h0, 1e-8), self.cfg.max_step))

    def _error_ratio(self, err: np.ndarray, y_new: np.ndarray) -> float:
        scale = self.cfg.abs_tol + self.cfg.rel_tol * np.maximum(
            np.abs(self.y), np.abs(y_new))
        ratios = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        ratios = ratios[self.active]
        if not np.all(np.isfinite(ratios)):
            return np.inf
        return float(np.max(ratios)) if len(ratios) else 0.0

    def step(self, t_end: float) -> float:
        """Advance to the next accepted step; returns the step size taken."""
        cfg = self.cfg
        while True:
            self.n_steps += 1
            if self.n_steps > cfg.max_steps:
                raise DynamicsError("step budget exceeded")
            h = min(self.h, cfg.max_step)
            landing = self.t + h >= t_end
            if landing:
                h = t_end - self.t
            if h <= 0.0:
                self.t = t_end
                return 0.0
            if not landing and h < 1e-14 * max(1.0, abs(self.t)):
                raise StepUnderflowError(f"step underflow at t = {self.t:.6g}")
            k = [self.k1]
            for i, row in enumerate(_A):
                incr = sum(row[j] * k[j] for j in range(i + 1))
                k.append(self.f.eval_many(self.y + h * incr))
            y5 = self.y + h * sum(_B5[j] * k[j] for j in range(6))
            k7 = self.f.eval_many(y5)
            k.append(k7)
            err = h * sum(_E[j] * k[j] for j in range(7))
            ratio = self._error_ratio(err, y5)
            if ratio > 1.0:
                self.h = h * max(0.2, 0.9 * ratio ** -0.2)
                continue
            if cfg.max_state_step is not None:
                dy = np.linalg.norm((y5 - self.y)[self.active], axis=1)
                dmax = float(np.max(dy)) if len(dy) else 0.0
                if dmax > cfg.max_state_step:
                    self.h = 0.5 * h * cfg.max_state_step / dmax
                    continue
            break
        self.y[self.active] = y5[self.active]
        self.k1 = k7
        self.t = t_end if landing else self.t + h
        grow = 0.9 * ratio ** -0.2 if ratio > 0 else 5.0
        # a landing step is clipped to hit t_end; do not let it crush self.h
        basis = min(self.h, self.cfg.max_step) if landing else h
        self.h = basis * min(5.0, max(0.2, grow))
        return h

    def freeze(self, idx) -> None:
        self.active[idx] = False


def integrate(f: VectorFieldDef, start, horizon: float,
              cfg: Optional[IntegratorConfig] = None) -> Trajectory:
    """Integrate dx/dt = f(x) from ``start`` up to t = horizon.

    Embedded 5(4) pair with adaptive steps; per-step local error is held
    within rel_tol/abs_tol.  Set cfg.max_state_step to bound how far
    consecutive recorded states may be apart (one geometry cell for
    containment work).  Termination is 'horizon', 'left-box' (stop_box
    exited) or 'blow-up' (norm above cfg.blowup_norm).
    """
    cfg = cfg or IntegratorConfig()
    start = np.asarray(start, dtype=np.float64)
    stepper = _Stepper(f, start[None, :], cfg)
    times = [0.0]
    states = [start.copy()]
    steps = []
    termination = "horizon"
    while stepper.t < horizon:
        h = stepper.step(horizon)
        y = stepper.y[0]
        times.append(stepper.t)
        states.append(y.copy())
        steps.append(h)
        if float(np.linalg.norm(y)) > cfg.blowup_norm:
            termination = "blow-up"
            break
        if cfg.stop_box is not None:
            lo, hi = cfg.stop_box
            if np.any(y < lo) or np.any(y > hi):
                termination = "left-box"
                break
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        steps=np.array(steps),
        termination=termination,
    )


# --- containment falsifier ----------------------------------------------------

@dataclass
class FalsificationReport:
    trials: int
    escapes: int
    witness: Optional[dict]          # start, escape_time, surface_index
    max_excursion_ratio: float
    horizon: float
    convention: str = ("states within one cell of the outermost surface "
                       "count as contained")

    @property
    def escape_rate(self) -> float:
        return self.escapes / self.trials if self.trials else 0.0

    def as_dict(self) -> dict:
        return {
            "trials": self.trials,
            "escapes": self.escapes,
            "escape_rate": self.escape_rate,
            "horizon": self.horizon,
            "witness": self.witness,
            "max_excursion_ratio": self.max_excursion_ratio,
            "convention": self.convention,
        }


def sample_inside(H: Hypersurface, x0: np.ndarray, count: int,
                   rng: np.random.Generator) -> np.ndarray:
    lo = H.vertices.min(axis=0)
    hi = H.vertices.max(axis=0)
    if np.any(hi - lo <= 2 * H.cell):
        raise SamplerError("internal region thinner than one cell")
    picked = []
    attempts = 0
    while len(picked) < count:
        attempts += 1
        if attempts > 400:
            raise SamplerError(
                f"rejection sampling failed: {len(picked)}/{count} accepted")
        batch = rng.uniform(lo, hi, size=(4 * count, H.dimension))
        mind = _min_dist_to_vertices(batch, H.vertices)
        ok = mind > 0.5 * H.cell
        if not np.any(ok):
            continue
        inside = geometry._parity_points(H, batch[ok])
        for p in batch[ok][inside]:
            picked.append(p)
            if len(picked) == count:
                break
    return np.array(picked[:count])


def _min_dist_to_vertices(pts: np.ndarray, verts: np.ndarray) -> np.ndarray:
    out = np.empty(len(pts))
    chunk = 256
    for i in range(0, len(pts), chunk):
        block = pts[i:i + chunk]
        d2 = np.sum((block[:, None, :] - verts[None, :, :]) ** 2, axis=-1)
        out[i:i + chunk] = np.sqrt(d2.min(axis=1))
    return out


def _escaped_mask(states: np.ndarray, outer: Hypersurface, x0: np.ndarray,
                  r_min: float, r_max: float) -> np.ndarray:
    """True where a state is outside the outer surface by more than a cell."""
    d = np.linalg.norm(states - x0[None, :], axis=1)
    out = np.zeros(len(states), dtype=bool)
    sure_out = d > r_max + outer.cell
    out[sure_out] = True
    band = ~sure_out & (d >= r_min - outer.cell)
    if np.any(band):
        pts = states[band]
        inside = geometry._parity_points(outer, pts)
        far = _min_dist_to_vertices(pts, outer.vertices) > outer.cell
        out[band] = (~inside) & far
    return out


def _containment_chunk(f, outer, x0, starts, horizon, cfg, dump, chunk_offset):
    r = np.linalg.norm(outer.vertices - x0[None, :], axis=1)
    r_min, r_max = float(r.min()), float(r.max())
    m = len(starts)
    stepper = _Stepper(f, starts, cfg)
    escaped = np.zeros(m, dtype=bool)
    escape_time = np.full(m, np.inf)
    d0 = np.linalg.norm(starts - x0[None, :], axis=1)
    excursion = np.ones(m)
    rows = [[(0.0, s.copy())] for s in starts] if dump is not None else None
    while stepper.t < horizon and np.any(stepper.active):
        stepper.step(horizon)
        act = np.nonzero(stepper.active)[0]
        y = stepper.y[act]
        if rows is not None:
            for j, i in enumerate(act):
                rows[i].append((stepper.t, y[j].copy()))
        d = np.linalg.norm(y - x0[None, :], axis=1)
        excursion[act] = np.maximum(excursion[act], d / np.maximum(d0[act], 1e-300))
        esc = _escaped_mask(y, outer, x0, r_min, r_max)
        newly = act[esc]
        if len(newly):
            escaped[newly] = True
            escape_time[newly] = stepper.t
            stepper.freeze(newly)
        blown = act[np.linalg.norm(y, axis=1) > cfg.blowup_norm]
        if len(blown):
            stepper.freeze(blown)
    if rows is not None:
        for i, rec in enumerate(rows):
            path = os.path.join(dump, f"trial_{chunk_offset + i:04d}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t"] + [f"x_{k + 1}" for k in range(starts.shape[1])])
                for t, s in rec:
                    w.writerow([repr(float(t))] + [repr(float(c)) for c in s])
    return escaped, escape_time, excursion


def containment_test(f: VectorFieldDef, family: NestedFamily, trials: int = 200,
                     horizon: float = 100.0, cfg: Optional[IntegratorConfig] = None,
                     seed: int = 42, dump_dir: Optional[str] = None) -> FalsificationReport:
    """Start trajectories inside the innermost surface and count escapes.

    An escape is a state outside the outermost surface by more than one
    cell (grazing within a cell counts as contained).  Start points are
    rejection-sampled uniformly over the innermost internal component.
    Trials run in fixed-size chunks so reports are identical for any
    LYAPCERT_THREADS setting.
    """
    inner = family.surfaces[-1]
    outer = family.surfaces[0]
    x0 = np.asarray(family.x0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    starts = sample_inside(inner, x0, trials, rng)
    if cfg is None:
        cfg = IntegratorConfig(max_state_step=outer.cell)
    elif cfg.max_state_step is None:
        cfg = IntegratorConfig(**{**cfg.__dict__, "max_state_step": outer.cell})
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)

    chunks = [(i, starts[i:i + _BATCH_CHUNK])
              for i in range(0, trials, _BATCH_CHUNK)]
    workers = _thread_count()
    if workers > 1 and len(chunks) > 1 and dump_dir is None:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda c: _containment_chunk(f, outer, x0, c[1], horizon, cfg,
                                             None, c[0]), chunks))
    else:
        results = [_containment_chunk(f, outer, x0, block, horizon, cfg,
                                      dump_dir, off)
                   for off, block in chunks]

    escaped = np.concatenate([r[0] for r in results])
    escape_time = np.concatenate([r[1] for r in results])
    excursion = np.concatenate([r[2] for r in results])
    escapes = int(np.count_nonzero(escaped))
    witness = None
    if escapes:
        i = int(np.lexsort((np.arange(trials), escape_time))[0])
        witness = {
            "start": [float(c) for c in starts[i]],
            "escape_time": float(escape_time[i]),
            "surface_index": 0,
        }
    return FalsificationReport(
        trials=trials,
        escapes=escapes,
        witness=witness,
        max_excursion_ratio=float(np.max(excursion)),
        horizon=horizon,
    )


def _thread_count() -> int:
    raw = os.environ.get("LYAPCERT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def first_escape_time(f: VectorFieldDef, surface: Hypersurface, start,
                      horizon: float,
                      cfg: Optional[IntegratorConfig] = None) -> Optional[float]:
    """Time of the first recorded state outside ``surface`` by over a cell,
    or None if the trajectory stays contained up to the horizon."""
    cfg = cfg or IntegratorConfig(max_state_step=surface.cell)
    start = np.asarray(start, dtype=np.float64)
    x0 = surface.internal_witness
    if x0 is None:
        x0 = start
    x0 = np.asarray(x0, dtype=np.float64)
    r = np.linalg.norm(surface.vertices - x0[None, :], axis=1)
    r_min, r_max = float(r.min()), float(r.max())
    stepper = _Stepper(f, start[None, :], cfg)
    while stepper.t < horizon:
        stepper.step(horizon)
        if _escaped_mask(stepper.y, surface, x0, r_min, r_max)[0]:
            return float(stepper.t)
        if float(np.linalg.norm(stepper.y[0])) > cfg.blowup_norm:
            break
    return None


# --- epsilon-delta probe --------------------------------------------------------

def epsilon_delta_probe(f: VectorFieldDef, x0, eps_list, trials: int = 16,
                        horizon: float = 20.0,
                        cfg: Optional[IntegratorConfig] = None, seed: int = 42,
                        bisect_iters: int = 10,
                        equil_tol: float = 1e-8) -> List[dict]:
    """Empirically estimate the largest delta validated for each epsilon.

    delta is validated when all trial trajectories started on the sphere
    ||x - x0|| = delta stay strictly within eps up to the horizon.  The
    answer is evidence, not a proof, and is flagged as such.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    fnorm = float(np.linalg.norm(f.eval_at(x0)))
    if fnorm > equil_tol:
        raise NotAnEquilibriumError(
            f"||f(x0)|| = {fnorm:.3g} exceeds equilibrium tolerance {equil_tol:.3g}")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(trials, len(x0)))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def stays_within(delta: float, eps: float) -> bool:
        local = cfg or IntegratorConfig()
        local = IntegratorConfig(**{**local.__dict__,
                                    "max_state_step": eps / 16.0})
        stepper = _Stepper(f, x0[None, :] + delta * dirs, local)
        while stepper.t < horizon:
            stepper.step(horizon)
            d = np.linalg.norm(stepper.y - x0[None, :], axis=1)
            if float(np.max(d)) >= eps:
                return False
        return True

    rows = []
    for eps in eps_list:
        eps = float(eps)
        if stays_within(eps, eps):
            rows.append({"eps": eps, "delta": eps, "effectively_zero": False,
                         "proof": False})
            continue
        lo, hi = 0.0, eps
        for _ in range(bisect_iters):
            mid = 0.5 * (lo + hi)
            if stays_within(mid, eps):
                lo = mid
            else:
                hi = mid
        rows.append({"eps": eps, "delta": lo, "effectively_zero": lo == 0.0,
                     "proof": False})
    return rows
