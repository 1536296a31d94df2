"""Level-set geometry on sampling grids.

Extracts connected components of F^-1(a) as closed polylines (n=2) or
watertight triangle meshes (n=3), classifies them, and provides the
predicates the certifier needs: membership in the bounded complement
component, nesting, diameters, Hausdorff point-to-surface distance and
inward unit normals.

Grids and hypersurfaces are immutable after construction and every
predicate here is pure, so extraction of different levels may run
concurrently over a shared grid.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from skimage import measure

from . import field_expr
from .errors import (
    AmbiguousOrientationError,
    DimensionMismatchError,
    GridError,
    LyapcertError,
    SurfaceRejected,
    TooCloseToSurfaceError,
)
from .field_expr import ScalarExpr

__all__ = [
    "SampleGrid",
    "Component",
    "Hypersurface",
    "build_grid",
    "extract_level_components",
    "classify_closed",
    "bounds_point",
    "diameter",
    "distance_to_point",
    "orient_inward",
    "is_nested",
    "min_gradient_norm",
]

MIN_RESOLUTION = 8
MIN_VERTICES = 8


# --- sampling grid ---------------------------------------------------------

@dataclass
class SampleGrid:
    """Axis-aligned box sampled on a regular node lattice with cached F."""

    expr: ScalarExpr
    lo: np.ndarray          # (n,)
    hi: np.ndarray          # (n,)
    resolution: tuple       # cells per axis; nodes are resolution + 1
    values: np.ndarray      # F at nodes, shape tuple(r + 1)
    spacing: np.ndarray     # (n,) cell edge lengths

    @property
    def dimension(self) -> int:
        return len(self.resolution)

    @property
    def min_cell(self) -> float:
        return float(np.min(self.spacing))

    def node_axes(self) -> list:
        return [np.linspace(self.lo[d], self.hi[d], self.resolution[d] + 1)
                for d in range(self.dimension)]

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p > self.lo + margin) and np.all(p < self.hi - margin))

    def descriptor(self) -> dict:
        return {
            "box": [[float(a), float(b)] for a, b in zip(self.lo, self.hi)],
            "resolution": [int(r) for r in self.resolution],
            "cell": self.min_cell,
        }


def build_grid(F: ScalarExpr, box, resolution) -> SampleGrid:
    """Sample F on a node lattice over ``box``.

    ``box`` is a sequence of (lo, hi) per axis, ``resolution`` a cell count
    (scalar or per axis, >= 8).  Any non-finite node value is an error:
    certification needs a grid with zero non-finite nodes.
    """
    n = F.dimension
    if n not in (2, 3):
        raise DimensionMismatchError(f"grids support dimension 2 or 3, got {n}")
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != n:
        raise GridError(f"box has {len(box)} axes, expression has dimension {n}")
    if np.isscalar(resolution):
        resolution = [int(resolution)] * n
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != n:
        raise GridError(f"resolution has {len(resolution)} axes, expected {n}")
    for d, (lo, hi) in enumerate(box):
        if not lo < hi:
            raise GridError(f"axis {d}: lo {lo} not below hi {hi}")
        if resolution[d] < MIN_RESOLUTION:
            raise GridError(
                f"axis {d}: resolution {resolution[d]} below minimum {MIN_RESOLUTION}")
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    spacing = (hi - lo) / np.array(resolution, dtype=np.float64)
    axes = [np.linspace(lo[d], hi[d], resolution[d] + 1) for d in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack(mesh, axis=-1)
    values = F.eval_many(nodes)
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        node = nodes[tuple(idx)]
        raise GridError(
            f"{int(bad.sum())} non-finite node value(s); first at "
            f"{tuple(float(c) for c in node)}")
    return SampleGrid(expr=F, lo=lo, hi=hi, resolution=resolution,
                      values=values, spacing=spacing)


# --- extraction ------------------------------------------------------------

@dataclass
class Component:
    """Raw extracted level-set piece, before classification."""

    dimension: int
    vertices: np.ndarray
    edges: Optional[np.ndarray]      # (E, 2) for n=2
    faces: Optional[np.ndarray]      # (T, 3) for n=3
    closed: bool
    level: float


def _nudge_level(grid: SampleGrid, a: float) -> float:
    if np.any(grid.values == a):
        a = a + 1e-12 * max(1.0, abs(a))
    return a


def extract_level_components(grid: SampleGrid, a: float,
                             _retry: bool = True) -> List[Component]:
    """Connected components of the level set F^-1(a) on the grid.

    Level values colliding with a node value are nudged by one ulp-scale
    step; if that is not enough the grid origin is shifted by 1e-6 cells
    and sampling is redone.  Returns an empty list when the level set
    misses the box.
    """
    a = float(a)
    a = _nudge_level(grid, a)
    if np.any(grid.values == a):
        if not _retry:
            raise GridError(f"level {a} still collides with node values after shift")
        shift = 1e-6 * grid.spacing
        box = list(zip(grid.lo + shift, grid.hi + shift))
        shifted = build_grid(grid.expr, box, grid.resolution)
        return extract_level_components(shifted, a, _retry=False)

    vmin = float(grid.values.min())
    vmax = float(grid.values.max())
    if not vmin < a < vmax:
        return []

    if grid.dimension == 2:
        return _extract_2d(grid, a)
    return _extract_3d(grid, a)


def _extract_2d(grid: SampleGrid, a: float) -> List[Component]:
    contours = measure.find_contours(grid.values, a)
    out = []
    for contour in contours:
        closed = bool(np.array_equal(contour[0], contour[-1]))
        pts = contour[:-1] if closed and len(contour) > 1 else contour
        world = grid.lo[None, :] + pts * grid.spacing[None, :]
        # drop consecutive duplicates (can appear at near-node crossings)
        keep = np.ones(len(world), dtype=bool)
        keep[1:] = np.any(world[1:] != world[:-1], axis=1)
        world = world[keep]
        if closed and len(world) > 1 and np.array_equal(world[0], world[-1]):
            world = world[:-1]
        v = len(world)
        if v < 2:
            continue
        idx = np.arange(v)
        if closed:
            edges = np.column_stack([idx, np.roll(idx, -1)])
        else:
            edges = np.column_stack([idx[:-1], idx[1:]])
        out.append(Component(2, world, edges, None, closed, a))
    return out


def _extract_3d(grid: SampleGrid, a: float) -> List[Component]:
    verts, faces, _, _ = measure.marching_cubes(
        grid.values, level=a, spacing=tuple(grid.spacing))
    verts = verts + grid.lo[None, :]
    if len(faces) == 0:
        return []
    labels = _face_components(len(verts), faces)
    out = []
    for comp_id in range(labels.max() + 1):
        vmask = labels == comp_id
        vidx = np.nonzero(vmask)[0]
        if len(vidx) == 0:
            continue
        remap = -np.ones(len(verts), dtype=np.int64)
        remap[vidx] = np.arange(len(vidx))
        fmask = vmask[faces[:, 0]]
        comp_faces = remap[faces[fmask]]
        comp_verts = verts[vidx]
        closed = _boundary_edge_count(comp_faces) == 0
        out.append(Component(3, comp_verts, None, comp_faces, closed, a))
    return out


def _face_components(n_verts: int, faces: np.ndarray) -> np.ndarray:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    rows = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
    cols = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    data = np.ones(len(rows), dtype=np.int8)
    adj = coo_matrix((data, (rows, cols)), shape=(n_verts, n_verts))
    _, labels = connected_components(adj, directed=False)
    return labels


def _sorted_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return np.sort(e, axis=1)


def _boundary_edge_count(faces: np.ndarray) -> int:
    e = _sorted_edges(faces)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return int(np.sum(counts != 2))


def _edge_count_over_2(faces: np.ndarray) -> int:
    e = _sorted_edges(faces)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return int(np.sum(counts > 2))


# --- classification --------------------------------------------------------

@dataclass
class Hypersurface:
    """A discretized connected closed hypersurface with inward normals.

    For n=2 a single closed non-self-intersecting polyline, for n=3 a
    watertight oriented triangle mesh.  ``cell`` is the min cell size of
    the source grid; probes and closeness guards are scaled by it.
    """

    dimension: int
    vertices: np.ndarray
    edges: Optional[np.ndarray]
    faces: Optional[np.ndarray]
    level: float
    diameter: float
    cell: float
    normals: Optional[np.ndarray] = None
    internal_witness: Optional[np.ndarray] = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


def classify_closed(c: Component, grid: SampleGrid) -> Hypersurface:
    """Accept a component as a closed hypersurface or raise SurfaceRejected.

    Rejection reasons: touches-box (not fully interior to the grid box),
    open-curve, non-manifold, degenerate (too few vertices).  Accepted
    surfaces carry their diameter and placeholder (absent) normals; use
    orient_inward to finalize.
    """
    scale = float(np.max(grid.hi - grid.lo))
    tol = 1e-9 * scale
    on_box = np.any(c.vertices <= grid.lo[None, :] + tol) or \
        np.any(c.vertices >= grid.hi[None, :] - tol)
    if on_box:
        raise SurfaceRejected("touches-box")
    if not c.closed:
        raise SurfaceRejected("open-curve")
    if len(c.vertices) < MIN_VERTICES:
        raise SurfaceRejected("degenerate", f"{len(c.vertices)} vertices")
    if c.dimension == 2:
        if _polyline_self_intersects(c.vertices, c.edges):
            raise SurfaceRejected("non-manifold", "self-intersecting polyline")
    else:
        if _edge_count_over_2(c.faces) > 0:
            raise SurfaceRejected("non-manifold", "edge shared by more than 2 faces")
        directed = np.concatenate([c.faces[:, [0, 1]], c.faces[:, [1, 2]],
                                   c.faces[:, [2, 0]]])
        if len(np.unique(directed, axis=0)) != len(directed):
            # orientable closed mesh traverses every edge once per direction
            raise SurfaceRejected("non-manifold", "inconsistent winding")
    return Hypersurface(
        dimension=c.dimension,
        vertices=c.vertices,
        edges=c.edges,
        faces=c.faces,
        level=c.level,
        diameter=_max_pairwise_distance(c.vertices),
        cell=grid.min_cell,
    )


def _polyline_self_intersects(verts: np.ndarray, edges: np.ndarray) -> bool:
    """Exact-sign segment intersection over all non-adjacent edge pairs."""
    a = verts[edges[:, 0]]
    b = verts[edges[:, 1]]
    E = len(edges)
    # bounding-box prefilter keeps the O(E^2) core cheap
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    for i in range(E - 2):
        j0 = i + 2
        j1 = E if i > 0 else E - 1   # skip shared-endpoint neighbours (and wrap)
        if j0 >= j1:
            continue
        sel = slice(j0, j1)
        ok = ~((hi[sel, 0] < lo[i, 0]) | (lo[sel, 0] > hi[i, 0]) |
               (hi[sel, 1] < lo[i, 1]) | (lo[sel, 1] > hi[i, 1]))
        if not np.any(ok):
            continue
        A, B = a[i], b[i]
        C, D = a[sel][ok], b[sel][ok]
        d1 = _cross2(D - C, A[None, :] - C)
        d2 = _cross2(D - C, B[None, :] - C)
        d3 = _cross2(B - A, C - A[None, :])
        d4 = _cross2(B - A, D - A[None, :])
        proper = (d1 * d2 < 0) & (d3 * d4 < 0)
        touching = (d1 == 0) | (d2 == 0) | (d3 == 0) | (d4 == 0)
        if np.any(proper | touching):
            return True
    return False


def _cross2(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _max_pairwise_distance(pts: np.ndarray) -> float:
    best = 0.0
    chunk = 512
    for i in range(0, len(pts), chunk):
        block = pts[i:i + chunk]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        m = float(d2.max())
        if m > best:
            best = m
    return float(np.sqrt(best))


# --- membership parity (ray casting) ----------------------------------------

_CAST_ANGLES = (0.0, 0.5612, 1.1937, 1.8771, 2.5416, 3.0113)

# deterministic spread of 3D cast directions; every component is nonzero
# and generic so axis-aligned mesh facets are never edge-on to a ray
_CAST_DIRS_3D = np.array([
    [0.28108464, 0.53929374, 0.79378669],
    [-0.61237244, 0.35355339, 0.70710678],
    [0.48795004, -0.68313005, 0.54363585],
    [0.73379939, 0.41931393, -0.53452248],
    [-0.37139068, -0.74278135, 0.55708601],
    [0.17609018, 0.88045091, -0.44022545],
])


def _rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _parity_points_2d(verts: np.ndarray, edges: np.ndarray,
                      pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    result = np.zeros(len(pts), dtype=bool)
    pending = np.arange(len(pts))
    scale = max(1.0, float(np.max(np.abs(verts))))
    eps = 1e-12 * scale
    for theta in _CAST_ANGLES:
        if len(pending) == 0:
            break
        if theta == 0.0:
            rv, rp = verts, pts[pending]
        else:
            R = _rot2(theta)
            rv = verts @ R.T
            rp = pts[pending] @ R.T
        ax = rv[edges[:, 0], 0][None, :]
        ay = rv[edges[:, 0], 1][None, :]
        bx = rv[edges[:, 1], 0][None, :]
        by = rv[edges[:, 1], 1][None, :]
        py = rp[:, 1][:, None]
        px = rp[:, 0][:, None]
        straddle = (ay > py) != (by > py)
        with np.errstate(all="ignore"):
            t = (py - ay) / (by - ay)
            xint = ax + t * (bx - ax)
        cross = straddle & (xint > px)
        degenerate = np.any(straddle & (np.abs(xint - px) <= eps), axis=1)
        parity = (np.sum(cross, axis=1) % 2).astype(bool)
        settled = ~degenerate
        result[pending[settled]] = parity[settled]
        pending = pending[~settled]
    if len(pending) > 0:
        raise LyapcertError("ray parity undecidable after recasts")
    return result


def _parity_points_3d(verts: np.ndarray, faces: np.ndarray,
                      pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    v0 = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - v0
    e2 = verts[faces[:, 2]] - v0
    scale = max(1.0, float(np.max(np.abs(verts))))
    eps = 1e-9
    result = np.zeros(len(pts), dtype=bool)
    pending = np.arange(len(pts))
    for d in _CAST_DIRS_3D:
        if len(pending) == 0:
            break
        h = np.cross(d[None, :], e2)
        det = np.einsum("ij,ij->i", e1, h)
        good = np.abs(det) > 1e-14 * scale
        inv_det = np.zeros_like(det)
        inv_det[good] = 1.0 / det[good]
        still = []
        for row, pi in enumerate(pending):
            p = pts[pi]
            s = p[None, :] - v0
            u = np.einsum("ij,ij->i", s, h) * inv_det
            q = np.cross(s, e1)
            v = (q @ d) * inv_det
            t = np.einsum("ij,ij->i", e2, q) * inv_det
            cand = good & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > -eps * scale)
            hit = cand & (u > eps) & (v > eps) & (u + v < 1 - eps) & (t > eps * scale)
            marginal = cand & ~hit
            if np.any(marginal):
                still.append(row)
                continue
            result[pi] = bool(np.sum(hit) % 2)
        pending = pending[np.array(still, dtype=int)] if still else pending[:0]
    if len(pending) > 0:
        raise LyapcertError("ray parity undecidable after recasts")
    return result


def _parity_points(H: Hypersurface, pts: np.ndarray) -> np.ndarray:
    if H.dimension == 2:
        return _parity_points_2d(H.vertices, H.edges, pts)
    return _parity_points_3d(H.vertices, H.faces, pts)


def bounds_point(H: Hypersurface, p) -> bool:
    """True iff p lies in the bounded (internal) complement component.

    A closed hypersurface splits space into a bounded and an unbounded
    component; membership is decided by ray-crossing parity with recasts
    on degenerate hits.  Points closer to the surface than half a cell
    (vertex-distance proxy) are refused.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (H.dimension,):
        raise DimensionMismatchError(
            f"point of shape {p.shape} against {H.dimension}-dimensional surface")
    mind = float(np.min(np.linalg.norm(H.vertices - p[None, :], axis=1)))
    if mind <= 0.5 * H.cell:
        raise TooCloseToSurfaceError(
            f"point within half a cell ({mind:.3g} <= {0.5 * H.cell:.3g}) of the surface")
    return bool(_parity_points(H, p[None, :])[0])


def diameter(H: Hypersurface) -> float:
    """Max pairwise vertex distance (sup-metric diameter of the vertex set)."""
    return _max_pairwise_distance(H.vertices)


def distance_to_point(p, H: Hypersurface) -> float:
    """max over surface vertices of ||p - v||.

    This is the one-point Hausdorff distance d(p, H) used for convergence
    monitoring; note it is a max, not a min, so points on H get a
    diameter-scale value.
    """
    p = np.asarray(p, dtype=np.float64)
    return float(np.max(np.linalg.norm(H.vertices - p[None, :], axis=1)))


# --- orientation -----------------------------------------------------------

def _grad_field(F: ScalarExpr) -> field_expr.VectorFieldDef:
    cached = getattr(F, "_grad_field_cache", None)
    if cached is None:
        cached = field_expr.gradient(F)
        F._grad_field_cache = cached
    return cached


def _tangent_normals_2d(H: Hypersurface) -> np.ndarray:
    v = H.vertices
    nxt = np.roll(v, -1, axis=0)
    prv = np.roll(v, 1, axis=0)
    t = nxt - prv
    norms = np.linalg.norm(t, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise AmbiguousOrientationError("zero-length tangent")
    t = t / norms
    area2 = float(np.sum(_cross2(v, nxt)))
    if area2 > 0:     # CCW: interior on the left of travel
        n = np.column_stack([-t[:, 1], t[:, 0]])
    else:
        n = np.column_stack([t[:, 1], -t[:, 0]])
    return n


def _tangent_normals_3d(H: Hypersurface) -> np.ndarray:
    v = H.vertices
    f = H.faces
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, f[:, k], fn)
    norms = np.linalg.norm(acc, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise AmbiguousOrientationError("degenerate vertex fan")
    return acc / norms


def _validate_probes(H: Hypersurface, normals: np.ndarray, max_checks: int = 4096):
    h = 0.5 * H.cell
    v = len(H.vertices)
    stride = max(1, v // max_checks) if H.dimension == 3 else 1
    idx = np.arange(0, v, stride)
    plus = H.vertices[idx] + h * normals[idx]
    minus = H.vertices[idx] - h * normals[idx]
    in_plus = _parity_points(H, plus)
    in_minus = _parity_points(H, minus)
    bad = ~(in_plus & ~in_minus)
    if np.any(bad):
        k = int(idx[np.nonzero(bad)[0][0]])
        raise AmbiguousOrientationError(
            f"probe failed at vertex {k}: +h inside={bool(in_plus[np.nonzero(bad)[0][0]])}, "
            f"-h inside={bool(in_minus[np.nonzero(bad)[0][0]])}")


def orient_inward(H: Hypersurface, x0, F: Optional[ScalarExpr] = None) -> Hypersurface:
    """Return a copy of H with unit normals pointing into the internal
    component (the side containing x0).

    With a defining F the normal is +-grad F / |grad F| with one global
    sign fixed by a half-cell probe at the best-conditioned vertex;
    otherwise normals come from local tangents (edge/triangle fans) with
    the sign fixed the same way.  The probe invariant is then validated
    at every vertex in 2D and on a stratified sample in 3D.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if not _parity_points(H, x0[None, :])[0]:
        raise AmbiguousOrientationError("x0 is not bounded by the surface")
    h = 0.5 * H.cell
    if F is not None:
        g = _grad_field(F).eval_many(H.vertices)
        norms = np.linalg.norm(g, axis=1)
        if np.min(norms) == 0.0:
            raise AmbiguousOrientationError("zero gradient on surface")
        unit = g / norms[:, None]
        k = int(np.argmax(norms))
        plus = H.vertices[k] + h * unit[k]
        minus = H.vertices[k] - h * unit[k]
        in_plus, in_minus = _parity_points(H, np.array([plus, minus]))
        if in_plus and not in_minus:
            normals = unit
        elif in_minus and not in_plus:
            normals = -unit
        else:
            raise AmbiguousOrientationError(
                "gradient probe landed on the same side both ways")
    else:
        normals = (_tangent_normals_2d(H) if H.dimension == 2
                   else _tangent_normals_3d(H))
        k = 0
        plus = H.vertices[k] + h * normals[k]
        minus = H.vertices[k] - h * normals[k]
        in_plus, in_minus = _parity_points(H, np.array([plus, minus]))
        if in_minus and not in_plus:
            normals = -normals
        elif not (in_plus and not in_minus):
            raise AmbiguousOrientationError("tangent probe undecidable")
    _validate_probes(H, normals)
    return dataclasses.replace(H, normals=normals, internal_witness=x0.copy())


# --- relations --------------------------------------------------------------

def _min_vertex_gap(a: np.ndarray, b: np.ndarray) -> float:
    best = np.inf
    chunk = 512
    for i in range(0, len(a), chunk):
        block = a[i:i + chunk]
        d2 = np.sum((block[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        m = float(d2.min())
        if m < best:
            best = m
    return float(np.sqrt(best))


def is_nested(outer: Hypersurface, inner: Hypersurface) -> bool:
    """True iff every vertex of ``inner`` is bounded by ``outer``.

    Surfaces closer than one cell (vertex-gap proxy) are refused as too
    close to decide.
    """
    gap = _min_vertex_gap(inner.vertices, outer.vertices)
    cell = max(outer.cell, inner.cell)
    if gap <= cell:
        raise TooCloseToSurfaceError(
            f"surfaces too close to decide nesting (gap {gap:.3g} <= cell {cell:.3g})")
    return bool(np.all(_parity_points(outer, inner.vertices)))


def min_gradient_norm(F: ScalarExpr, H: Hypersurface) -> float:
    """min over vertices of ||grad F||; regular levels keep this above eta."""
    g = _grad_field(F).eval_many(H.vertices)
    return float(np.min(np.linalg.norm(g, axis=1)))
