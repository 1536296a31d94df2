"""Lightweight text format for extracted surfaces.

Layout:
    dim n level a
    v x y [z] nx ny [nz]     (one per vertex, normals may be zero)
    e i j                    (polyline connectivity, n=2)
    f i j k                  (triangle connectivity, n=3)

Floats use 17 significant digits so files are byte-stable across runs.
Files are written atomically (temp file + rename).
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import LyapcertError
from .geometry import Hypersurface

__all__ = ["write_surface", "read_surface", "fmt_float"]


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def write_surface(H: Hypersurface, path) -> None:
    lines = [f"dim {H.dimension} level {fmt_float(H.level)}"]
    normals = H.normals
    if normals is None:
        normals = np.zeros_like(H.vertices)
    for v, n in zip(H.vertices, normals):
        coords = " ".join(fmt_float(c) for c in v)
        ncoords = " ".join(fmt_float(c) for c in n)
        lines.append(f"v {coords} {ncoords}")
    if H.dimension == 2:
        for i, j in H.edges:
            lines.append(f"e {int(i)} {int(j)}")
    else:
        for i, j, k in H.faces:
            lines.append(f"f {int(i)} {int(j)} {int(k)}")
    data = "\n".join(lines) + "\n"
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=".mesh-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_surface(path) -> Hypersurface:
    verts = []
    normals = []
    edges = []
    faces = []
    dim = None
    level = None
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "dim":
                if len(parts) != 4 or parts[2] != "level":
                    raise LyapcertError(f"{path}:{lineno}: malformed header")
                dim = int(parts[1])
                level = float(parts[3])
            elif tag == "v":
                if dim is None:
                    raise LyapcertError(f"{path}:{lineno}: vertex before header")
                nums = [float(t) for t in parts[1:]]
                if len(nums) != 2 * dim:
                    raise LyapcertError(
                        f"{path}:{lineno}: expected {2 * dim} numbers, got {len(nums)}")
                verts.append(nums[:dim])
                normals.append(nums[dim:])
            elif tag == "e":
                edges.append((int(parts[1]), int(parts[2])))
            elif tag == "f":
                faces.append((int(parts[1]), int(parts[2]), int(parts[3])))
            else:
                raise LyapcertError(f"{path}:{lineno}: unknown record {tag!r}")
    if dim is None:
        raise LyapcertError(f"{path}: missing header")
    varr = np.asarray(verts, dtype=np.float64)
    narr = np.asarray(normals, dtype=np.float64)
    if np.all(narr == 0.0):
        narr = None
    from .geometry import _max_pairwise_distance

    return Hypersurface(
        dimension=dim,
        vertices=varr,
        edges=np.asarray(edges, dtype=np.int64) if edges else None,
        faces=np.asarray(faces, dtype=np.int64) if faces else None,
        level=level,
        diameter=_max_pairwise_distance(varr) if len(varr) else 0.0,
        cell=0.0,
        normals=narr,
    )
