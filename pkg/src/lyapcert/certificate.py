"""Certificate documents: a deterministic JSON dialect.

Key order is the construction order, floats are fixed at 17 significant
digits, and no environment-dependent data (timestamps, absolute paths)
is ever embedded, so identical runs yield byte-identical documents.
"""

from __future__ import annotations

import json
import math
from typing import Optional

import numpy as np

from .certify import NestedFamily, StabilityCertificate
from .errors import LyapcertError

__all__ = ["dumps", "surface_rows", "assemble"]


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise LyapcertError(f"non-finite value {x!r} cannot enter a certificate")
    return format(x, ".17g")


def _emit(obj, out, indent: int) -> None:
    pad = "  " * indent
    if obj is None:
        out.append("null")
    elif obj is True or (isinstance(obj, np.bool_) and obj):
        out.append("true")
    elif obj is False or isinstance(obj, np.bool_):
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            out.append(f"{pad}  {json.dumps(str(k))}: ")
            _emit(v, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad + "  ")
            _emit(v, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    else:
        raise LyapcertError(f"cannot serialize {type(obj).__name__} into a certificate")


def dumps(obj) -> str:
    out = []
    _emit(obj, out, 0)
    out.append("\n")
    return "".join(out)


def surface_rows(family: NestedFamily,
                 cert: Optional[StabilityCertificate] = None) -> list:
    """Per-surface evidence table: level, diameter, d_to_x0, S extrema."""
    by_index = {}
    if cert is not None:
        by_index = {r.index: r for r in cert.reports}
    rows = []
    for i, H in enumerate(family.surfaces):
        row = {
            "level": float(family.levels[i]),
            "diameter": float(family.diameters[i]),
            "d_to_x0": float(family.d_to_x0[i]),
            "min_grad_norm": float(family.min_grad_norms[i]),
            "vertices": int(H.n_vertices),
        }
        rep = by_index.get(i)
        if rep is not None:
            row["min_S"] = rep.min_S
            row["max_S"] = rep.max_S
            row["tol_S"] = rep.tol
            row["interp_margin"] = rep.interp_margin
        rows.append(row)
    return rows


def assemble(*, verdict: str, mode: str, system: dict, grid: dict,
             tolerances: dict, quasi: Optional[dict], family_rows: list,
             witness: Optional[dict], reasons: list, extras: dict,
             seed: int, empirical: Optional[dict] = None,
             meshes: Optional[list] = None) -> dict:
    doc = {
        "format": "lyapcert-certificate/1",
        "verdict": verdict,
        "mode": mode,
        "seed": seed,
        "system": system,
        "grid": grid,
        "tolerances": tolerances,
        "smoothness": "user-asserted (symbolic derivatives only; "
                      "C^n membership is not checked numerically)",
        "quasi_isolation": quasi,
        "surfaces": family_rows,
        "witness": witness,
        "reasons": list(reasons),
    }
    if extras:
        doc["extras"] = extras
    if empirical is not None:
        doc["empirical"] = empirical
    if meshes is not None:
        doc["meshes"] = meshes
    return doc
