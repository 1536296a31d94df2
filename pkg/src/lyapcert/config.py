"""TOML system descriptions for the command-line front end.

A config names the dynamical system (explicit f, gradient-of-F or
hamiltonian-of-F), the candidate scalar F, the equilibrium, the sampling
grid and the tolerances.  Validation failures carry the offending field
path for line-of-sight diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .certify import CertifyParams
from .errors import ConfigError, ExprError
from .field_expr import ScalarExpr, VectorFieldDef, parse_expression

__all__ = ["SystemConfig", "FalsifierSettings", "load_config",
           "hamiltonian_variable_names"]

MODES = ("explicit", "gradient-of-F", "hamiltonian-of-F")


def hamiltonian_variable_names(dof: int) -> tuple:
    if dof == 1:
        return ("y", "z")
    return tuple(f"y{i + 1}" for i in range(dof)) + \
        tuple(f"z{i + 1}" for i in range(dof))


@dataclass
class FalsifierSettings:
    trials: int = 200
    horizon: float = 100.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10


@dataclass
class SystemConfig:
    dimension: int
    mode: str
    F_source: str
    x0: List[float]
    box: List[List[float]]
    resolution: object
    f_sources: Optional[List[str]] = None
    variables: Optional[List[str]] = None
    params: CertifyParams = field(default_factory=CertifyParams)
    falsifier: FalsifierSettings = field(default_factory=FalsifierSettings)
    seed: int = 42

    @property
    def dof(self) -> int:
        return self.dimension // 2

    def variable_names(self):
        if self.variables is not None:
            return tuple(self.variables)
        if self.mode == "hamiltonian-of-F":
            return hamiltonian_variable_names(self.dof)
        return None  # field_expr defaults

    def parse_F(self) -> ScalarExpr:
        try:
            return parse_expression(self.F_source, self.dimension,
                                    self.variable_names())
        except ExprError as exc:
            raise ConfigError("system.F", str(exc)) from exc

    def parse_f(self) -> VectorFieldDef:
        comps = []
        for i, src in enumerate(self.f_sources):
            try:
                comps.append(parse_expression(src, self.dimension,
                                              self.variable_names()))
            except ExprError as exc:
                raise ConfigError(f"system.f[{i}]", str(exc)) from exc
        return VectorFieldDef(comps)


def _get(table: dict, field_path: str, key: str, kind, default=...):
    path = f"{field_path}.{key}" if field_path else key
    if key not in table:
        if default is not ...:
            return default
        raise ConfigError(path, "missing required field")
    value = table[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(path, "expected int, got bool")
    if not isinstance(value, kind):
        raise ConfigError(path,
                          f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def load_config(path) -> SystemConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("file", str(exc)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("toml", str(exc)) from exc

    system = _get(data, "", "system", dict)
    n = _get(system, "system", "dimension", int)
    if n not in (2, 3):
        raise ConfigError("system.dimension", f"must be 2 or 3, got {n}")
    mode = _get(system, "system", "mode", str, "explicit")
    if mode not in MODES:
        raise ConfigError("system.mode", f"must be one of {MODES}, got {mode!r}")
    F_source = _get(system, "system", "F", str)
    x0 = _get(system, "system", "x0", list)
    if len(x0) != n or not all(isinstance(c, (int, float)) for c in x0):
        raise ConfigError("system.x0", f"needs {n} numbers")
    x0 = [float(c) for c in x0]

    f_sources = system.get("f")
    if mode == "explicit":
        if not isinstance(f_sources, list) or len(f_sources) != n or \
                not all(isinstance(s, str) for s in f_sources):
            raise ConfigError("system.f",
                              f"explicit mode needs a list of {n} expressions")
    else:
        if f_sources is not None:
            raise ConfigError("system.f",
                              f"{mode} mode derives f from F; remove explicit components")
    if mode == "hamiltonian-of-F" and n % 2 != 0:
        raise ConfigError("system.dimension",
                          f"hamiltonian mode needs an even dimension, got {n}")

    variables = system.get("variables")
    if variables is not None:
        if not isinstance(variables, list) or len(variables) != n or \
                not all(isinstance(s, str) for s in variables):
            raise ConfigError("system.variables", f"needs {n} names")

    grid = _get(data, "", "grid", dict)
    box = _get(grid, "grid", "box", list)
    if len(box) != n:
        raise ConfigError("grid.box", f"needs {n} [lo, hi] pairs")
    clean_box = []
    for d, pair in enumerate(box):
        if not (isinstance(pair, list) and len(pair) == 2
                and all(isinstance(v, (int, float)) for v in pair)):
            raise ConfigError(f"grid.box[{d}]", "expected [lo, hi]")
        lo, hi = float(pair[0]), float(pair[1])
        if not lo < hi:
            raise ConfigError(f"grid.box[{d}]", f"lo {lo} not below hi {hi}")
        if not lo < x0[d] < hi:
            raise ConfigError(f"grid.box[{d}]",
                              f"x0[{d}] = {x0[d]} not strictly inside [{lo}, {hi}]")
        clean_box.append([lo, hi])
    resolution = grid.get("resolution", 256)
    if isinstance(resolution, list):
        if len(resolution) != n or not all(isinstance(r, int) for r in resolution):
            raise ConfigError("grid.resolution", f"needs {n} integers")
    elif not isinstance(resolution, int):
        raise ConfigError("grid.resolution", "expected integer or list of integers")

    cert = data.get("certify", {})
    if not isinstance(cert, dict):
        raise ConfigError("certify", "expected a table")
    a_schedule = cert.get("a_schedule")
    if a_schedule is not None:
        if not isinstance(a_schedule, list) or \
                not all(isinstance(a, (int, float)) for a in a_schedule):
            raise ConfigError("certify.a_schedule", "expected a list of numbers")
        a_schedule = [float(a) for a in a_schedule]
    params = CertifyParams(
        count=_get(cert, "certify", "family_count", int, 6),
        eta=_get(cert, "certify", "eta", float, 1e-4),
        tol_S=_get(cert, "certify", "tol_S", float, None),
        tol_H=_get(cert, "certify", "tol_H", float, 1e-9),
        quasi_tol=_get(cert, "certify", "quasi_tol", float, None),
        qi_steps=_get(cert, "certify", "qi_steps", int, 12),
        eps0=_get(cert, "certify", "eps0", float, None),
        a0=_get(cert, "certify", "a0", float, None),
        a_schedule=a_schedule,
        max_levels=_get(cert, "certify", "max_levels", int, 40),
    )

    fals = data.get("falsifier", {})
    if not isinstance(fals, dict):
        raise ConfigError("falsifier", "expected a table")
    falsifier = FalsifierSettings(
        trials=_get(fals, "falsifier", "trials", int, 200),
        horizon=_get(fals, "falsifier", "horizon", float, 100.0),
        rel_tol=_get(fals, "falsifier", "rel_tol", float, 1e-8),
        abs_tol=_get(fals, "falsifier", "abs_tol", float, 1e-10),
    )

    seed = _get(data, "", "seed", int, 42)

    cfg = SystemConfig(
        dimension=n, mode=mode, F_source=F_source, x0=x0, box=clean_box,
        resolution=resolution, f_sources=f_sources, variables=variables,
        params=params, falsifier=falsifier, seed=seed,
    )
    cfg.parse_F()  # surface expression errors at load time
    if mode == "explicit":
        cfg.parse_f()
    return cfg
