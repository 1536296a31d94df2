"""Exception types shared across the package."""


class LyapcertError(Exception):
    """Base class for all errors raised by this package."""


class ExprError(LyapcertError):
    """Problem with a scalar expression (parsing, arity, dimension)."""


class ExprSyntaxError(ExprError):
    def __init__(self, message, position, expected=None):
        self.position = position
        self.expected = expected
        detail = f"{message} at position {position}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)


class UnknownVariableError(ExprError):
    def __init__(self, name, position, declared):
        self.name = name
        self.position = position
        self.declared = tuple(declared)
        super().__init__(
            f"unknown variable '{name}' at position {position}; "
            f"declared variables: {', '.join(declared)}"
        )


class DimensionMismatchError(ExprError):
    pass


class NonFiniteError(LyapcertError):
    """Evaluation produced a non-finite value.

    Carries the offending subexpression and the point where it failed.
    """

    def __init__(self, subexpr_source, point):
        self.subexpr_source = subexpr_source
        self.point = tuple(float(c) for c in point)
        super().__init__(
            f"non-finite value from '{subexpr_source}' at {self.point}"
        )


class GridError(LyapcertError):
    pass


class SurfaceRejected(LyapcertError):
    """A level-set component is not a usable closed hypersurface.

    ``reason`` is one of: touches-box, open-curve, non-manifold, degenerate.
    """

    def __init__(self, reason, detail=""):
        self.reason = reason
        msg = f"surface rejected: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TooCloseToSurfaceError(LyapcertError):
    pass


class AmbiguousOrientationError(LyapcertError):
    pass


class QuasiIsolationError(LyapcertError):
    """Quasi-isolation probe could not run (schedule / grid problems)."""


class QuasiIsolationRequired(LyapcertError):
    """An operation that needs a quasi-isolated point got a different verdict."""

    def __init__(self, verdict):
        self.verdict = verdict
        super().__init__(f"quasi-isolation precondition failed: verdict was '{verdict}'")


class InsufficientSurfacesError(LyapcertError):
    """Fewer nested surfaces were accepted than requested.

    ``level_log`` records, per attempted level, why it was rejected.
    """

    def __init__(self, accepted, requested, level_log):
        self.accepted = accepted
        self.requested = requested
        self.level_log = list(level_log)
        lines = "; ".join(f"a={a:g}: {why}" for a, why in self.level_log[:8])
        super().__init__(
            f"only {accepted} of {requested} surfaces accepted ({lines})"
        )


class MixedSignError(LyapcertError):
    """Sign condition has both signs beyond tolerance on one surface."""


class DynamicsError(LyapcertError):
    pass


class StepUnderflowError(DynamicsError):
    pass


class NotAnEquilibriumError(DynamicsError):
    pass


class SamplerError(DynamicsError):
    pass


class ConfigError(LyapcertError):
    """Configuration file problem, with a field path for diagnostics."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"[{field}]: {message}")
