"""lyapcert: Lyapunov stability certificates from nested hypersurfaces.

Builds a convergent sequence of nested closed level-set surfaces around an
equilibrium and certifies stability from the discrete sign condition
S(x) = <N(x), f(x)> >= 0 on each surface, with trajectory integration as
an independent empirical cross-check.
"""

from .certify import (
    CertifyParams,
    GradientClassification,
    NestedFamily,
    QuasiIsolationReport,
    SignReport,
    StabilityCertificate,
    build_nested_family,
    certify_hamiltonian,
    certify_stability,
    check_quasi_isolated,
    classify_gradient_system,
    sign_condition,
    tilde_sign_condition,
)
from .dynamics import (
    FalsificationReport,
    IntegratorConfig,
    Trajectory,
    containment_test,
    epsilon_delta_probe,
    first_escape_time,
    integrate,
)
from .errors import LyapcertError
from .field_expr import (
    ScalarExpr,
    VectorFieldDef,
    differentiate,
    evaluate,
    gradient,
    make_gradient_system,
    make_hamiltonian_system,
    parse_expression,
)
from .geometry import (
    Hypersurface,
    SampleGrid,
    bounds_point,
    build_grid,
    classify_closed,
    diameter,
    distance_to_point,
    extract_level_components,
    is_nested,
    min_gradient_norm,
    orient_inward,
)

__version__ = "0.1.0"

__all__ = [
    "CertifyParams",
    "FalsificationReport",
    "GradientClassification",
    "Hypersurface",
    "IntegratorConfig",
    "LyapcertError",
    "NestedFamily",
    "QuasiIsolationReport",
    "SampleGrid",
    "ScalarExpr",
    "SignReport",
    "StabilityCertificate",
    "Trajectory",
    "VectorFieldDef",
    "bounds_point",
    "build_grid",
    "build_nested_family",
    "certify_hamiltonian",
    "certify_stability",
    "check_quasi_isolated",
    "classify_closed",
    "classify_gradient_system",
    "containment_test",
    "diameter",
    "differentiate",
    "distance_to_point",
    "epsilon_delta_probe",
    "evaluate",
    "extract_level_components",
    "first_escape_time",
    "gradient",
    "integrate",
    "is_nested",
    "make_gradient_system",
    "make_hamiltonian_system",
    "min_gradient_norm",
    "orient_inward",
    "parse_expression",
    "sign_condition",
    "tilde_sign_condition",
]
