"""sdereach: certified reachability-probability bounds for polynomial SDEs.

Upper/lower bounds on the probability that a diffusion started at x0 reaches a
target set (within a finite horizon, or exactly at the final instant) while
staying inside a working domain.  Bounds come from polynomial barrier
certificates searched for via sum-of-squares programming, and are cross-checked
against Monte-Carlo simulation and (in one dimension) a PDE solver.
"""

from .poly import Monomial, Polynomial, PolyError, parse
from .model import ReachQuery, SdeModel, SemialgebraicSet, load_model, validate
from .generator import apply_generator
from .certificates import (
    BoundReport,
    CertificateError,
    CertificateKind,
    CertifyOutcome,
    DegreeSpec,
    bound_formula,
    build_condition,
    certify,
    competing_bounds,
    retrieve_deterministic_reach_set,
    solve_problem,
)
from .oracle import McEstimate, SimConfig, estimate_probability, fd_solve_1d
from .sos import SosError

__all__ = [
    "Monomial",
    "Polynomial",
    "PolyError",
    "parse",
    "ReachQuery",
    "SdeModel",
    "SemialgebraicSet",
    "load_model",
    "validate",
    "apply_generator",
    "BoundReport",
    "CertificateError",
    "CertificateKind",
    "CertifyOutcome",
    "DegreeSpec",
    "bound_formula",
    "build_condition",
    "certify",
    "competing_bounds",
    "retrieve_deterministic_reach_set",
    "solve_problem",
    "McEstimate",
    "SimConfig",
    "estimate_probability",
    "fd_solve_1d",
    "SosError",
]

__version__ = "0.1.0"
