"""Certificate construction for reachability probability bounds.

Twelve certificate kinds turn a reachability query into a convex feasibility
problem over polynomial templates:

    HU1/HU2/HU3  upper bounds on the finite-horizon hit probability
    HL1/HL2/HL3  lower bounds on the finite-horizon hit probability
    IU1/IU2/IU3  upper bounds on the probability of being in the target at T
    IL1/IL2/IL3  lower bounds on that instant probability

The *1 kinds use a time-dependent template v(t,x) with no drift shift, the *2
kinds add scalars (alpha, beta) that relax the generator inequality, and the *3
kinds restrict to time-independent v(x).  Lower horizon kinds carry an
auxiliary template w(t,x) whose sup-norm bound M enters the reported bound.

alpha multiplies v and enters the bound exponentially, so it stays an
outer-loop grid parameter; for each fixed alpha every constraint is affine in
the remaining decision variables and compiles to one SDP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .generator import apply_generator
from .model import ModelError, ReachQuery, SdeModel, SemialgebraicSet
from .poly import TIME, Monomial, Polynomial, monomials_upto
from . import sos
from .sos import (
    EQ,
    INEQ,
    AffineScalar,
    LinearPolyExpr,
    SosConstraint,
    VarPool,
    assemble_instance,
    compile_constraint,
)

_ALPHA_ZERO_TOL = 1e-8

_TAGS = ("HU1", "HU2", "HU3", "HL1", "HL2", "HL3",
         "IU1", "IU2", "IU3", "IL1", "IL2", "IL3")


class CertificateError(ValueError):
    """Raised for kind/query mismatches and bad degree requests."""


@dataclass(frozen=True)
class CertificateKind:
    tag: str

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise CertificateError(f"unknown certificate kind {self.tag!r}")

    @property
    def horizon(self) -> bool:
        return self.tag[0] == "H"

    @property
    def upper(self) -> bool:
        return self.tag[1] == "U"

    @property
    def time_dependent(self) -> bool:
        return not self.tag.endswith("3")

    @property
    def uses_alpha(self) -> bool:
        return not self.tag.endswith("1")

    @property
    def uses_w(self) -> bool:
        return self.tag in ("HL1", "HL2", "HL3")

    def __str__(self) -> str:
        return self.tag


def as_kind(kind) -> CertificateKind:
    return kind if isinstance(kind, CertificateKind) else CertificateKind(str(kind))


@dataclass
class DegreeSpec:
    v: int = 4
    w: int = 4
    multiplier: Optional[int] = None  # uniform inequality-multiplier degree override


@dataclass
class Unknown:
    name: str
    degree: int
    basis: List[Monomial]
    var_ids: List[int]


@dataclass
class CertificateProblem:
    kind: CertificateKind
    alpha: float
    T: float
    pool: VarPool
    unknowns: Dict[str, Unknown]
    beta_var: Optional[int]
    m_var: Optional[int]
    constraints: List[SosConstraint]
    objective: AffineScalar
    sense: str  # "min" for upper kinds, "max" for lower kinds
    model: SdeModel
    query: ReachQuery


@dataclass
class BoundReport:
    kind: CertificateKind
    bound: Optional[float]
    raw_bound: Optional[float]
    v: Optional[Polynomial]
    w: Optional[Polynomial]
    alpha: float
    beta: float
    M: float
    solver_status: str
    residual_summary: Optional[sos.ResidualSummary] = None
    vacuous: bool = False
    objective_value: Optional[float] = None
    warnings: List[str] = field(default_factory=list)


# -- bound formulas ----------------------------------------------------------------


def bound_coefficients(kind, alpha: float, T: float) -> Tuple[float, float, float]:
    """(c_v0, c_beta, c_M) with bound = c_v0*v(0,x0) + c_beta*beta + c_M*M."""
    kind = as_kind(kind)
    if T <= 0.0 or not math.isfinite(T):
        raise CertificateError("T must be positive and finite")
    tag = kind.tag
    small = abs(alpha) < _ALPHA_ZERO_TOL
    if tag in ("HU1", "IU1", "IL1"):
        return (1.0, 0.0, 0.0)
    if tag == "HL1":
        return (1.0, 0.0, -2.0 / T)
    if tag in ("HU2", "HU3", "IU2", "IU3", "IL2", "IL3"):
        if small:
            return (1.0, T, 0.0)
        em1 = math.expm1(alpha * T)
        return (em1 + 1.0, em1 / alpha, 0.0)
    if tag in ("HL2", "HL3"):
        if small:
            return (1.0, T / 2.0, -2.0 / T)
        em1 = math.expm1(alpha * T)
        c_v0 = em1 / (alpha * T)
        c_beta = (em1 / (alpha * alpha) - T / alpha) / T
        return (c_v0, c_beta, -2.0 / T)
    raise CertificateError(f"unknown certificate kind {tag!r}")


def bound_formula(kind, v0: float, alpha: float, beta: float, M: float, T: float) -> float:
    """Raw (unclamped) probability bound certified by a feasible solution."""
    kind = as_kind(kind)
    if kind.uses_w and M < 0.0:
        raise CertificateError("M must be nonnegative")
    cv, cb, cm = bound_coefficients(kind, alpha, T)
    return cv * v0 + cb * beta + cm * M


def competing_bounds(v0: float, alpha: float, beta: float, T: float) -> Dict[str, float]:
    """Side-by-side expectation-based bounds for the same (alpha, beta) certificate.

    "gronwall" is the comparison-lemma form this package certifies; "santoyo"
    is the piecewise closed form it is compared against, present only in its
    three validity regimes (alpha < 0 with alpha+beta > 0; alpha = 0 with
    beta >= 0; alpha < 0, alpha+beta <= 0, beta >= 0).
    """
    cv, cb, _ = bound_coefficients(CertificateKind("HU2"), alpha, T)
    out = {"gronwall": cv * v0 + cb * beta}
    if alpha < 0.0:
        if alpha + beta > 0.0:
            out["santoyo"] = (v0 - math.expm1(beta * T) * beta / alpha) * math.exp(-beta * T)
        elif beta >= 0.0:
            out["santoyo"] = math.exp(-beta * T) * (v0 - 1.0) + 1.0
    elif alpha == 0.0 and beta >= 0.0:
        out["santoyo"] = v0 + beta * T
    return out


# -- condition construction ---------------------------------------------------------


def _template(pool: VarPool, name: str, nvars: int, degree: int,
              include_time: bool) -> Tuple[Unknown, LinearPolyExpr, List[Polynomial]]:
    basis = monomials_upto(nvars, degree, include_time=include_time)
    ids = [pool.fresh(f"{name}[{i}]") for i in range(len(basis))]
    monos = [Polynomial({m: 1.0}, nvars) for m in basis]
    expr = LinearPolyExpr.from_combination(
        [(AffineScalar.variable(i), p) for i, p in zip(ids, monos)], nvars)
    return Unknown(name, degree, basis, ids), expr, monos


def _combine(pairs, nvars):
    return LinearPolyExpr.from_combination(pairs, nvars)


def build_condition(kind, model: SdeModel, query: ReachQuery,
                    degrees: DegreeSpec, alpha: float = 0.0) -> CertificateProblem:
    """Instantiate one certificate kind as an affine constraint system."""
    kind = as_kind(kind)
    want = "horizon" if kind.horizon else "instant"
    if query.kind != want:
        article = "a" if kind.horizon else "an"
        raise CertificateError(
            f"certificate kind {kind.tag} needs {article} {want} query, got {query.kind!r}")
    if degrees.v % 2 != 0 or degrees.v < 2:
        raise CertificateError("template degree for v must be even and >= 2")
    if kind.uses_w and (degrees.w % 2 != 0 or degrees.w < 0):
        raise CertificateError("template degree for w must be even and >= 0")
    if not kind.uses_alpha and alpha != 0.0:
        raise CertificateError(f"kind {kind.tag} fixes alpha = 0")

    n = model.n
    T = query.horizon_T
    x0 = list(query.x0)
    time_dep = kind.time_dependent

    pool = VarPool()
    unknowns: Dict[str, Unknown] = {}

    unk_v, v, v_monos = _template(pool, "v", n, degrees.v, time_dep)
    unknowns["v"] = unk_v

    def weighted(polys: Sequence[Polynomial]) -> LinearPolyExpr:
        return _combine(
            [(AffineScalar.variable(i), p) for i, p in zip(unk_v.var_ids, polys)], n)

    Lv = weighted([apply_generator(p, model).full for p in v_monos])
    if time_dep:
        v_t = weighted([p.differentiate(TIME) for p in v_monos])
        vT = weighted([p.substitute_time(T) for p in v_monos])
    else:
        v_t = LinearPolyExpr.zero(n)
        vT = v

    w_expr = Lw = w_t = None
    if kind.uses_w:
        unk_w, w_expr, w_monos = _template(pool, "w", n, degrees.w, time_dep)
        unknowns["w"] = unk_w

        def weighted_w(polys):
            return _combine(
                [(AffineScalar.variable(i), p) for i, p in zip(unk_w.var_ids, polys)], n)

        Lw = weighted_w([apply_generator(p, model).full for p in w_monos])
        w_t = (weighted_w([p.differentiate(TIME) for p in w_monos])
               if time_dep else LinearPolyExpr.zero(n))

    beta_var = pool.fresh("beta") if kind.uses_alpha else None
    m_var = pool.fresh("M") if kind.uses_w else None
    beta_expr = (LinearPolyExpr.from_scalar(AffineScalar.variable(beta_var), n)
                 if beta_var is not None else LinearPolyExpr.zero(n))
    m_expr = (LinearPolyExpr.from_scalar(AffineScalar.variable(m_var), n)
              if m_var is not None else LinearPolyExpr.zero(n))
    one = LinearPolyExpr.from_poly(Polynomial.constant(1.0, n))

    # alpha*v + beta, the drift-relaxation right-hand side
    shift = v.scale(alpha) + beta_expr

    gx = query.domain.g
    gs = query.target.g
    neg_gs = gs.scale(-1.0)
    t_poly = Polynomial.variable(TIME, n)
    gt = t_poly.scale(T) - t_poly * t_poly  # t(T - t) >= 0 encodes t in [0, T]

    HC = [(gx, INEQ), (neg_gs, INEQ)]          # cl(X \ Xs)
    IC = [(gx, INEQ)]                          # cl(X)
    UB = [(gx * gs, EQ), (gx, INEQ), (neg_gs, INEQ)]   # boundary union dX ∪ dXs
    DXS = [(gs, EQ), (gx, INEQ)]               # dXs (inside cl X)
    DXH = [(gx, EQ), (neg_gs, INEQ)]           # dX, horizon flavor (outside Xs)
    DXI = [(gx, EQ)]                           # dX, instant flavor
    TS = [(gs, INEQ), (gx, INEQ)]              # cl(Xs) inside cl(X)

    def timed(region):
        return region + [(gt, INEQ)] if time_dep else list(region)

    cons: List[Tuple[str, LinearPolyExpr, list]] = []
    tag = kind.tag

    if tag in ("HU1", "HU2"):
        cons.append(("interior", shift - Lv, timed(HC)))
        cons.append(("stopped_boundary", shift - v_t, timed(UB)))
        cons.append(("terminal_target", vT - one, list(DXS)))
        cons.append(("terminal_nonneg", vT, list(HC)))
    elif tag == "HU3":
        cons.append(("interior", shift - Lv, list(HC)))
        cons.append(("stopped_boundary", shift, list(UB)))
        cons.append(("terminal_target", v - one, list(DXS)))
        cons.append(("terminal_nonneg", v, list(HC)))
    elif tag in ("HL1", "HL2"):
        cons.append(("interior", Lv - shift, timed(HC)))
        cons.append(("stopped_boundary", v_t - shift, timed(UB)))
        cons.append(("target_boundary", one + w_t - v, timed(DXS)))
        cons.append(("auxiliary_interior", Lw - v, timed(HC)))
        cons.append(("domain_boundary", w_t - v, timed(DXH)))
        cons.append(("aux_sup_upper", m_expr - w_expr, timed(IC)))
        cons.append(("aux_sup_lower", m_expr + w_expr, timed(IC)))
    elif tag == "HL3":
        cons.append(("interior", Lv - shift, list(HC)))
        cons.append(("stopped_boundary", LinearPolyExpr.zero(n) - shift, list(UB)))
        cons.append(("target_boundary", one - v, list(DXS)))
        cons.append(("auxiliary_interior", Lw - v, list(HC)))
        cons.append(("domain_boundary", LinearPolyExpr.zero(n) - v, list(DXH)))
        cons.append(("aux_sup_upper", m_expr - w_expr, list(IC)))
        cons.append(("aux_sup_lower", m_expr + w_expr, list(IC)))
    elif tag in ("IU1", "IU2"):
        cons.append(("interior", shift - Lv, timed(IC)))
        cons.append(("domain_boundary", shift - v_t, timed(DXI)))
        cons.append(("terminal_target", vT - one, list(TS)))
        cons.append(("terminal_nonneg", vT, list(IC)))
    elif tag == "IU3":
        cons.append(("interior", shift - Lv, list(IC)))
        cons.append(("domain_boundary", shift, list(DXI)))
        cons.append(("terminal_target", v - one, list(TS)))
        cons.append(("terminal_nonneg", v, list(IC)))
    elif tag in ("IL1", "IL2"):
        cons.append(("interior", Lv - shift, timed(IC)))
        cons.append(("domain_boundary", v_t - shift, timed(DXI)))
        cons.append(("terminal_zero", LinearPolyExpr.zero(n) - vT, list(HC)))
        cons.append(("terminal_cap", one - vT, list(TS)))
    elif tag == "IL3":
        cons.append(("interior", Lv - shift, list(IC)))
        cons.append(("domain_boundary", LinearPolyExpr.zero(n) - shift, list(DXI)))
        cons.append(("terminal_zero", LinearPolyExpr.zero(n) - v, list(HC)))
        cons.append(("terminal_cap", one - v, list(TS)))
    else:
        raise CertificateError(f"unknown certificate kind {tag!r}")

    # Explicit multiplier degrees, clamped at zero: degenerate templates (for
    # example w of degree 0) produce constraint targets of lower degree than
    # the region generators, and a degree-0 multiplier with a widened identity
    # is still sound where the bare default would reject the build.
    constraints = []
    for name, target, region in cons:
        mdegs = []
        for g, rel in region:
            if rel != INEQ:
                mdegs.append(None)
            elif degrees.multiplier is not None:
                mdegs.append(degrees.multiplier)
            else:
                d = target.degree - g.degree
                mdegs.append(max(0, d - (d % 2)))
        constraints.append(SosConstraint(name, target, region, mdegs))

    cv, cb, cm = bound_coefficients(kind, alpha, T)
    objective = v.evaluate_affine(x0, tval=0.0).scale(cv)
    if beta_var is not None:
        objective = objective + AffineScalar.variable(beta_var, cb)
    if m_var is not None:
        objective = objective + AffineScalar.variable(m_var, cm)

    return CertificateProblem(
        kind=kind, alpha=alpha, T=T, pool=pool, unknowns=unknowns,
        beta_var=beta_var, m_var=m_var, constraints=constraints,
        objective=objective, sense="min" if kind.upper else "max",
        model=model, query=query,
    )


# -- solving and reporting -----------------------------------------------------------


def compile_problem(problem: CertificateProblem, eps: float = 1e-6) -> sos.SdpInstance:
    """Compile all constraints into one SDP instance (fresh multiplier variables)."""
    pool = VarPool()
    pool.names = list(problem.pool.names)
    compiled = [compile_constraint(c, pool, eps=eps) for c in problem.constraints]
    obj = np.zeros(problem.pool.size)
    for var, coef in problem.objective.lin.items():
        obj[var] = coef
    if problem.sense == "max":
        obj = -obj
    return assemble_instance(compiled, pool, obj)


def solve_problem(
    problem: CertificateProblem,
    eps: float = 1e-6,
    backend: str = "in_process",
    sdpa_dir: Optional[str] = None,
    margin: float = 1e-6,
    samples: int = 150,
    seed: int = 0,
    check_residuals: bool = True,
) -> BoundReport:
    """Solve one fixed-alpha problem and package the outcome as a BoundReport."""
    instance = compile_problem(problem, eps=eps)
    basename = f"{problem.kind.tag.lower()}_alpha{problem.alpha:+.6g}".replace("+", "p").replace("-", "m").replace(".", "_")
    sol = sos.solve(instance, backend=backend, sdpa_dir=sdpa_dir, basename=basename)
    if sol.status != "optimal":
        return BoundReport(
            kind=problem.kind, bound=None, raw_bound=None, v=None, w=None,
            alpha=problem.alpha, beta=0.0, M=0.0, solver_status=sol.status,
            warnings=[sol.solver_detail] if sol.solver_detail else [],
        )

    u = sol.u
    unk_v = problem.unknowns["v"]
    v_poly = Polynomial(
        {m: float(u[i]) for m, i in zip(unk_v.basis, unk_v.var_ids)}, problem.model.n)
    w_poly = None
    if "w" in problem.unknowns:
        unk_w = problem.unknowns["w"]
        w_poly = Polynomial(
            {m: float(u[i]) for m, i in zip(unk_w.basis, unk_w.var_ids)}, problem.model.n)
    beta = float(u[problem.beta_var]) if problem.beta_var is not None else 0.0
    M = float(u[problem.m_var]) if problem.m_var is not None else 0.0
    if problem.m_var is not None and M < 0.0:
        M = max(M, 0.0)  # solver-level jitter only: M >= |w| >= 0 is implied

    v0 = v_poly.evaluate(list(problem.query.x0), tval=0.0)
    raw = bound_formula(problem.kind, v0, problem.alpha, beta, M, problem.T)
    bound = min(1.0, max(0.0, raw))
    vacuous = (raw >= 1.0) if problem.kind.upper else (raw <= 0.0)
    warnings = []
    if vacuous:
        warnings.append(
            f"vacuous {'upper' if problem.kind.upper else 'lower'} bound: raw value "
            f"{raw!r} clamped to {bound!r}")

    report = BoundReport(
        kind=problem.kind, bound=bound, raw_bound=raw, v=v_poly, w=w_poly,
        alpha=problem.alpha, beta=beta, M=M, solver_status="optimal",
        vacuous=vacuous, objective_value=sol.objective_value, warnings=warnings,
    )
    if check_residuals:
        report.residual_summary = sos.residual_check(
            report, problem, samples=samples, margin=margin, seed=seed)
    return report


def default_alpha_grid(T: float) -> List[float]:
    """{0} ∪ {±2^j/T : j = -6..3}, ascending: the outer-loop relaxation grid."""
    vals = [0.0] + [s * (2.0 ** j) / T for j in range(-6, 4) for s in (1.0, -1.0)]
    return sorted(vals)


@dataclass
class CertifyOutcome:
    status: str  # "bound" | "no_certificate" | "solver_failure" | "pending_external"
    report: Optional[BoundReport]
    attempts: List[Tuple[float, str]] = field(default_factory=list)


def certify(
    model: SdeModel,
    query: ReachQuery,
    kind,
    degrees: Optional[DegreeSpec] = None,
    alphas: Optional[Sequence[float]] = None,
    backend: str = "in_process",
    sdpa_dir: Optional[str] = None,
    eps: float = 1e-6,
    margin: float = 1e-6,
    samples: int = 150,
    seed: int = 0,
) -> CertifyOutcome:
    """Best bound over the alpha grid; ties broken toward the smallest |alpha|."""
    kind = as_kind(kind)
    degrees = degrees or DegreeSpec()
    if kind.uses_alpha:
        grid = list(alphas) if alphas is not None else default_alpha_grid(query.horizon_T)
    else:
        grid = [0.0]

    attempts: List[Tuple[float, str]] = []
    best: Optional[BoundReport] = None
    for alpha in grid:
        problem = build_condition(kind, model, query, degrees, alpha=alpha)
        report = solve_problem(
            problem, eps=eps, backend=backend, sdpa_dir=sdpa_dir,
            margin=margin, samples=samples, seed=seed)
        attempts.append((alpha, report.solver_status))
        if report.solver_status != "optimal":
            continue
        if best is None:
            best = report
            continue
        if kind.upper:
            better = (report.raw_bound, abs(report.alpha)) < (best.raw_bound, abs(best.alpha))
        else:
            better = (-report.raw_bound, abs(report.alpha)) < (-best.raw_bound, abs(best.alpha))
        if better:
            best = report

    if best is not None:
        return CertifyOutcome(status="bound", report=best, attempts=attempts)
    statuses = {s for _, s in attempts}
    if "pending_external" in statuses:
        return CertifyOutcome(status="pending_external", report=None, attempts=attempts)
    if statuses <= {"infeasible"}:
        return CertifyOutcome(status="no_certificate", report=None, attempts=attempts)
    return CertifyOutcome(status="solver_failure", report=None, attempts=attempts)


# -- deterministic retrieval -----------------------------------------------------------


def retrieve_deterministic_reach_set(
    report: BoundReport, model: SdeModel, query: ReachQuery
) -> SemialgebraicSet:
    """For a noiseless model, turn a lower-bound certificate into an open set of
    initial states guaranteed to realize the reachability event.

    The returned set is the single inequality {bound formula with v(0,x) in
    place of v(0,x0) > 0}; callers should intersect it with the query's state
    constraints (X \\ Xs for horizon kinds, X for instant kinds) when sampling.
    """
    kind = as_kind(report.kind)
    if kind.upper:
        raise CertificateError("retrieval needs a lower-bound certificate kind")
    for row in model.diffusion:
        for entry in row:
            if not entry.is_zero():
                raise CertificateError("retrieval requires identically zero diffusion")
    if report.v is None:
        raise CertificateError("report carries no certificate polynomial")

    cv, cb, cm = bound_coefficients(kind, report.alpha, query.horizon_T)
    v0_poly = report.v.substitute_time(0.0) if report.v.has_time else report.v
    g = v0_poly.scale(cv) + Polynomial.constant(cb * report.beta + cm * report.M, model.n)
    return SemialgebraicSet(g, "open")
