"""Sum-of-squares compilation and solving for set-constrained polynomial inequalities.

A constraint asks that a target polynomial — whose coefficients are affine in
scalar decision variables — be nonnegative on a basic semialgebraic region.
It is compiled Putinar-style into coefficient-matching equalities over

    target - eps = s0 + sum_i s_i * g_i + sum_j lambda_j * h_j

with SOS multipliers s for inequality generators g >= 0 and free polynomial
multipliers lambda for equality generators h = 0.  The eps margin (default
1e-6) tightens every inequality so solver tolerance cannot silently invalidate
a certified bound; pass eps=0 for exact feasibility questions.

Solving happens either in process (CVXPY/Clarabel) or by SDPA sparse file
exchange, and solutions can be re-verified two ways: coefficient reconstruction
of the identity, and numerical sampling of each region (residual_check).
"""

from __future__ import annotations

import math
import os
import re
import shutil
import subprocess
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .model import ReachQuery
from .poly import TIME, Monomial, Polynomial, monomials_upto

_ONE = Monomial()


class SosError(ValueError):
    """Raised for malformed constraints and degree-budget violations."""


# -- decision-variable layer ---------------------------------------------------


class VarPool:
    """Allocates scalar decision-variable ids with names, in deterministic order."""

    def __init__(self):
        self.names: List[str] = []

    def fresh(self, name: str) -> int:
        self.names.append(name)
        return len(self.names) - 1

    @property
    def size(self) -> int:
        return len(self.names)


@dataclass
class AffineScalar:
    """const + sum_v lin[v] * u_v over pool variables v."""

    const: float = 0.0
    lin: Dict[int, float] = field(default_factory=dict)

    @staticmethod
    def variable(var: int, coef: float = 1.0) -> "AffineScalar":
        return AffineScalar(0.0, {var: coef})

    def __add__(self, other: "AffineScalar") -> "AffineScalar":
        lin = dict(self.lin)
        for v, c in other.lin.items():
            lin[v] = lin.get(v, 0.0) + c
        return AffineScalar(self.const + other.const, lin)

    def __sub__(self, other: "AffineScalar") -> "AffineScalar":
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "AffineScalar":
        return AffineScalar(c * self.const, {v: c * x for v, x in self.lin.items()})

    def evaluate(self, u: np.ndarray) -> float:
        return self.const + sum(c * float(u[v]) for v, c in self.lin.items())

    def pruned(self) -> "AffineScalar":
        return AffineScalar(self.const, {v: c for v, c in self.lin.items() if c != 0.0})

    def is_zero(self) -> bool:
        p = self.pruned()
        return p.const == 0.0 and not p.lin


class LinearPolyExpr:
    """Polynomial with AffineScalar coefficients: the shape of every certificate
    constraint target before the SDP fixes the decision variables."""

    def __init__(self, terms: Dict[Monomial, AffineScalar], nvars: int):
        self.terms = {m: a.pruned() for m, a in terms.items() if not a.is_zero()}
        self.nvars = nvars

    @staticmethod
    def zero(nvars: int) -> "LinearPolyExpr":
        return LinearPolyExpr({}, nvars)

    @staticmethod
    def from_poly(p: Polynomial) -> "LinearPolyExpr":
        return LinearPolyExpr({m: AffineScalar(c) for m, c in p.terms.items()}, p.nvars)

    @staticmethod
    def from_combination(
        pairs: Sequence[Tuple[AffineScalar, Polynomial]], nvars: int
    ) -> "LinearPolyExpr":
        """sum_k a_k * p_k with affine weights a_k."""
        acc: Dict[Monomial, AffineScalar] = {}
        for a, p in pairs:
            for m, c in p.terms.items():
                cur = acc.get(m, AffineScalar())
                acc[m] = cur + a.scale(c)
        return LinearPolyExpr(acc, nvars)

    @staticmethod
    def from_scalar(a: AffineScalar, nvars: int) -> "LinearPolyExpr":
        return LinearPolyExpr({_ONE: a}, nvars)

    @property
    def degree(self) -> int:
        return max((m.degree for m in self.terms), default=0)

    @property
    def has_time(self) -> bool:
        return any(m.has_time() for m in self.terms)

    def __add__(self, other: "LinearPolyExpr") -> "LinearPolyExpr":
        acc = dict(self.terms)
        for m, a in other.terms.items():
            acc[m] = acc.get(m, AffineScalar()) + a
        return LinearPolyExpr(acc, self.nvars)

    def __sub__(self, other: "LinearPolyExpr") -> "LinearPolyExpr":
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "LinearPolyExpr":
        return LinearPolyExpr({m: a.scale(c) for m, a in self.terms.items()}, self.nvars)

    def add_poly(self, p: Polynomial) -> "LinearPolyExpr":
        return self + LinearPolyExpr.from_poly(p)

    def substitute_time(self, tval: float) -> "LinearPolyExpr":
        acc: Dict[Monomial, AffineScalar] = {}
        for m, a in self.terms.items():
            e = m.exponent(TIME)
            spatial = Monomial(tuple((v, x) for v, x in m.exps if v != TIME))
            acc[spatial] = acc.get(spatial, AffineScalar()) + a.scale(tval ** e)
        return LinearPolyExpr(acc, self.nvars)

    def evaluate_affine(self, point: Sequence[float], tval: float = 0.0) -> AffineScalar:
        """Value at a fixed point: an affine function of the decision variables."""
        acc = AffineScalar()
        for m, a in self.terms.items():
            val = Polynomial({m: 1.0}, self.nvars).evaluate(list(point), tval=tval)
            acc = acc + a.scale(val)
        return acc

    def substitute(self, u: np.ndarray) -> Polynomial:
        """Concrete polynomial once the decision variables have values."""
        return Polynomial({m: a.evaluate(u) for m, a in self.terms.items()}, self.nvars)


# -- constraints and compilation --------------------------------------------------

INEQ = "ineq"  # g >= 0
EQ = "eq"      # h = 0

RegionTerm = Tuple[Polynomial, str]


@dataclass
class SosConstraint:
    """target >= 0 on {g >= 0 for ineq terms} ∩ {h = 0 for eq terms}.

    multiplier_degrees aligns with region; None entries take the default
    even_floor(deg(target) - deg(g)); entries for eq terms are ignored (free
    multipliers get degree budget - deg(h)).
    """

    name: str
    target: LinearPolyExpr
    region: List[RegionTerm] = field(default_factory=list)
    multiplier_degrees: Optional[List[Optional[int]]] = None


def _even_floor(d: int) -> int:
    return d - (d % 2)


def _even_ceil(d: int) -> int:
    return d + (d % 2)


@dataclass
class CompiledConstraint:
    name: str
    target: LinearPolyExpr
    region: List[RegionTerm]
    involves_time: bool
    budget: int
    rows: List[Monomial]
    s0_basis: List[Monomial]
    ineq_blocks: List[Tuple[int, List[Monomial]]]   # (region index, Gram basis)
    eq_blocks: List[Tuple[int, List[Monomial], List[int]]]  # (region idx, basis, var ids)
    gram_entries: List[Tuple[int, int, int, int, float]]  # (row, local block, a<=b, b, coef)
    var_entries: List[Tuple[int, int, float]]             # (row, var id, coef)
    rhs: np.ndarray
    # global offsets, set at assembly
    row_offset: int = 0
    block_offset: int = 0

    @property
    def n_blocks(self) -> int:
        return 1 + len(self.ineq_blocks)


def compile_constraint(con: SosConstraint, pool: VarPool, eps: float = 1e-6) -> CompiledConstraint:
    """Coefficient-matching rows for target - eps = s0 + sum s_i g_i + sum lam_j h_j."""
    involves_time = con.target.has_time or any(g.has_time for g, _ in con.region)
    nv = con.target.nvars
    deg_target = con.target.degree

    mdegs = con.multiplier_degrees or [None] * len(con.region)
    if len(mdegs) != len(con.region):
        raise SosError(f"{con.name}: multiplier_degrees length mismatch")

    ineq_specs: List[Tuple[int, int]] = []  # (region idx, multiplier degree)
    eq_idx: List[int] = []
    for idx, (g, rel) in enumerate(con.region):
        if rel == INEQ:
            md = mdegs[idx]
            if md is None:
                md = _even_floor(deg_target - g.degree)
                if md < 0:
                    raise SosError(
                        f"{con.name}: generator of degree {g.degree} exceeds the "
                        f"target degree budget {deg_target}; raise the template degree"
                    )
            if md < 0 or md % 2 != 0:
                raise SosError(f"{con.name}: multiplier degree must be even and >= 0")
            ineq_specs.append((idx, md))
        elif rel == EQ:
            eq_idx.append(idx)
        else:
            raise SosError(f"{con.name}: unknown relation {rel!r}")

    # explicitly requested multiplier degrees widen the matched identity
    budget = _even_ceil(max(
        [deg_target] + [md + con.region[i][0].degree for i, md in ineq_specs]))

    # equality multipliers are optional (lambda = 0 is always sound); an
    # equality generator too large for the budget simply gets no multiplier
    eq_specs: List[Tuple[int, int]] = [
        (idx, budget - con.region[idx][0].degree)
        for idx in eq_idx
        if budget - con.region[idx][0].degree >= 0
    ]

    rows = monomials_upto(nv, budget, include_time=involves_time)
    row_index = {m: i for i, m in enumerate(rows)}

    s0_basis = monomials_upto(nv, budget // 2, include_time=involves_time)
    gram_entries: List[Tuple[int, int, int, int, float]] = []

    def add_gram_block(block: int, basis: List[Monomial], gpoly: Optional[Polynomial]):
        for a in range(len(basis)):
            for b in range(a, len(basis)):
                prod = basis[a].mul(basis[b])
                if gpoly is None:
                    gram_entries.append((row_index[prod], block, a, b, 1.0))
                else:
                    for m2, c2 in gpoly.terms.items():
                        gram_entries.append((row_index[prod.mul(m2)], block, a, b, c2))

    add_gram_block(0, s0_basis, None)
    ineq_blocks = []
    for local, (ridx, md) in enumerate(ineq_specs, start=1):
        basis = monomials_upto(nv, md // 2, include_time=involves_time)
        ineq_blocks.append((ridx, basis))
        add_gram_block(local, basis, con.region[ridx][0])

    var_entries: List[Tuple[int, int, float]] = []
    eq_blocks = []
    for ridx, ld in eq_specs:
        basis = monomials_upto(nv, ld, include_time=involves_time)
        ids = [pool.fresh(f"{con.name}.lam{ridx}[{p}]") for p in range(len(basis))]
        eq_blocks.append((ridx, basis, ids))
        h = con.region[ridx][0]
        for p, bm in enumerate(basis):
            for m2, c2 in h.terms.items():
                var_entries.append((row_index[bm.mul(m2)], ids[p], c2))

    rhs = np.zeros(len(rows))
    for m, a in con.target.terms.items():
        r = row_index[m]
        rhs[r] += a.const
        for v, c in a.lin.items():
            var_entries.append((r, v, -c))
    rhs[row_index[_ONE]] -= eps

    return CompiledConstraint(
        name=con.name, target=con.target, region=list(con.region),
        involves_time=involves_time, budget=budget, rows=rows, s0_basis=s0_basis,
        ineq_blocks=ineq_blocks, eq_blocks=eq_blocks,
        gram_entries=gram_entries, var_entries=var_entries, rhs=rhs,
    )


# -- SDP instance ------------------------------------------------------------------


@dataclass
class SdpInstance:
    """Find PSD Gram blocks and free scalars satisfying coefficient-matching rows,
    minimizing a linear objective over the free scalars."""

    block_dims: List[int]
    n_free: int
    rhs: np.ndarray
    gram_entries: List[Tuple[int, int, int, int, float]]  # (row, block, i<=j, j, coef)
    free_entries: List[Tuple[int, int, float]]            # (row, var, coef)
    objective: np.ndarray                                 # minimized over free scalars
    constraints: List[CompiledConstraint] = field(default_factory=list)
    var_names: List[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)


def assemble_instance(
    compiled: Sequence[CompiledConstraint], pool: VarPool, objective: np.ndarray
) -> SdpInstance:
    block_dims: List[int] = []
    rhs_parts = []
    gram_entries = []
    free_entries = []
    row_off = 0
    for c in compiled:
        c.row_offset = row_off
        c.block_offset = len(block_dims)
        block_dims.append(len(c.s0_basis))
        for _, basis in c.ineq_blocks:
            block_dims.append(len(basis))
        for (r, blk, a, b, v) in c.gram_entries:
            gram_entries.append((r + row_off, blk + c.block_offset, a, b, v))
        for (r, var, v) in c.var_entries:
            free_entries.append((r + row_off, var, v))
        rhs_parts.append(c.rhs)
        row_off += len(c.rows)
    obj = np.zeros(pool.size)
    obj[: len(objective)] = objective
    return SdpInstance(
        block_dims=block_dims,
        n_free=pool.size,
        rhs=np.concatenate(rhs_parts) if rhs_parts else np.zeros(0),
        gram_entries=gram_entries,
        free_entries=free_entries,
        objective=obj,
        constraints=list(compiled),
        var_names=list(pool.names),
    )


@dataclass
class Solution:
    status: str  # optimal | infeasible | numerical_trouble | pending_external
    u: Optional[np.ndarray] = None        # free scalar values
    grams: Optional[List[np.ndarray]] = None
    objective_value: Optional[float] = None  # value of instance.objective @ u
    solver_detail: str = ""


def solve(
    instance: SdpInstance,
    backend: str = "in_process",
    sdpa_dir: Optional[str] = None,
    basename: str = "instance",
) -> Solution:
    """Solve via CVXPY/Clarabel (in_process) or SDPA sparse files (file_exchange)."""
    if backend == "in_process":
        return _solve_inprocess(instance)
    if backend == "file_exchange":
        if sdpa_dir is None:
            raise SosError("file_exchange backend needs a directory")
        return _solve_file_exchange(instance, sdpa_dir, basename)
    raise SosError(f"unknown backend {backend!r}")


def _solve_inprocess(instance: SdpInstance) -> Solution:
    import cvxpy as cp
    from scipy.sparse import coo_matrix

    R = instance.n_rows
    grams = [cp.Variable((d, d), PSD=True) for d in instance.block_dims]
    u = cp.Variable(instance.n_free) if instance.n_free else None

    lhs = 0
    by_block: Dict[int, List[Tuple[int, int, int, float]]] = {}
    for (r, blk, a, b, v) in instance.gram_entries:
        by_block.setdefault(blk, []).append((r, a, b, v))
    for blk, entries in sorted(by_block.items()):
        d = instance.block_dims[blk]
        rr, cc, vv = [], [], []
        for (r, a, b, v) in entries:
            rr.append(r); cc.append(b * d + a); vv.append(v)
            if a != b:
                rr.append(r); cc.append(a * d + b); vv.append(v)
        A = coo_matrix((vv, (rr, cc)), shape=(R, d * d)).tocsr()
        lhs = lhs + A @ cp.vec(grams[blk], order="F")
    if instance.n_free:
        rr = [e[0] for e in instance.free_entries]
        cc = [e[1] for e in instance.free_entries]
        vv = [e[2] for e in instance.free_entries]
        B = coo_matrix((vv, (rr, cc)), shape=(R, instance.n_free)).tocsr()
        lhs = lhs + B @ u

    objective = cp.Minimize(instance.objective @ u) if instance.n_free else cp.Minimize(0)
    prob = cp.Problem(objective, [lhs == instance.rhs])
    try:
        with warnings.catch_warnings():
            # inaccurate solves surface as a status below, not as a warning
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as e:
        return Solution(status="numerical_trouble", solver_detail=str(e))

    if prob.status == cp.OPTIMAL:
        uval = np.asarray(u.value) if u is not None else np.zeros(0)
        return Solution(
            status="optimal",
            u=uval,
            grams=[np.asarray(g.value) for g in grams],
            objective_value=float(instance.objective @ uval) if instance.n_free else 0.0,
            solver_detail=prob.status,
        )
    if prob.status == cp.INFEASIBLE:
        return Solution(status="infeasible", solver_detail=prob.status)
    return Solution(status="numerical_trouble", solver_detail=str(prob.status))


# -- SDPA sparse file exchange ------------------------------------------------------
#
# The instance maps onto the SDPA dual: maximize tr(F0 Y) subject to
# tr(F_r Y) = c_r and Y >= 0, where Y stacks the Gram blocks plus one diagonal
# block holding each free scalar split as u = u_plus - u_minus.


def write_sdpa(instance: SdpInstance, path: str) -> None:
    lines = ["* SDPA sparse export: SOS coefficient-matching instance"]
    nblocks = len(instance.block_dims) + (1 if instance.n_free else 0)
    lines.append(f"{instance.n_rows}")
    lines.append(f"{nblocks}")
    dims = [str(d) for d in instance.block_dims]
    if instance.n_free:
        dims.append(str(-2 * instance.n_free))
    lines.append(" ".join(dims))
    lines.append(" ".join(repr(float(v)) for v in instance.rhs))

    diag_blk = len(instance.block_dims) + 1  # 1-indexed
    entries: List[Tuple[int, int, int, int, float]] = []
    # F0: maximize tr(F0 Y) == minimize objective @ u
    for var, c in enumerate(instance.objective):
        if c != 0.0:
            entries.append((0, diag_blk, 2 * var + 1, 2 * var + 1, -float(c)))
            entries.append((0, diag_blk, 2 * var + 2, 2 * var + 2, float(c)))
    for (r, blk, a, b, v) in instance.gram_entries:
        entries.append((r + 1, blk + 1, a + 1, b + 1, float(v)))
    for (r, var, v) in instance.free_entries:
        entries.append((r + 1, diag_blk, 2 * var + 1, 2 * var + 1, float(v)))
        entries.append((r + 1, diag_blk, 2 * var + 2, 2 * var + 2, -float(v)))

    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    for (mat, blk, i, j, v) in entries:
        lines.append(f"{mat} {blk} {i} {j} {repr(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_sdpa(path: str) -> SdpInstance:
    """Read a .dat-s file back into a structural SdpInstance (no constraint metadata)."""
    with open(path) as fh:
        raw = [ln.strip() for ln in fh]
    lines = [ln for ln in raw if ln and not ln.startswith(("*", '"'))]
    m_dim = int(lines[0].split()[0])
    nblock = int(lines[1].split()[0])
    dims = [int(tok) for tok in re.split(r"[,\s{}()]+", lines[2]) if tok]
    if len(dims) != nblock:
        raise SosError(f"block count mismatch: {len(dims)} sizes for nBLOCK={nblock}")
    rhs = np.array([float(tok) for tok in re.split(r"[,\s{}]+", lines[3]) if tok])
    if len(rhs) != m_dim:
        raise SosError(f"objective row has {len(rhs)} entries, expected {m_dim}")

    has_diag = dims and dims[-1] < 0
    gram_dims = dims[:-1] if has_diag else dims
    if any(d <= 0 for d in gram_dims):
        raise SosError("only the final block may be diagonal in this export")
    n_free = (-dims[-1]) // 2 if has_diag else 0
    diag_blk = len(gram_dims) + 1

    gram_entries = []
    free_acc: Dict[Tuple[int, int], float] = {}
    objective = np.zeros(n_free)
    for ln in lines[4:]:
        toks = ln.split()
        if len(toks) != 5:
            raise SosError(f"bad entry line: {ln!r}")
        mat, blk, i, j, v = int(toks[0]), int(toks[1]), int(toks[2]), int(toks[3]), float(toks[4])
        if blk == diag_blk and has_diag:
            if i != j:
                raise SosError("off-diagonal entry in diagonal block")
            var, rem = divmod(i - 1, 2)
            if rem == 0:  # u_plus carries the signed coefficient
                if mat == 0:
                    objective[var] = -v
                else:
                    free_acc[(mat - 1, var)] = v
        else:
            if mat == 0:
                raise SosError("objective entries expected only in the free block")
            gram_entries.append((mat - 1, blk - 1, i - 1, j - 1, v))
    free_entries = [(r, var, v) for (r, var), v in sorted(free_acc.items())]
    return SdpInstance(
        block_dims=gram_dims,
        n_free=n_free,
        rhs=rhs,
        gram_entries=gram_entries,
        free_entries=free_entries,
        objective=objective,
    )


_SDPA_STATUS = {
    "pdOPT": "optimal",
    "pFEAS": "numerical_trouble",
    "dFEAS": "numerical_trouble",
    "pdFEAS": "optimal",
    "pdINF": "infeasible",
    "pINF_dFEAS": "infeasible",
    "pFEAS_dINF": "infeasible",
    "pUNBD": "infeasible",
    "dUNBD": "numerical_trouble",
    "noINFO": "numerical_trouble",
}


def _parse_braced_numbers(text: str) -> List[float]:
    return [float(t) for t in re.split(r"[,\s{}]+", text) if t and t not in "{}"]


def _extract_section(text: str, marker: str) -> Optional[str]:
    pos = text.find(marker)
    if pos < 0:
        return None
    start = text.find("{", pos)
    if start < 0:
        return None
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def parse_sdpa_solution(out_path: str, instance: SdpInstance) -> Solution:
    """Parse an SDPA solver output file (xVec/xMat/yMat layout) for this instance."""
    with open(out_path) as fh:
        text = fh.read()
    mstat = re.search(r"phase\.value\s*=\s*(\S+)", text)
    status = _SDPA_STATUS.get(mstat.group(1), "numerical_trouble") if mstat else "numerical_trouble"
    if status != "optimal":
        return Solution(status=status, solver_detail=mstat.group(1) if mstat else "no status")

    ymat_text = _extract_section(text, "yMat")
    if ymat_text is None:
        return Solution(status="numerical_trouble", solver_detail="yMat section missing")
    # split top-level blocks
    blocks = []
    depth = 0
    start = None
    for i, ch in enumerate(ymat_text):
        if ch == "{":
            depth += 1
            if depth == 2:
                start = i
        elif ch == "}":
            if depth == 2 and start is not None:
                blocks.append(ymat_text[start : i + 1])
                start = None
            depth -= 1
    expected = len(instance.block_dims) + (1 if instance.n_free else 0)
    if len(blocks) != expected:
        return Solution(status="numerical_trouble",
                        solver_detail=f"yMat has {len(blocks)} blocks, expected {expected}")
    grams = []
    for bi, d in enumerate(instance.block_dims):
        vals = _parse_braced_numbers(blocks[bi])
        if len(vals) != d * d:
            return Solution(status="numerical_trouble",
                            solver_detail=f"block {bi} has {len(vals)} entries, expected {d*d}")
        grams.append(np.array(vals).reshape(d, d))
    u = np.zeros(instance.n_free)
    if instance.n_free:
        diag = _parse_braced_numbers(blocks[-1])
        if len(diag) != 2 * instance.n_free:
            return Solution(status="numerical_trouble", solver_detail="free block size mismatch")
        for var in range(instance.n_free):
            u[var] = diag[2 * var] - diag[2 * var + 1]
    return Solution(
        status="optimal", u=u, grams=grams,
        objective_value=float(instance.objective @ u) if instance.n_free else 0.0,
        solver_detail="sdpa",
    )


def _solve_file_exchange(instance: SdpInstance, directory: str, basename: str) -> Solution:
    os.makedirs(directory, exist_ok=True)
    dat = os.path.join(directory, basename + ".dat-s")
    out = os.path.join(directory, basename + ".out")
    write_sdpa(instance, dat)
    exe = shutil.which("sdpa")
    if exe is not None:
        res = subprocess.run([exe, dat, out], capture_output=True, text=True)
        if res.returncode != 0 and not os.path.exists(out):
            return Solution(status="numerical_trouble",
                            solver_detail=f"sdpa exited {res.returncode}")
    if os.path.exists(out):
        return parse_sdpa_solution(out, instance)
    return Solution(
        status="pending_external",
        solver_detail=f"wrote {dat}; run an SDPA solver and place its output at {out}",
    )


# -- post-checks -----------------------------------------------------------------


def reconstruction_residual(instance: SdpInstance, solution: Solution, eps: float = 1e-6) -> float:
    """Max |coefficient| of s0 + sum s_i g_i + sum lam_j h_j - (target - eps), over all
    constraints: how exactly the returned Grams reproduce the matched identity."""
    if solution.status != "optimal":
        raise SosError("reconstruction needs an optimal solution")
    worst = 0.0
    for c in instance.constraints:
        nv = c.target.nvars
        assembled = Polynomial.zero(nv)

        def gram_poly(basis, Q):
            acc = {}
            for a in range(len(basis)):
                for b in range(len(basis)):
                    m = basis[a].mul(basis[b])
                    acc[m] = acc.get(m, 0.0) + float(Q[a, b])
            return Polynomial(acc, nv)

        assembled = assembled + gram_poly(c.s0_basis, solution.grams[c.block_offset])
        for local, (ridx, basis) in enumerate(c.ineq_blocks, start=1):
            g = c.region[ridx][0]
            assembled = assembled + g * gram_poly(basis, solution.grams[c.block_offset + local])
        for (ridx, basis, ids) in c.eq_blocks:
            h = c.region[ridx][0]
            lam = Polynomial(
                {m: float(solution.u[i]) for m, i in zip(basis, ids)}, nv
            )
            assembled = assembled + h * lam
        residual = assembled - (c.target.substitute(solution.u) - eps)
        worst = max(worst, max((abs(v) for v in residual.terms.values()), default=0.0))
    return worst


@dataclass
class RegionCheck:
    name: str
    n_points: int
    worst_violation: float
    checked: bool
    note: str = ""


@dataclass
class ResidualSummary:
    status: str            # "checked" | "violations"
    worst_violation: float
    regions: List[RegionCheck]
    warnings: List[str] = field(default_factory=list)


def residual_check_concrete(
    named_constraints: Sequence[Tuple[str, Polynomial, List[RegionTerm]]],
    query: ReachQuery,
    samples: int = 200,
    margin: float = 1e-6,
    seed: int = 0,
    tol: float = 1e-8,
) -> ResidualSummary:
    """Sample each constraint's region and report the worst violation of target >= 0.

    Inequality-only regions use rejection sampling in the bounding box (times
    [0, T] when t is involved); regions with an equality generator are sampled
    by root-finding along random lines through a slightly inflated box, so that
    boundary sets touching the box faces are still reachable.
    """
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in query.bounding_box])
    hi = np.array([b[1] for b in query.bounding_box])
    T = query.horizon_T
    n = len(lo)

    checks: List[RegionCheck] = []
    warnings: List[str] = []
    overall = 0.0

    for name, target, region in named_constraints:
        eqs = [g for g, rel in region if rel == EQ]
        ineqs = [g for g, rel in region if rel == INEQ]
        has_t = target.has_time or any(g.has_time for g, _ in region)
        pts: List[Tuple[np.ndarray, float]] = []

        if len(eqs) > 1:
            warnings.append(f"{name}: region with several equalities not sampled")
            checks.append(RegionCheck(name, 0, 0.0, False, "multiple equalities"))
            continue

        max_tries = 250 * samples
        tries = 0
        while len(pts) < samples and tries < max_tries:
            tries += 1
            tval = float(rng.uniform(0.0, T)) if has_t else 0.0
            if not eqs:
                x = lo + (hi - lo) * rng.random(n)
            else:
                h = eqs[0]
                c = (lo + hi) / 2.0
                p = c + (rng.random(n) - 0.5) * (hi - lo) * 1.3
                q = c + (rng.random(n) - 0.5) * (hi - lo) * 1.3
                x = _root_on_segment(h, p, q, tol)
                if x is None:
                    continue
                pad = 1e-9 * np.maximum(1.0, np.abs(hi - lo))
                if np.any(x < lo - pad) or np.any(x > hi + pad):
                    continue
            ok = all(g.evaluate(x.tolist(), tval=tval) >= -tol for g in ineqs)
            if ok:
                pts.append((x, tval))

        if not pts:
            warnings.append(f"{name}: no sample points found; region unchecked")
            checks.append(RegionCheck(name, 0, 0.0, False, "no sample points"))
            continue

        worst = 0.0
        for x, tval in pts:
            val = target.evaluate(x.tolist(), tval=tval)
            worst = max(worst, -min(0.0, val))
        overall = max(overall, worst)
        checks.append(RegionCheck(name, len(pts), worst, True))

    status = "checked" if overall <= margin else "violations"
    return ResidualSummary(status=status, worst_violation=overall,
                           regions=checks, warnings=warnings)


def residual_check(report, problem, samples: int = 200, margin: float = 1e-6,
                   seed: int = 0) -> ResidualSummary:
    """Re-check a solved certificate numerically, from the report alone.

    The decision-variable assignment is reconstructed from the report's
    polynomial templates and scalars, each constraint target is instantiated,
    and every region is sampled (see residual_check_concrete).
    """
    u = np.zeros(problem.pool.size)
    for name, unk in problem.unknowns.items():
        poly = getattr(report, name)
        if poly is None:
            continue
        for mono, var in zip(unk.basis, unk.var_ids):
            u[var] = poly.coefficient(mono)
    if problem.beta_var is not None:
        u[problem.beta_var] = report.beta
    if problem.m_var is not None:
        u[problem.m_var] = report.M
    named = [(c.name, c.target.substitute(u), c.region) for c in problem.constraints]
    return residual_check_concrete(
        named, problem.query, samples=samples, margin=margin, seed=seed)


def _root_on_segment(h: Polynomial, p: np.ndarray, q: np.ndarray, tol: float):
    """One root of h along the segment p->q, located by sign change + brentq."""
    def phi(s: float) -> float:
        x = p + s * (q - p)
        return h.evaluate(x.tolist())

    grid = np.linspace(0.0, 1.0, 65)
    vals = [phi(s) for s in grid]
    for i in range(len(grid) - 1):
        va, vb = vals[i], vals[i + 1]
        if va == 0.0:
            return p + grid[i] * (q - p)
        if va * vb < 0.0:
            s = brentq(phi, grid[i], grid[i + 1], xtol=tol, rtol=8.9e-16)
            return p + s * (q - p)
    if vals[-1] == 0.0:
        return q.copy()
    return None
