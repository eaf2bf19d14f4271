"""Sparse multivariate polynomial arithmetic over x1..xn and an optional time variable t.

Coefficients are 64-bit floats.  Canonicalization prunes exactly-zero coefficients
only (no epsilon pruning), so integer-coefficient identities stay exact; numerical
tolerance is the business of the SOS layer, not this one.

The time variable t is distinguished: it is never counted in ``nvars`` and is
stored under the reserved index ``TIME = 0`` (state variables use 1..nvars).

The text grammar used by model files and reports:

    expr   := ['+'|'-'] term (('+'|'-') term)*
    term   := factor ('*' factor)*
    factor := ('+'|'-') factor | atom ['^' UINT]
    atom   := NUMBER | 't' | 'x<i>' | '(' expr ')'

with decimal (optionally scientific) number literals and insignificant whitespace.
"""

from __future__ import annotations

import re
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Tuple, Union

# Reserved variable index for t; state variables are 1-based (x1 -> 1).
TIME = 0

_ExpItem = Tuple[int, int]


class PolyError(ValueError):
    """Raised for grammar violations and dimension mismatches."""


class Monomial:
    """A power product, stored sparsely as sorted (variable index, exponent) pairs.

    Invariant: no stored exponent is zero; the empty tuple is the constant monomial 1.
    """

    __slots__ = ("exps",)

    def __init__(self, exps: Iterable[_ExpItem] = ()):
        items = tuple(sorted((v, e) for v, e in exps if e != 0))
        for v, e in items:
            if v < 0 or e < 0:
                raise PolyError(f"bad monomial entry ({v}, {e})")
        object.__setattr__(self, "exps", items)

    def __setattr__(self, *a):  # pragma: no cover - immutability guard
        raise AttributeError("Monomial is immutable")

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.exps)

    def exponent(self, var: int) -> int:
        for v, e in self.exps:
            if v == var:
                return e
        return 0

    def has_time(self) -> bool:
        return any(v == TIME for v, _ in self.exps)

    def max_state_var(self) -> int:
        return max((v for v, _ in self.exps if v != TIME), default=0)

    def mul(self, other: "Monomial") -> "Monomial":
        merged = dict(self.exps)
        for v, e in other.exps:
            merged[v] = merged.get(v, 0) + e
        return Monomial(merged.items())

    def grlex_key(self, nvars: int) -> Tuple[int, Tuple[int, ...]]:
        """(total degree, exponents in x1..xn,t order) — sort descending for display."""
        dense = tuple(self.exponent(i) for i in range(1, nvars + 1)) + (self.exponent(TIME),)
        return (self.degree, dense)

    def __eq__(self, other) -> bool:
        return isinstance(other, Monomial) and self.exps == other.exps

    def __hash__(self) -> int:
        return hash(self.exps)

    def __repr__(self) -> str:
        return f"Monomial({self.exps!r})"


_ONE = Monomial()


class Polynomial:
    """Immutable sparse polynomial: map Monomial -> float coefficient, plus nvars.

    Two polynomials are equal iff their canonical term maps and nvars agree.
    """

    __slots__ = ("terms", "nvars")

    def __init__(self, terms: Mapping[Monomial, float], nvars: int):
        canon = {}
        for mono, coef in terms.items():
            c = float(coef)
            if c != 0.0:
                if mono.max_state_var() > nvars:
                    raise PolyError(
                        f"monomial uses x{mono.max_state_var()} but nvars={nvars}"
                    )
                canon[mono] = c
        object.__setattr__(self, "terms", canon)
        object.__setattr__(self, "nvars", int(nvars))

    def __setattr__(self, *a):  # pragma: no cover - immutability guard
        raise AttributeError("Polynomial is immutable")

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(nvars: int) -> "Polynomial":
        return Polynomial({}, nvars)

    @staticmethod
    def constant(c: float, nvars: int) -> "Polynomial":
        return Polynomial({_ONE: c}, nvars)

    @staticmethod
    def variable(var: int, nvars: int) -> "Polynomial":
        """x_var for var in 1..nvars, or t for var == TIME."""
        if var != TIME and not (1 <= var <= nvars):
            raise PolyError(f"variable index {var} out of range for nvars={nvars}")
        return Polynomial({Monomial(((var, 1),)): 1.0}, nvars)

    # -- structure ---------------------------------------------------------

    @property
    def has_time(self) -> bool:
        return any(m.has_time() for m in self.terms)

    @property
    def degree(self) -> int:
        """Total degree (t counts as a variable); 0 for the zero polynomial."""
        return max((m.degree for m in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, mono: Monomial) -> float:
        return self.terms.get(mono, 0.0)

    def with_nvars(self, nvars: int) -> "Polynomial":
        """Embed into a (usually larger) state space."""
        return Polynomial(self.terms, nvars)

    # -- arithmetic ---------------------------------------------------------

    def _check_compatible(self, other: "Polynomial") -> None:
        if self.nvars != other.nvars:
            raise PolyError(f"dimension mismatch: nvars {self.nvars} vs {other.nvars}")

    def __add__(self, other: Union["Polynomial", float, int]) -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self.nvars)
        self._check_compatible(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self.nvars)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self.terms.items()}, self.nvars)

    def __sub__(self, other: Union["Polynomial", float, int]) -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self.nvars)
        return self + (-other)

    def __rsub__(self, other: Union[float, int]) -> "Polynomial":
        return Polynomial.constant(other, self.nvars) - self

    def __mul__(self, other: Union["Polynomial", float, int]) -> "Polynomial":
        if isinstance(other, (int, float)):
            return self.scale(other)
        self._check_compatible(other)
        out: dict = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = m1.mul(m2)
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(out, self.nvars)

    __rmul__ = __mul__

    def scale(self, c: float) -> "Polynomial":
        return Polynomial({m: c * v for m, v in self.terms.items()}, self.nvars)

    def pow(self, k: int) -> "Polynomial":
        if k < 0 or k != int(k):
            raise PolyError("powers must be nonnegative integers")
        out = Polynomial.constant(1.0, self.nvars)
        for _ in range(int(k)):
            out = out * self
        return out

    # -- calculus ------------------------------------------------------------

    def differentiate(self, var: int) -> "Polynomial":
        """Formal partial derivative w.r.t. x_var (or t when var == TIME)."""
        if var != TIME and not (1 <= var <= self.nvars):
            raise PolyError(f"variable index {var} out of range for nvars={self.nvars}")
        out: dict = {}
        for m, c in self.terms.items():
            e = m.exponent(var)
            if e == 0:
                continue
            reduced = Monomial(tuple((v, x - 1 if v == var else x) for v, x in m.exps))
            out[reduced] = out.get(reduced, 0.0) + c * e
        return Polynomial(out, self.nvars)

    # -- evaluation ------------------------------------------------------------

    def evaluate(self, point: Sequence[float], tval: Optional[float] = None) -> float:
        if len(point) != self.nvars:
            raise PolyError(f"point has {len(point)} entries, expected {self.nvars}")
        if self.has_time and tval is None:
            raise PolyError("polynomial involves t but no tval supplied")
        acc = 0.0
        for m, c in self.terms.items():
            term = c
            for v, e in m.exps:
                base = tval if v == TIME else point[v - 1]
                for _ in range(e):
                    term *= base
            acc += term
        return acc

    def substitute_time(self, tval: float) -> "Polynomial":
        """Replace t by a constant; result involves only x1..xn."""
        out: dict = {}
        for m, c in self.terms.items():
            e = m.exponent(TIME)
            spatial = Monomial(tuple((v, x) for v, x in m.exps if v != TIME))
            out[spatial] = out.get(spatial, 0.0) + c * (tval ** e)
        return Polynomial(out, self.nvars)

    # -- display -----------------------------------------------------------------

    def sorted_monomials(self) -> list:
        """Graded-lex descending, the canonical print/report order."""
        return sorted(self.terms, key=lambda m: m.grlex_key(self.nvars), reverse=True)

    def to_text(self) -> str:
        if not self.terms:
            return "0"
        pieces = []
        for mono in self.sorted_monomials():
            coef = self.terms[mono]
            sign = "-" if coef < 0 else "+"
            mag = abs(coef)
            factors = []
            for v, e in sorted(mono.exps, key=lambda ve: (ve[0] == TIME, ve[0])):
                name = "t" if v == TIME else f"x{v}"
                factors.append(name if e == 1 else f"{name}^{e}")
            if not factors:
                body = repr(mag)
            elif mag == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([repr(mag)] + factors)
            pieces.append((sign, body))
        first_sign, first_body = pieces[0]
        text = ("-" if first_sign == "-" else "") + first_body
        for sign, body in pieces[1:]:
            text += f" {sign} {body}"
        return text

    __str__ = to_text

    def __repr__(self) -> str:
        return f"Polynomial({self.to_text()!r}, nvars={self.nvars})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Polynomial)
            and self.nvars == other.nvars
            and self.terms == other.terms
        )

    def __hash__(self) -> int:
        return hash((self.nvars, frozenset(self.terms.items())))


# -- parsing ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<var>t|x\d+)"
    r"|(?P<op>[-+*^()]))"
)


class _Parser:
    def __init__(self, text: str, nvars: Optional[int]):
        self.text = text
        self.fixed_nvars = nvars
        self.seen_max = 0
        self.tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                stripped = text[pos:].lstrip()
                at = len(text) - len(stripped)
                raise PolyError(f"syntax error at byte {at}: unexpected {stripped[:10]!r}")
            if m.lastgroup is not None:
                self.tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, msg: str):
        kind, val, at = self.peek()
        got = "end of input" if kind == "end" else repr(val)
        raise PolyError(f"syntax error at byte {at}: {msg}, got {got}")

    def var_index(self, name: str, at: int) -> int:
        if name == "t":
            return TIME
        idx = int(name[1:])
        if idx < 1:
            raise PolyError(f"unknown variable name {name!r} at byte {at}")
        if self.fixed_nvars is not None and idx > self.fixed_nvars:
            raise PolyError(
                f"unknown variable name {name!r} at byte {at} (nvars={self.fixed_nvars})"
            )
        self.seen_max = max(self.seen_max, idx)
        return idx

    # Working nvars during parsing: large enough for anything; shrunk at the end.
    WORK_NVARS = 64

    def parse_expr(self) -> Polynomial:
        sign = 1.0
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            sign = -1.0 if val == "-" else 1.0
        acc = self.parse_term().scale(sign)
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                nxt = self.parse_term()
                acc = acc + (nxt if val == "+" else -nxt)
            else:
                return acc

    def parse_term(self) -> Polynomial:
        acc = self.parse_factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.take()
                acc = acc * self.parse_factor()
            else:
                return acc

    def parse_factor(self) -> Polynomial:
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            inner = self.parse_factor()
            return -inner if val == "-" else inner
        base = self.parse_atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            kind, val, at = self.peek()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                self.fail("expected integer power after '^'")
            self.take()
            base = base.pow(int(val))
        return base

    def parse_atom(self) -> Polynomial:
        kind, val, at = self.take()
        if kind == "num":
            return Polynomial.constant(float(val), self.WORK_NVARS)
        if kind == "var":
            return Polynomial.variable(self.var_index(val, at), self.WORK_NVARS)
        if kind == "op" and val == "(":
            inner = self.parse_expr()
            kind, val, _ = self.peek()
            if not (kind == "op" and val == ")"):
                self.fail("expected ')'")
            self.take()
            return inner
        self.i -= 1
        self.fail("expected number, variable, or '('")


def parse(text: str, nvars: Optional[int] = None) -> Polynomial:
    """Parse the text grammar into a canonical Polynomial.

    When nvars is None it is inferred as the highest state-variable index present
    (0 for constants); otherwise variables beyond nvars are rejected.
    """
    p = _Parser(text, nvars)
    result = p.parse_expr()
    kind, val, at = p.peek()
    if kind != "end":
        p.fail("trailing input")
    final_nvars = p.fixed_nvars if p.fixed_nvars is not None else p.seen_max
    return Polynomial(result.terms, final_nvars)


# -- spec-shaped functional aliases -------------------------------------------


def evaluate(p: Polynomial, point: Sequence[float], tval: Optional[float] = None) -> float:
    return p.evaluate(point, tval)


def differentiate(p: Polynomial, var: int) -> Polynomial:
    return p.differentiate(var)


def arith(a: Polynomial, b, op: str) -> Polynomial:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "scale":
        return a.scale(float(b))
    raise PolyError(f"unknown op {op!r}")


def monomials_upto(nvars: int, degree: int, include_time: bool = False) -> list:
    """All monomials of total degree <= degree, graded-lex ascending.

    The deterministic basis used for templates, SOS Gram blocks, and free
    multipliers; t participates iff include_time.
    """
    vars_ = ([TIME] if include_time else []) + list(range(1, nvars + 1))
    level = [_ONE]
    out = [_ONE]
    for _ in range(degree):
        nxt = {}
        for m in level:
            for v in vars_:
                nxt[m.mul(Monomial(((v, 1),)))] = None
        level = list(nxt)
        out.extend(level)
    return sorted(set(out), key=lambda m: m.grlex_key(nvars))
