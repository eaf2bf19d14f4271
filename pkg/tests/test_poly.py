import numpy as np
import pytest

from sdereach.poly import (
    TIME,
    Monomial,
    PolyError,
    Polynomial,
    monomials_upto,
    parse,
)


def test_parse_basic():
    p = parse("1 - 2*x1^2")
    assert p.nvars == 1
    assert p.evaluate([0.0]) == 1.0
    assert p.evaluate([2.0]) == -7.0
    assert p.degree == 2


def test_parse_merges_like_terms():
    p = parse("x1*x2 + x2*x1")
    q = parse("2*x1*x2")
    assert p == q


def test_parse_cancellation_to_constant():
    p = parse("(x1+1)^2 - x1^2 - 2*x1")
    assert p == Polynomial.constant(1.0, 1)
    assert p.degree == 0


def test_parse_time_variable():
    p = parse("t^2 + x1")
    assert p.has_time
    assert p.nvars == 1
    assert p.evaluate([3.0], tval=2.0) == 7.0


def test_parse_scientific_and_unary():
    assert parse("2.5e-1*x1").evaluate([4.0]) == 1.0
    assert parse("-x1^2").evaluate([3.0]) == -9.0
    assert parse("+x1 - -1").evaluate([1.0]) == 2.0


def test_parse_nvars_override():
    p = parse("x1", nvars=3)
    assert p.nvars == 3
    with pytest.raises(PolyError, match="unknown variable"):
        parse("x4", nvars=3)


def test_parse_syntax_errors_report_byte_offset():
    with pytest.raises(PolyError, match="byte 5"):
        parse("x1 + @")
    with pytest.raises(PolyError, match="byte"):
        parse("x1 +")
    with pytest.raises(PolyError):
        parse("(x1")
    with pytest.raises(PolyError):
        parse("x1^-1")
    with pytest.raises(PolyError):
        parse("x1 x2")


def test_zero_polynomial():
    z = parse("x1 - x1")
    assert z.is_zero()
    assert z.to_text() == "0"
    assert parse("0") == z.with_nvars(0)
    assert z.degree == 0


def test_dimension_mismatch():
    with pytest.raises(PolyError, match="dimension mismatch"):
        parse("x1") + parse("x2")
    # explicit embedding fixes it
    s = parse("x1", nvars=2) + parse("x2")
    assert s.evaluate([1.0, 2.0]) == 3.0


def test_evaluate_time_handling():
    p = parse("t + x1")
    with pytest.raises(PolyError, match="involves t"):
        p.evaluate([1.0])
    q = parse("x1")
    # tval is ignored for time-free polynomials
    assert q.evaluate([5.0], tval=123.0) == 5.0


def test_differentiate():
    p = parse("x1^3 + 2*t*x1")
    assert p.differentiate(1) == parse("3*x1^2 + 2*t")
    assert p.differentiate(TIME) == parse("2*x1")
    assert parse("x1", nvars=2).differentiate(2).is_zero()
    with pytest.raises(PolyError):
        parse("x1").differentiate(2)


def test_substitute_time():
    p = parse("t^2*x1 + t + x1^2")
    q = p.substitute_time(2.0)
    assert not q.has_time
    assert q == parse("4*x1 + x1^2 + 2")


def test_pow_and_products():
    p = parse("x1 + 1")
    assert p.pow(0) == Polynomial.constant(1.0, 1)
    assert p.pow(2) == parse("x1^2 + 2*x1 + 1")
    assert (parse("x1") * 3.0) == parse("3*x1")
    assert (2 + parse("x1")) == parse("x1 + 2")


def test_print_round_trip_random():
    rng = np.random.default_rng(20260816)
    basis = monomials_upto(3, 4, include_time=True)
    for _ in range(50):
        picks = rng.choice(len(basis), size=6, replace=False)
        terms = {basis[i]: float(np.round(rng.normal(), 6)) for i in picks}
        p = Polynomial(terms, 3)
        assert parse(p.to_text(), nvars=3) == p


def test_print_is_graded_lex_descending():
    p = parse("x1 + x2^2 + 1 + x1*x2")
    assert p.to_text() == "x1*x2 + x2^2 + x1 + 1.0"
    assert parse("-x1 + 2").to_text() == "-x1 + 2.0"


def test_monomials_upto_counts():
    # C(n + d, d) monomials of degree <= d in n variables
    assert len(monomials_upto(2, 2)) == 6
    assert len(monomials_upto(2, 2, include_time=True)) == 10
    names = [Polynomial({m: 1.0}, 2).to_text() for m in monomials_upto(2, 1)]
    assert names == ["1.0", "x2", "x1"]


def test_monomial_structure():
    m = Monomial(((1, 2), (TIME, 1)))
    assert m.degree == 3
    assert m.exponent(1) == 2 and m.exponent(2) == 0
    assert m.has_time()
    assert Monomial(((1, 0),)) == Monomial()
    with pytest.raises(PolyError):
        Monomial(((1, -1),))
