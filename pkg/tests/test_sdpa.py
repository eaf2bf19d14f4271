"""Tests for the SDPA sparse file exchange: writer, parser, solution reader."""

import os

import numpy as np
import pytest

from sdereach.poly import Polynomial, parse
from sdereach.sos import (
    EQ,
    INEQ,
    AffineScalar,
    LinearPolyExpr,
    SosConstraint,
    SosError,
    VarPool,
    assemble_instance,
    compile_constraint,
    parse_sdpa,
    parse_sdpa_solution,
    solve,
    write_sdpa,
)


def two_block_instance():
    """Two Gram blocks plus two free scalars, with a nonzero objective."""
    pool = VarPool()
    a = pool.fresh("a")
    b = pool.fresh("b")
    target = LinearPolyExpr.from_combination(
        [(AffineScalar.variable(a), parse("x1^2", nvars=1)),
         (AffineScalar.variable(b), Polynomial.constant(1.0, 1))], 1)
    con = SosConstraint("c", target, [(parse("1 - x1^2", nvars=1), INEQ)], [0])
    comp = compile_constraint(con, pool, eps=0.0)
    return assemble_instance([comp], pool, np.array([1.0, 2.0]))


def test_write_parse_round_trip_bytes(tmp_path):
    inst = two_block_instance()
    p1 = tmp_path / "a.dat-s"
    p2 = tmp_path / "b.dat-s"
    write_sdpa(inst, str(p1))
    back = parse_sdpa(str(p1))
    write_sdpa(back, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_parse_recovers_structure(tmp_path):
    inst = two_block_instance()
    path = tmp_path / "inst.dat-s"
    write_sdpa(inst, str(path))
    back = parse_sdpa(str(path))
    assert back.block_dims == inst.block_dims
    assert back.n_free == inst.n_free
    assert back.n_rows == inst.n_rows
    assert np.array_equal(back.rhs, inst.rhs)
    assert sorted(back.gram_entries) == sorted(inst.gram_entries)
    assert sorted(back.free_entries) == sorted(inst.free_entries)
    assert np.array_equal(back.objective, inst.objective)


def test_file_format_shape(tmp_path):
    # comment line, mDIM, nBLOCK, block sizes with negative diagonal block,
    # objective row, then 5-token entry lines with 1-indexed coordinates
    inst = two_block_instance()
    path = tmp_path / "inst.dat-s"
    write_sdpa(inst, str(path))
    lines = path.read_text().strip().split("\n")
    assert lines[0].startswith("*")
    assert int(lines[1]) == inst.n_rows
    assert int(lines[2]) == len(inst.block_dims) + 1
    sizes = [int(tok) for tok in lines[3].split()]
    assert sizes[:-1] == inst.block_dims
    assert sizes[-1] == -2 * inst.n_free
    assert len(lines[4].split()) == inst.n_rows
    for ln in lines[5:]:
        toks = ln.split()
        assert len(toks) == 5
        mat, blk, i, j = map(int, toks[:4])
        assert mat >= 0 and blk >= 1 and 1 <= i <= j
        float(toks[4])


def test_parser_rejects_malformed(tmp_path):
    path = tmp_path / "bad.dat-s"
    path.write_text("* c\n2\n1\n2\n1.0 2.0\n1 1 1\n")
    with pytest.raises(SosError, match="bad entry line"):
        parse_sdpa(str(path))

    path.write_text("* c\n1\n2\n2\n1.0\n")
    with pytest.raises(SosError, match="block count mismatch"):
        parse_sdpa(str(path))


def synthetic_out(instance, grams, diag, status="pdOPT"):
    """An SDPA output file in the standard xVec/xMat/yMat layout."""

    def fmt_dense(M):
        rows = ",".join("{" + ",".join(f"{v:+.16e}" for v in row) + "}" for row in M)
        return "{" + rows + " }"

    def fmt_diag(vals):
        return "{" + ",".join(f"{v:+.16e}" for v in vals) + "}"

    ymat_blocks = [fmt_dense(g) for g in grams]
    if instance.n_free:
        ymat_blocks.append(fmt_diag(diag))
    xvec = fmt_diag(np.zeros(instance.n_rows))
    xmat = "{" + "\n".join(ymat_blocks) + "\n}"
    ymat = "{" + "\n".join(ymat_blocks) + "\n}"
    return "\n".join([
        "SDPA start at ...",
        "   mu      thetaP  thetaD  objP      objD ...",
        f"phase.value  = {status}",
        "   Iteration = 10",
        "objValPrimal = +1.0000000000e+00",
        "objValDual   = +1.0000000000e+00",
        "xVec = ",
        xvec,
        "xMat = ",
        xmat,
        "yMat = ",
        ymat,
        "    main loop time = 0.000100",
    ])


def test_solution_parser_reads_ymat(tmp_path):
    inst = two_block_instance()
    grams = [np.array([[0.5, 0.0], [0.0, 0.25]]), np.array([[2.0]])]
    # free scalars a = 0.75, b = -0.5 as plus/minus diagonal pairs
    diag = [0.75, 0.0, 0.0, 0.5]
    out = tmp_path / "inst.out"
    out.write_text(synthetic_out(inst, grams, diag))
    sol = parse_sdpa_solution(str(out), inst)
    assert sol.status == "optimal"
    assert np.allclose(sol.grams[0], grams[0])
    assert np.allclose(sol.grams[1], grams[1])
    assert sol.u == pytest.approx([0.75, -0.5])
    assert sol.objective_value == pytest.approx(1.0 * 0.75 + 2.0 * (-0.5))


def test_solution_parser_maps_statuses(tmp_path):
    inst = two_block_instance()
    grams = [np.zeros((2, 2)), np.zeros((1, 1))]
    diag = [0.0, 0.0, 0.0, 0.0]
    for phase, expect in [("pdINF", "infeasible"), ("pUNBD", "infeasible"),
                          ("noINFO", "numerical_trouble"), ("dUNBD", "numerical_trouble")]:
        out = tmp_path / f"{phase}.out"
        out.write_text(synthetic_out(inst, grams, diag, status=phase))
        sol = parse_sdpa_solution(str(out), inst)
        assert sol.status == expect, phase


def test_file_exchange_without_binary_is_pending(tmp_path, monkeypatch):
    # no sdpa executable and no pre-existing solution: files written, pending
    monkeypatch.setenv("PATH", str(tmp_path))
    inst = two_block_instance()
    sol = solve(inst, backend="file_exchange", sdpa_dir=str(tmp_path / "xchg"),
                basename="case")
    assert sol.status == "pending_external"
    assert os.path.exists(tmp_path / "xchg" / "case.dat-s")


def test_file_exchange_parses_existing_solution(tmp_path, monkeypatch):
    # a solution file already in the exchange directory is picked up
    monkeypatch.setenv("PATH", str(tmp_path))
    inst = two_block_instance()
    xdir = tmp_path / "xchg"
    xdir.mkdir()
    grams = [np.array([[0.0, 0.0], [0.0, 1.0]]), np.array([[1.0]])]
    diag = [1.0, 0.0, 0.0, 1.0]  # a = 1, b = -1
    (xdir / "case.out").write_text(synthetic_out(inst, grams, diag))
    sol = solve(inst, backend="file_exchange", sdpa_dir=str(xdir), basename="case")
    assert sol.status == "optimal"
    assert sol.u == pytest.approx([1.0, -1.0])


def test_file_exchange_requires_directory():
    inst = two_block_instance()
    with pytest.raises(SosError, match="directory"):
        solve(inst, backend="file_exchange")


def test_equality_multiplier_round_trip(tmp_path):
    # instances with free polynomial multipliers (equality regions) also survive
    pool = VarPool()
    target = LinearPolyExpr.from_poly(parse("x1", nvars=1))
    con = SosConstraint("c", target, [(parse("x1 - 1", nvars=1), EQ)], None)
    comp = compile_constraint(con, pool, eps=0.0)
    inst = assemble_instance([comp], pool, np.zeros(0))
    assert inst.n_free > 0  # the lambda coefficients
    p1 = tmp_path / "a.dat-s"
    p2 = tmp_path / "b.dat-s"
    write_sdpa(inst, str(p1))
    write_sdpa(parse_sdpa(str(p1)), str(p2))
    assert p1.read_bytes() == p2.read_bytes()
