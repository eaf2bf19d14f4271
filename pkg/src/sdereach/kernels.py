"""Euler-Maruyama stepping kernels with two interchangeable backends.

* a numba-compiled per-path loop (fast path, used when numba imports), and
* a vectorized pure-numpy fallback,

selected by ``active_backend()``; setting the environment variable
``SDEREACH_FORCE_NUMPY=1`` forces the fallback.  Both backends consume the same
precomputed noise array and perform the per-element floating-point operations
in the same order — term-by-term polynomial evaluation with integer powers as
repeated multiplication, drift accumulated before diffusion — so path outcomes
are bit-for-bit identical across backends.  The test suite asserts this and
``benchmarks/kernel_bench.py`` times the difference.

Dynamics and set polynomials are packed into flat (coefficients, exponents,
offsets) arrays in a fixed order: drift rows b_1..b_n, diffusion entries in row
major order, then g_X, then g_S.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .poly import Polynomial

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without the extra
    numba = None

KIND_HORIZON = 0
KIND_INSTANT = 1

OUT_MISS = 0
OUT_HIT = 1
OUT_EXCLUDED = 2


def active_backend() -> str:
    if os.environ.get("SDEREACH_FORCE_NUMPY", "") == "1" or numba is None:
        return "numpy"
    return "numba"


@dataclass(frozen=True)
class PackedPolys:
    """Flat packing of several polynomials over x1..xn (no t) for the kernels."""

    coefs: np.ndarray    # (nterms,) float64
    exps: np.ndarray     # (nterms, nvars) int64
    offsets: np.ndarray  # (npolys + 1,) int64
    nvars: int

    @property
    def npolys(self) -> int:
        return len(self.offsets) - 1


def pack_polys(polys: Sequence[Polynomial], nvars: int) -> PackedPolys:
    coefs = []
    exps = []
    offsets = [0]
    for p in polys:
        if p.has_time:
            raise ValueError("kernel polynomials must be time-independent")
        if p.nvars != nvars:
            raise ValueError(f"polynomial over {p.nvars} vars, expected {nvars}")
        for mono in p.sorted_monomials():
            coefs.append(p.terms[mono])
            exps.append([mono.exponent(v) for v in range(1, nvars + 1)])
        offsets.append(len(coefs))
    return PackedPolys(
        coefs=np.asarray(coefs, dtype=np.float64),
        exps=np.asarray(exps, dtype=np.int64).reshape(len(coefs), nvars),
        offsets=np.asarray(offsets, dtype=np.int64),
        nvars=nvars,
    )


def _eval_poly_scalar(coefs, exps, offsets, idx, x, nvars):
    """One packed polynomial at one point; the reference op order."""
    acc = 0.0
    for jt in range(offsets[idx], offsets[idx + 1]):
        term = coefs[jt]
        for v in range(nvars):
            e = exps[jt, v]
            for _ in range(e):
                term = term * x[v]
        acc = acc + term
    return acc


def _eval_poly_batch(coefs, exps, offsets, idx, X, nvars):
    """Same computation vectorized over the path axis, same per-element order."""
    P = X.shape[0]
    acc = np.zeros(P)
    for jt in range(offsets[idx], offsets[idx + 1]):
        term = np.full(P, coefs[jt])
        for v in range(nvars):
            e = exps[jt, v]
            for _ in range(e):
                term = term * X[:, v]
        acc = acc + term
    return acc


def _simulate_loop(x0, coefs, exps, offsets, n, k, noise, h, h_last, btol, kind, out):
    """Per-path Euler-Maruyama with boundary monitoring (numba-compiled when available).

    Outcomes: 0 miss, 1 hit, 2 excluded (non-finite state on an instant query).
    Horizon kind checks each post-step state: target first (g_S >= -btol -> hit),
    then domain exit (g_X <= btol -> miss); surviving to the final time is a miss.
    Instant kind: domain exit before the final step is a miss, and the final
    state decides hit via g_S; non-finite states count as miss (conservative for
    upper-bound validation) on horizon queries and are excluded on instant ones.
    """
    P = noise.shape[0]
    msteps = noise.shape[1]
    sqh = math.sqrt(h)
    sq_last = math.sqrt(h_last)
    idx_gx = n + n * k
    idx_gs = idx_gx + 1
    x = np.empty(n)
    xn = np.empty(n)
    bx = np.empty(n)
    sx = np.empty((n, k))
    for p in range(P):
        for i in range(n):
            x[i] = x0[i]
        res = 0
        for m in range(msteps):
            if m < msteps - 1:
                hm = h
                sqm = sqh
            else:
                hm = h_last
                sqm = sq_last
            for i in range(n):
                bx[i] = _eval_poly_scalar(coefs, exps, offsets, i, x, n)
            for i in range(n):
                for l in range(k):
                    sx[i, l] = _eval_poly_scalar(coefs, exps, offsets, n + i * k + l, x, n)
            for i in range(n):
                acc = x[i] + hm * bx[i]
                for l in range(k):
                    z = sqm * noise[p, m, l]
                    acc = acc + sx[i, l] * z
                xn[i] = acc
            for i in range(n):
                x[i] = xn[i]
            finite = True
            for i in range(n):
                if not math.isfinite(x[i]):
                    finite = False
            if kind == 0:
                if not finite:
                    res = 0
                    break
                gs = _eval_poly_scalar(coefs, exps, offsets, idx_gs, x, n)
                if gs >= -btol:
                    res = 1
                    break
                gx = _eval_poly_scalar(coefs, exps, offsets, idx_gx, x, n)
                if gx <= btol:
                    res = 0
                    break
            else:
                if not finite:
                    res = 2
                    break
                if m < msteps - 1:
                    gx = _eval_poly_scalar(coefs, exps, offsets, idx_gx, x, n)
                    if gx <= btol:
                        res = 0
                        break
                else:
                    gs = _eval_poly_scalar(coefs, exps, offsets, idx_gs, x, n)
                    if gs >= -btol:
                        res = 1
                    else:
                        res = 0
        out[p] = res


if numba is not None:
    _eval_poly_scalar = numba.njit(cache=True)(_eval_poly_scalar)
    _simulate_loop_nb = numba.njit(cache=True)(_simulate_loop)
else:  # pragma: no cover - exercised only without the extra
    _simulate_loop_nb = None


def _simulate_batch_numpy(x0, coefs, exps, offsets, n, k, noise, h, h_last, btol, kind):
    """Vectorized twin of _simulate_loop; identical per-element op order.

    Paths keep stepping after resolution (their outcome is frozen), so overflow
    in already-resolved paths is silenced rather than avoided.
    """
    P = noise.shape[0]
    msteps = noise.shape[1]
    sqh = math.sqrt(h)
    sq_last = math.sqrt(h_last)
    idx_gx = n + n * k
    idx_gs = idx_gx + 1
    X = np.repeat(np.asarray(x0, dtype=np.float64)[None, :], P, axis=0)
    out = np.zeros(P, dtype=np.int8)
    resolved = np.zeros(P, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(msteps):
            if m < msteps - 1:
                hm, sqm = h, sqh
            else:
                hm, sqm = h_last, sq_last
            BX = np.empty((P, n))
            for i in range(n):
                BX[:, i] = _eval_poly_batch(coefs, exps, offsets, i, X, n)
            SX = np.empty((P, n, k))
            for i in range(n):
                for l in range(k):
                    SX[:, i, l] = _eval_poly_batch(
                        coefs, exps, offsets, n + i * k + l, X, n
                    )
            XN = np.empty_like(X)
            for i in range(n):
                acc = X[:, i] + hm * BX[:, i]
                for l in range(k):
                    z = sqm * noise[:, m, l]
                    acc = acc + SX[:, i, l] * z
                XN[:, i] = acc
            X = XN
            finite = np.isfinite(X).all(axis=1)
            act = ~resolved
            if kind == 0:
                gs = _eval_poly_batch(coefs, exps, offsets, idx_gs, X, n)
                gx = _eval_poly_batch(coefs, exps, offsets, idx_gx, X, n)
                overflow = act & ~finite
                hit = act & finite & (gs >= -btol)
                miss = act & finite & ~(gs >= -btol) & (gx <= btol)
                out[hit] = 1
                resolved = resolved | overflow | hit | miss
            else:
                overflow = act & ~finite
                out[overflow] = 2
                if m < msteps - 1:
                    gx = _eval_poly_batch(coefs, exps, offsets, idx_gx, X, n)
                    miss = act & finite & (gx <= btol)
                    resolved = resolved | overflow | miss
                else:
                    gs = _eval_poly_batch(coefs, exps, offsets, idx_gs, X, n)
                    hit = act & finite & (gs >= -btol)
                    out[hit] = 1
                    resolved = resolved | act
            if resolved.all():
                break
    return out


def simulate_outcomes(
    x0: np.ndarray,
    packed: PackedPolys,
    n: int,
    k: int,
    noise: np.ndarray,
    h: float,
    h_last: float,
    boundary_tol: float,
    kind: int,
    backend: Optional[str] = None,
) -> np.ndarray:
    """Run one batch of paths through the selected backend; int8 outcomes per path."""
    if backend is None:
        backend = active_backend()
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    if backend == "numba":
        if _simulate_loop_nb is None:
            raise RuntimeError("numba backend requested but numba is not installed")
        out = np.zeros(noise.shape[0], dtype=np.int8)
        _simulate_loop_nb(
            x0, packed.coefs, packed.exps, packed.offsets,
            n, k, noise, h, h_last, boundary_tol, kind, out,
        )
        return out
    if backend == "numpy":
        return _simulate_batch_numpy(
            x0, packed.coefs, packed.exps, packed.offsets,
            n, k, noise, h, h_last, boundary_tol, kind,
        )
    raise ValueError(f"unknown backend {backend!r}")


def eval_packed(packed: PackedPolys, idx: int, x: Sequence[float]) -> float:
    """Scalar packed evaluation (the kernels' reference op order), for mirrors/tests."""
    return float(
        _eval_poly_scalar(
            packed.coefs, packed.exps, packed.offsets, idx,
            np.asarray(x, dtype=np.float64), packed.nvars,
        )
    )
