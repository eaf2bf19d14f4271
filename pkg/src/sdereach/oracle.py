"""Ground-truth oracles: Monte-Carlo path simulation and a 1-D PDE solver.

Both reachability probabilities are estimated by Euler-Maruyama simulation of
the stopped process, with Clopper-Pearson 95% intervals.  In one dimension the
characterizing backward PDE is solved by Crank-Nicolson on the relevant
interval, giving an independent second oracle.

Per-path noise comes from a counter-based Philox stream keyed by
(seed, path_index); the m-th step consumes draws [m*k, (m+1)*k) of that path's
stream.  This makes every path's outcome deterministic regardless of batch
splitting, worker count, or backend.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded
from scipy.stats import beta as beta_dist

from . import kernels
from .kernels import KIND_HORIZON, KIND_INSTANT, PackedPolys, pack_polys
from .model import ModelError, ReachQuery, SdeModel
from .poly import Polynomial


class OracleError(ValueError):
    """Raised for oracle misconfiguration (bad step, unsupported dimension, ...)."""


@dataclass(frozen=True)
class SimConfig:
    step_h: float
    n_paths: int
    seed: int
    boundary_tol: float = 0.0

    def __post_init__(self):
        if not (self.step_h > 0 and math.isfinite(self.step_h)):
            raise OracleError(f"step_h must be positive, got {self.step_h}")
        if self.n_paths < 1:
            raise OracleError("n_paths must be >= 1")
        if self.boundary_tol < 0:
            raise OracleError("boundary_tol must be >= 0")


@dataclass
class McEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    n_success: int
    n_paths: int
    n_excluded: int = 0
    warnings: List[str] = field(default_factory=list)


def clopper_pearson(k: int, n: int, conf: float = 0.95) -> Tuple[float, float]:
    """Exact binomial interval: closed forms at k in {0, n}, Beta quantiles otherwise."""
    if not (0 <= k <= n and n >= 1):
        raise OracleError(f"bad counts k={k}, n={n}")
    a = 1.0 - conf
    if k == 0:
        return 0.0, 1.0 - (a / 2.0) ** (1.0 / n)
    if k == n:
        return (a / 2.0) ** (1.0 / n), 1.0
    lo = float(beta_dist.ppf(a / 2.0, k, n - k + 1))
    hi = float(beta_dist.ppf(1.0 - a / 2.0, k + 1, n - k))
    return lo, hi


def _plan_steps(T: float, h: float) -> Tuple[int, float]:
    """Number of steps at size h with the last one truncated to land exactly on T."""
    msteps = max(1, int(math.ceil(T / h - 1e-9)))
    h_last = T - (msteps - 1) * h
    return msteps, h_last


def _noise_for_paths(seed: int, first_path: int, count: int, msteps: int, k: int) -> np.ndarray:
    """(count, msteps, k) standard normals; path p uses Philox key (seed, p)."""
    noise = np.empty((count, msteps, k), dtype=np.float64)
    useed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    for p in range(count):
        key = np.array([useed, np.uint64(first_path + p)], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        noise[p] = gen.standard_normal((msteps, k))
    return noise


def _pack(model: SdeModel, query: ReachQuery) -> PackedPolys:
    polys = list(model.drift)
    for row in model.diffusion:
        polys.extend(row)
    polys.append(query.domain.g)
    polys.append(query.target.g)
    return pack_polys(polys, model.n)


_NOISE_DOUBLES_BUDGET = 20_000_000


def estimate_probability(
    model: SdeModel,
    query: ReachQuery,
    cfg: SimConfig,
    backend: Optional[str] = None,
) -> McEstimate:
    """Aggregate n_paths simulated outcomes into a Clopper-Pearson 95% estimate."""
    if cfg.step_h > query.horizon_T:
        raise OracleError(f"step_h {cfg.step_h} exceeds horizon T {query.horizon_T}")
    msteps, h_last = _plan_steps(query.horizon_T, cfg.step_h)
    packed = _pack(model, query)
    kind = KIND_HORIZON if query.kind == "horizon" else KIND_INSTANT
    x0 = np.asarray(query.x0, dtype=np.float64)

    per_path = msteps * max(model.k, 1)
    batch = max(1, min(cfg.n_paths, _NOISE_DOUBLES_BUDGET // per_path))
    hits = 0
    excluded = 0
    for start in range(0, cfg.n_paths, batch):
        count = min(batch, cfg.n_paths - start)
        noise = _noise_for_paths(cfg.seed, start, count, msteps, model.k)
        out = kernels.simulate_outcomes(
            x0, packed, model.n, model.k, noise,
            cfg.step_h, h_last, cfg.boundary_tol, kind, backend,
        )
        hits += int(np.count_nonzero(out == kernels.OUT_HIT))
        excluded += int(np.count_nonzero(out == kernels.OUT_EXCLUDED))

    n_eff = cfg.n_paths - excluded
    if n_eff < 1:
        raise OracleError("all paths excluded (non-finite states)")
    lo, hi = clopper_pearson(hits, n_eff)
    est = McEstimate(
        p_hat=hits / n_eff,
        ci_low=lo,
        ci_high=hi,
        n_success=hits,
        n_paths=n_eff,
        n_excluded=excluded,
    )
    if excluded:
        est.warnings.append(
            f"{excluded} paths excluded after reaching a non-finite state"
        )
    return est


def simulate_path(model: SdeModel, query: ReachQuery, cfg: SimConfig, path_index: int) -> str:
    """Outcome of one path: 'hit' or 'miss' ('excluded' for the non-finite instant corner)."""
    if cfg.step_h > query.horizon_T:
        raise OracleError(f"step_h {cfg.step_h} exceeds horizon T {query.horizon_T}")
    msteps, h_last = _plan_steps(query.horizon_T, cfg.step_h)
    packed = _pack(model, query)
    kind = KIND_HORIZON if query.kind == "horizon" else KIND_INSTANT
    noise = _noise_for_paths(cfg.seed, path_index, 1, msteps, model.k)
    out = kernels.simulate_outcomes(
        np.asarray(query.x0, dtype=np.float64), packed, model.n, model.k,
        noise, cfg.step_h, h_last, cfg.boundary_tol, kind,
    )
    return {kernels.OUT_MISS: "miss", kernels.OUT_HIT: "hit",
            kernels.OUT_EXCLUDED: "excluded"}[int(out[0])]


@dataclass
class Trajectory:
    ts: np.ndarray       # (m+1,) times, starting at 0
    xs: np.ndarray       # (m+1, n) states
    stopped: np.ndarray  # (m+1,) 0 until the resolving step, 1 there
    outcome: str


def simulate_trajectory(
    model: SdeModel, query: ReachQuery, cfg: SimConfig, path_index: int
) -> Trajectory:
    """Single recorded path, mirroring the kernels' arithmetic exactly."""
    msteps, h_last = _plan_steps(query.horizon_T, cfg.step_h)
    packed = _pack(model, query)
    noise = _noise_for_paths(cfg.seed, path_index, 1, msteps, model.k)[0]
    n, k = model.n, model.k
    idx_gx = n + n * k
    idx_gs = idx_gx + 1
    btol = cfg.boundary_tol

    x = np.asarray(query.x0, dtype=np.float64).copy()
    ts = [0.0]
    states = [x.copy()]
    stopped = [0]
    outcome = "miss"
    t = 0.0
    for m in range(msteps):
        hm = cfg.step_h if m < msteps - 1 else h_last
        sqm = math.sqrt(cfg.step_h) if m < msteps - 1 else math.sqrt(h_last)
        bx = np.array([kernels.eval_packed(packed, i, x) for i in range(n)])
        sx = np.array(
            [[kernels.eval_packed(packed, n + i * k + l, x) for l in range(k)]
             for i in range(n)]
        ).reshape(n, k)
        xn = np.empty(n)
        for i in range(n):
            acc = x[i] + hm * bx[i]
            for l in range(k):
                z = sqm * noise[m, l]
                acc = acc + sx[i, l] * z
            xn[i] = acc
        x = xn
        t = t + hm
        ts.append(t)
        states.append(x.copy())
        finite = bool(np.isfinite(x).all())
        done = False
        if query.kind == "horizon":
            if not finite:
                outcome, done = "miss", True
            else:
                gs = kernels.eval_packed(packed, idx_gs, x)
                gx = kernels.eval_packed(packed, idx_gx, x)
                if gs >= -btol:
                    outcome, done = "hit", True
                elif gx <= btol:
                    outcome, done = "miss", True
        else:
            if not finite:
                outcome, done = "excluded", True
            elif m < msteps - 1:
                gx = kernels.eval_packed(packed, idx_gx, x)
                if gx <= btol:
                    outcome, done = "miss", True
            else:
                gs = kernels.eval_packed(packed, idx_gs, x)
                outcome = "hit" if gs >= -btol else "miss"
                done = True
        stopped.append(1 if done else 0)
        if done:
            break
    return Trajectory(
        ts=np.asarray(ts), xs=np.vstack(states), stopped=np.asarray(stopped),
        outcome=outcome,
    )


def dump_trajectory_csv(
    model: SdeModel, query: ReachQuery, cfg: SimConfig, path_index: int, path: str
) -> Trajectory:
    """Write one path as CSV with columns t, x1..xn, stopped_flag."""
    traj = simulate_trajectory(model, query, cfg, path_index)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i}" for i in range(1, model.n + 1)] + ["stopped_flag"])
        for t, row, flag in zip(traj.ts, traj.xs, traj.stopped):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [int(flag)])
    return traj


# -- 1-D finite-difference oracle ------------------------------------------------


def _dense_coeffs_1d(p: Polynomial) -> np.ndarray:
    """Coefficients highest-degree-first for np.roots; p must be univariate in x1."""
    if p.has_time or p.nvars != 1:
        raise OracleError("root finding needs a univariate polynomial in x1")
    deg = p.degree
    c = np.zeros(deg + 1)
    for mono, coef in p.terms.items():
        c[deg - mono.exponent(1)] += coef
    return c


def _real_roots(p: Polynomial) -> np.ndarray:
    c = _dense_coeffs_1d(p)
    nz = np.nonzero(c)[0]
    if len(nz) == 0:
        return np.array([])
    c = c[nz[0]:]
    if len(c) <= 1:
        return np.array([])
    roots = np.roots(c)
    real = roots[np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots))].real
    return np.sort(np.unique(np.round(real, 12)))


def _sigma_sq_1d(model: SdeModel) -> Polynomial:
    acc = Polynomial.zero(1)
    for sig in model.diffusion[0]:
        acc = acc + sig * sig
    return acc


def fd_solve_1d(
    model: SdeModel,
    query: ReachQuery,
    grid: int = 2001,
    steps: int = 2000,
    rannacher: int = 2,
) -> float:
    """Crank-Nicolson value of the reach probability at x0 (1-D models only).

    Solves the backward equation u_tau = b u_x + (1/2) sigma^2 u_xx forward in
    tau = T - t on the interval that matters: the component of X \\ Xs containing
    x0 for horizon queries (Dirichlet 1 on the target side, 0 on the domain
    side), or X itself for instant queries (Dirichlet 0, terminal indicator of
    Xs).  The advection term switches to first-order upwinding at nodes where
    the cell Peclet number exceeds 2, keeping the scheme monotone when
    diffusion degenerates; the first `rannacher` steps run as implicit-Euler
    half-steps to damp ringing from the discontinuous terminal data.
    """
    if model.n != 1:
        raise OracleError("fd_solve_1d supports 1-D models only")
    if grid < 3:
        raise OracleError("grid must have at least 3 nodes")
    if steps < 1:
        raise OracleError("steps must be >= 1")

    x0 = float(query.x0[0])
    gx_roots = _real_roots(query.domain.g)
    left_candidates = gx_roots[gx_roots < x0]
    right_candidates = gx_roots[gx_roots > x0]
    if len(left_candidates) == 0 or len(right_candidates) == 0:
        raise OracleError("domain interval around x0 not found (X must be bounded)")
    a, b = float(left_candidates.max()), float(right_candidates.min())

    if query.kind == "horizon":
        gs_roots = _real_roots(query.target.g)
        inner = gs_roots[(gs_roots > a + 1e-12) & (gs_roots < b - 1e-12)]
        lo_c = inner[inner < x0]
        hi_c = inner[inner > x0]
        lo = float(lo_c.max()) if len(lo_c) else a
        hi = float(hi_c.min()) if len(hi_c) else b
        u_left = 1.0 if len(lo_c) else 0.0
        u_right = 1.0 if len(hi_c) else 0.0
        terminal_indicator = False
    else:
        lo, hi = a, b
        u_left = u_right = 0.0
        terminal_indicator = True

    xs = np.linspace(lo, hi, grid)
    dx = xs[1] - xs[0]
    drift = np.array([model.drift[0].evaluate([float(v)]) for v in xs])
    sig2 = _sigma_sq_1d(model)
    diff = 0.5 * np.array([sig2.evaluate([float(v)]) for v in xs])

    # spatial operator rows (sub, diag, sup); upwind where advection dominates
    sub = np.zeros(grid)
    dia = np.zeros(grid)
    sup = np.zeros(grid)
    for i in range(1, grid - 1):
        a_i, b_i = diff[i], drift[i]
        if a_i >= abs(b_i) * dx / 2.0:
            sub[i] = a_i / dx**2 - b_i / (2 * dx)
            dia[i] = -2 * a_i / dx**2
            sup[i] = a_i / dx**2 + b_i / (2 * dx)
        elif b_i > 0:
            sub[i] = a_i / dx**2
            dia[i] = -2 * a_i / dx**2 - b_i / dx
            sup[i] = a_i / dx**2 + b_i / dx
        else:
            sub[i] = a_i / dx**2 - b_i / dx
            dia[i] = -2 * a_i / dx**2 + b_i / dx
            sup[i] = a_i / dx**2

    if terminal_indicator:
        u = np.array(
            [1.0 if query.target.g.evaluate([float(v)]) >= 0 else 0.0 for v in xs]
        )
    else:
        u = np.zeros(grid)
    u[0], u[-1] = u_left, u_right

    def banded_matrix(theta_dt):
        """ab array for (I - theta_dt * A) with identity boundary rows."""
        ab = np.zeros((3, grid))
        ab[0, 1:] = -theta_dt * sup[:-1]
        ab[1, :] = 1.0 - theta_dt * dia
        ab[2, :-1] = -theta_dt * sub[1:]
        ab[1, 0] = ab[1, -1] = 1.0
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0
        return ab

    def explicit_apply(theta_dt, v):
        """(I + theta_dt * A) v with boundary rows passed through."""
        out = v.copy()
        out[1:-1] = (
            v[1:-1] * (1.0 + theta_dt * dia[1:-1])
            + v[2:] * (theta_dt * sup[1:-1])
            + v[:-2] * (theta_dt * sub[1:-1])
        )
        out[0], out[-1] = u_left, u_right
        return out

    dtau = query.horizon_T / steps
    n_rann = min(rannacher, steps)
    ab_half = banded_matrix(dtau / 2.0)
    for _ in range(n_rann):
        for _ in range(2):  # two implicit-Euler half steps per nominal step
            rhs = u.copy()
            rhs[0], rhs[-1] = u_left, u_right
            u = solve_banded((1, 1), ab_half, rhs)
    ab_cn = banded_matrix(dtau / 2.0)
    for _ in range(steps - n_rann):
        rhs = explicit_apply(dtau / 2.0, u)
        u = solve_banded((1, 1), ab_cn, rhs)

    return float(np.interp(x0, xs, u))
