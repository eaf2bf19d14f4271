import csv
import math

import numpy as np
import pytest

from sdereach.model import ReachQuery, SdeModel, SemialgebraicSet
from sdereach.oracle import (
    OracleError,
    SimConfig,
    clopper_pearson,
    dump_trajectory_csv,
    estimate_probability,
    fd_solve_1d,
    simulate_path,
    simulate_trajectory,
)
from sdereach.poly import parse


def make_query(gx, gs, x0, T, kind, box, n=1):
    return ReachQuery(
        domain=SemialgebraicSet(parse(gx, nvars=n), "open"),
        target=SemialgebraicSet(parse(gs, nvars=n), "closed"),
        horizon_T=T,
        x0=tuple(x0),
        kind=kind,
        bounding_box=tuple(box),
    )


BROWNIAN = SdeModel.from_strings(1, 1, ["0"], [["1"]])
OU = SdeModel.from_strings(1, 1, ["-x1"], [["1"]])

# X = (-2, 1) via g_X = (x1+2)(1-x1), target [0.9, 1), unit-noise Brownian motion
def brownian_query(T=1.0, kind="horizon"):
    return make_query("2 - x1 - x1^2", "x1 - 0.9", [0.0], T, kind, [(-2.0, 1.0)])


# Crank-Nicolson reference for the Brownian query, grid 2001 / steps 2000;
# cross-checked against the absorbing-interval eigenfunction series (0.3681193).
FD_BROWNIAN_HORIZON = 0.3681193
# OU with X = (-2,2), target [1.5, 2), instant kind (grid-doubling agreement 2e-5)
FD_OU_INSTANT = 0.0075522


def test_simulate_path_deterministic_transport_hit():
    model = SdeModel.from_strings(1, 1, ["1"], [["0"]])
    q = make_query("4 - x1^2", "x1 - 1", [0.0], 2.0, "horizon", [(-2, 2)])
    cfg = SimConfig(step_h=1e-3, n_paths=1, seed=1)
    assert simulate_path(model, q, cfg, 0) == "hit"


def test_simulate_path_stationary_miss():
    model = SdeModel.from_strings(1, 1, ["0"], [["0"]])
    q = make_query("4 - x1^2", "x1 - 1", [0.0], 2.0, "horizon", [(-2, 2)])
    assert simulate_path(model, q, SimConfig(1e-3, 1, 1), 0) == "miss"


def test_simulate_path_exponential_decay_instant_hit():
    # x' = -x from 1: x(3) = e^-3 ~ 0.0498, inside {x1 <= 0.1}
    model = SdeModel.from_strings(1, 1, ["-x1"], [["0"]])
    q = make_query("4 - x1^2", "0.1 - x1", [1.0], 3.0, "instant", [(-2, 2)])
    assert simulate_path(model, q, SimConfig(1e-3, 1, 7), 0) == "hit"
    traj = simulate_trajectory(model, q, SimConfig(1e-3, 1, 7), 0)
    assert traj.xs[-1, 0] == pytest.approx(math.exp(-3), abs=5e-3)


def test_clopper_pearson_closed_forms():
    lo, hi = clopper_pearson(0, 100)
    assert lo == 0.0
    assert hi == pytest.approx(1.0 - 0.025 ** (1 / 100), abs=1e-12)
    assert hi == pytest.approx(0.036217, abs=1e-5)
    lo, hi = clopper_pearson(1000, 1000)
    assert hi == 1.0
    assert lo == pytest.approx(0.025 ** (1 / 1000), abs=1e-12)
    assert lo == pytest.approx(0.996318, abs=1e-5)


def test_clopper_pearson_interior_brackets_p_hat():
    for k, n in [(5, 10), (1, 50), (49, 50), (250, 1000)]:
        lo, hi = clopper_pearson(k, n)
        assert 0.0 <= lo <= k / n <= hi <= 1.0
    with pytest.raises(OracleError):
        clopper_pearson(5, 4)


def test_estimate_deterministic_hit_full_counts():
    model = SdeModel.from_strings(1, 1, ["1"], [["0"]])
    q = make_query("4 - x1^2", "x1 - 1", [0.0], 2.0, "horizon", [(-2, 2)])
    est = estimate_probability(model, q, SimConfig(1e-2, 1000, 3))
    assert est.p_hat == 1.0 and est.n_success == 1000
    assert est.ci_low == pytest.approx(0.99632, abs=1e-5)
    assert est.ci_high == 1.0


def test_estimate_seed_determinism():
    cfg = SimConfig(step_h=0.01, n_paths=3000, seed=42)
    e1 = estimate_probability(BROWNIAN, brownian_query(), cfg)
    e2 = estimate_probability(BROWNIAN, brownian_query(), cfg)
    assert (e1.n_success, e1.p_hat, e1.ci_low, e1.ci_high) == \
           (e2.n_success, e2.p_hat, e2.ci_low, e2.ci_high)


def test_estimate_monotone_in_horizon_common_seed():
    # identical per-path noise across T values (T exact multiples of h), so
    # hitting by T1 implies hitting by T2 path by path: exact monotonicity
    ps = []
    for T in (0.25, 0.5, 1.0):
        est = estimate_probability(BROWNIAN, brownian_query(T=T), SimConfig(0.01, 20000, 5))
        ps.append(est.p_hat)
    assert ps[0] <= ps[1] <= ps[2]
    assert ps[2] > ps[0]  # and the spread is real


def test_step_refinement_trend():
    # |p(h) - p(h/2)| shrinks as h halves, within CI noise
    ps, ws = [], []
    for h in (0.1, 0.05, 0.025, 0.0125):
        est = estimate_probability(BROWNIAN, brownian_query(), SimConfig(h, 100000, 11))
        ps.append(est.p_hat)
        ws.append(est.ci_high - est.ci_low)
    d1, d2, d3 = abs(ps[0] - ps[1]), abs(ps[1] - ps[2]), abs(ps[2] - ps[3])
    w = max(ws)
    assert d1 + w >= d2
    assert d2 + w >= d3
    assert d1 > d3  # overall shrink across two halvings


def test_horizon_at_least_instant():
    cfg = SimConfig(1e-3, 20000, 2026)
    q_h = make_query("4 - x1^2", "x1 - 1.5", [0.0], 1.0, "horizon", [(-2, 2)])
    q_i = make_query("4 - x1^2", "x1 - 1.5", [0.0], 1.0, "instant", [(-2, 2)])
    eh = estimate_probability(OU, q_h, cfg)
    ei = estimate_probability(OU, q_i, cfg)
    combined = (eh.ci_high - eh.ci_low) + (ei.ci_high - ei.ci_low)
    assert eh.p_hat >= ei.p_hat - 3 * combined


def test_fd_transport_reaches_one():
    model = SdeModel.from_strings(1, 1, ["1"], [["0"]])
    q = make_query("4 - x1^2", "x1 - 1", [0.0], 2.0, "horizon", [(-2, 2)])
    assert fd_solve_1d(model, q) == pytest.approx(1.0, abs=1e-3)


def test_fd_frozen_dynamics_returns_indicator():
    model = SdeModel.from_strings(1, 1, ["0"], [["0"]])
    q = make_query("4 - x1^2", "x1 - 1", [0.0], 2.0, "horizon", [(-2, 2)])
    assert fd_solve_1d(model, q) == 0.0


def test_fd_brownian_reference_and_grid_doubling():
    q = brownian_query()
    v1 = fd_solve_1d(BROWNIAN, q, grid=2001, steps=2000)
    v2 = fd_solve_1d(BROWNIAN, q, grid=4001, steps=4000)
    assert v1 == pytest.approx(FD_BROWNIAN_HORIZON, abs=2e-4)
    assert abs(v1 - v2) <= 1e-3


def test_fd_ou_instant_reference():
    q = make_query("4 - x1^2", "x1 - 1.5", [0.0], 1.0, "instant", [(-2, 2)])
    v = fd_solve_1d(OU, q, grid=2001, steps=2000)
    assert v == pytest.approx(FD_OU_INSTANT, abs=2e-4)


def test_mc_agrees_with_fd_within_3_sigma():
    est = estimate_probability(BROWNIAN, brownian_query(), SimConfig(2e-4, 20000, 2026))
    sigma = (est.ci_high - est.ci_low) / (2 * 1.96)
    assert abs(est.p_hat - FD_BROWNIAN_HORIZON) <= 3 * sigma


def test_mc_agrees_with_fd_instant_kind():
    q = make_query("4 - x1^2", "x1 - 1.5", [0.0], 1.0, "instant", [(-2, 2)])
    est = estimate_probability(OU, q, SimConfig(1e-3, 20000, 2026))
    assert est.ci_low - 1e-3 <= FD_OU_INSTANT <= est.ci_high + 1e-3


def test_trajectory_mirrors_kernel_outcomes():
    cfg = SimConfig(0.02, 1, 13)
    for kind in ("horizon", "instant"):
        q = make_query("4 - x1^2", "x1 - 1.5", [0.0], 1.0, kind, [(-2, 2)])
        for path in range(25):
            kernel_outcome = simulate_path(OU, q, cfg, path)
            traj = simulate_trajectory(OU, q, cfg, path)
            assert traj.outcome == kernel_outcome
            assert traj.stopped[-1] in (0, 1)
            assert len(traj.ts) == len(traj.xs) == len(traj.stopped)


def test_trajectory_csv_dump(tmp_path):
    out = tmp_path / "path.csv"
    traj = dump_trajectory_csv(OU, brownian_query(), SimConfig(0.05, 1, 9), 4, str(out))
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1", "stopped_flag"]
    assert len(rows) == len(traj.ts) + 1
    assert rows[1][0] == "0.0"
    flags = [int(r[2]) for r in rows[1:]]
    assert set(flags) <= {0, 1}
    assert sum(flags) <= 1  # at most the resolving row


def test_config_and_dimension_errors():
    with pytest.raises(OracleError):
        SimConfig(step_h=-1.0, n_paths=10, seed=0)
    with pytest.raises(OracleError):
        SimConfig(step_h=0.1, n_paths=0, seed=0)
    with pytest.raises(OracleError, match="exceeds horizon"):
        estimate_probability(BROWNIAN, brownian_query(T=0.5), SimConfig(1.0, 10, 0))
    model2 = SdeModel.from_strings(2, 1, ["x2", "-x1"], [["1"], ["0"]])
    q2 = make_query("1 - x1^2 - x2^2", "x1 - 0.8", [0.0, 0.0], 1.0, "horizon",
                    [(-1, 1), (-1, 1)], n=2)
    with pytest.raises(OracleError, match="1-D"):
        fd_solve_1d(model2, q2)
    with pytest.raises(OracleError, match="grid"):
        fd_solve_1d(BROWNIAN, brownian_query(), grid=2)
