"""System description: polynomial SDE dynamics, semialgebraic sets, reach queries.

The working domain X = {g_X > 0} is an open bounded set, the target
Xs = {g_S >= 0} is closed with Xs ⊆ X (the user's obligation, spot-checked by
sampling here).  A query asks for the probability of reaching Xs from x0 while
staying in X, either at some time within [0, T] or exactly at time T.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .poly import Polynomial, PolyError, parse


class ModelError(ValueError):
    """Raised for malformed models, queries, or standing-assumption violations."""


@dataclass(frozen=True)
class SemialgebraicSet:
    """{g > 0} (sense 'open') or {g >= 0} (sense 'closed'); boundary is {g = 0}."""

    g: Polynomial
    sense: str  # "open" | "closed"

    def __post_init__(self):
        if self.sense not in ("open", "closed"):
            raise ModelError(f"sense must be 'open' or 'closed', got {self.sense!r}")
        if self.g.has_time:
            raise ModelError("set definitions must not involve t")


def membership(s: SemialgebraicSet, point: Sequence[float], tol_b: float = 1e-9) -> str:
    """Classify a point by the sign of g with a tolerance band around {g = 0}."""
    val = s.g.evaluate(list(point))
    if abs(val) <= tol_b:
        return "boundary_tolerant"
    return "inside" if val > 0.0 else "outside"


@dataclass(frozen=True)
class SdeModel:
    """Autonomous polynomial SDE dx = b(x) dt + sigma(x) dW in n states, k noises."""

    n: int
    k: int
    drift: Tuple[Polynomial, ...]
    diffusion: Tuple[Tuple[Polynomial, ...], ...]  # n rows, k columns

    def __post_init__(self):
        if len(self.drift) != self.n:
            raise ModelError(f"drift has {len(self.drift)} entries, expected n={self.n}")
        if len(self.diffusion) != self.n or any(len(r) != self.k for r in self.diffusion):
            raise ModelError(f"diffusion must be {self.n}x{self.k}")
        for p in list(self.drift) + [q for row in self.diffusion for q in row]:
            if p.has_time:
                raise ModelError("dynamics must be autonomous (no t in drift/diffusion)")
            if p.nvars != self.n:
                raise ModelError(
                    f"dynamics entry over {p.nvars} variables, expected n={self.n}"
                )

    @staticmethod
    def from_strings(n: int, k: int, drift: Sequence[str], diffusion) -> "SdeModel":
        b = tuple(parse(s, nvars=n) for s in drift)
        sig = tuple(tuple(parse(s, nvars=n) for s in row) for row in diffusion)
        return SdeModel(n, k, b, sig)


@dataclass(frozen=True)
class ReachQuery:
    """Reach Xs from x0 while staying in X: within [0,T] ('horizon') or at T ('instant')."""

    domain: SemialgebraicSet  # open: X = {g_X > 0}
    target: SemialgebraicSet  # closed: Xs = {g_S >= 0}
    horizon_T: float
    x0: Tuple[float, ...]
    kind: str  # "horizon" | "instant"
    bounding_box: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in ("horizon", "instant"):
            raise ModelError(f"kind must be 'horizon' or 'instant', got {self.kind!r}")
        if not (math.isfinite(self.horizon_T) and self.horizon_T > 0):
            raise ModelError(f"horizon T must be positive and finite, got {self.horizon_T}")
        if self.domain.sense != "open":
            raise ModelError("domain must be an open set {g > 0}")
        if self.target.sense != "closed":
            raise ModelError("target must be a closed set {g >= 0}")
        n = len(self.x0)
        if self.domain.g.nvars != n or self.target.g.nvars != n:
            raise ModelError("x0 dimension does not match set definitions")
        if len(self.bounding_box) != n:
            raise ModelError("bounding_box must have one [lo, hi] pair per dimension")
        for lo, hi in self.bounding_box:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ModelError(f"bad bounding_box interval [{lo}, {hi}]")

    @property
    def n(self) -> int:
        return len(self.x0)


@dataclass
class ValidationReport:
    """Outcome of sampling-based standing-assumption checks (x0 check is exact)."""

    samples: int
    target_points_seen: int      # sampled points with g_S >= 0 (all had g_X > 0)
    target_interior_found: bool  # some sampled point has g_S > 0
    warnings: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return True  # hard failures raise ModelError instead


def validate(
    model: SdeModel,
    query: ReachQuery,
    samples: int = 2000,
    seed: int = 0,
    tol_b: float = 1e-9,
) -> ValidationReport:
    """Check standing assumptions: x0 ∈ X\\Xs exactly, Xs ⊆ X and a nonempty
    target interior by rejection sampling over the bounding box.

    A sampled counterexample to Xs ⊆ X and any x0 violation are hard errors;
    failure to find a target-interior point is recorded as a warning (it matters
    when a lower bound is requested, where an empty target makes any bound vacuous).
    """
    if samples < 1:
        raise ModelError("samples must be >= 1")
    if model.n != query.n:
        raise ModelError(f"model dimension {model.n} != query dimension {query.n}")

    x0 = list(query.x0)
    if query.domain.g.evaluate(x0) <= 0.0:
        raise ModelError(f"x0 outside domain: g_X(x0) = {query.domain.g.evaluate(x0)!r}")
    if query.target.g.evaluate(x0) >= 0.0:
        raise ModelError(f"x0 inside target: g_S(x0) = {query.target.g.evaluate(x0)!r}")

    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in query.bounding_box])
    hi = np.array([b[1] for b in query.bounding_box])
    pts = lo + (hi - lo) * rng.random((samples, model.n))

    target_seen = 0
    interior_found = False
    for row in pts:
        gs = query.target.g.evaluate(row.tolist())
        if gs >= 0.0:
            target_seen += 1
            gx = query.domain.g.evaluate(row.tolist())
            if gx <= 0.0:
                raise ModelError(
                    "target point outside domain (Xs ⊆ X violated) at "
                    f"x = {row.tolist()} with g_S = {gs!r}, g_X = {gx!r}"
                )
            if gs > tol_b:
                interior_found = True

    report = ValidationReport(
        samples=samples,
        target_points_seen=target_seen,
        target_interior_found=interior_found,
    )
    if not interior_found:
        report.warnings.append(
            "empty-target: sampling found no point with g_S > 0 inside the box; "
            "lower bounds on the reach probability would be vacuous"
        )
    return report


_MODEL_FIELDS = {
    "n", "k", "drift", "diffusion", "domain_g", "target_g",
    "T", "x0", "kind", "bounding_box",
}


def load_model(path: str) -> Tuple[SdeModel, ReachQuery]:
    """Load a model+query JSON document; unknown fields are rejected."""
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ModelError(f"invalid JSON in {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    unknown = sorted(set(doc) - _MODEL_FIELDS)
    if unknown:
        raise ModelError(f"unknown model fields: {', '.join(unknown)}")
    missing = sorted(_MODEL_FIELDS - set(doc))
    if missing:
        raise ModelError(f"missing model fields: {', '.join(missing)}")

    n, k = doc["n"], doc["k"]
    if not (isinstance(n, int) and n >= 1 and isinstance(k, int) and k >= 0):
        raise ModelError(f"bad dimensions n={n!r}, k={k!r}")
    try:
        model = SdeModel.from_strings(n, k, doc["drift"], doc["diffusion"])
        domain = SemialgebraicSet(parse(doc["domain_g"], nvars=n), "open")
        target = SemialgebraicSet(parse(doc["target_g"], nvars=n), "closed")
    except PolyError as e:
        raise ModelError(f"bad polynomial in model file: {e}") from e

    x0 = doc["x0"]
    if not (isinstance(x0, list) and len(x0) == n):
        raise ModelError(f"x0 must be a list of {n} numbers")
    box = doc["bounding_box"]
    if not (isinstance(box, list) and all(isinstance(p, list) and len(p) == 2 for p in box)):
        raise ModelError("bounding_box must be a list of [lo, hi] pairs")

    query = ReachQuery(
        domain=domain,
        target=target,
        horizon_T=float(doc["T"]),
        x0=tuple(float(v) for v in x0),
        kind=doc["kind"],
        bounding_box=tuple((float(lo), float(hi)) for lo, hi in box),
    )
    return model, query
