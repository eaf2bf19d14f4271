"""Infinitesimal generator of a smooth function along the SDE, computed symbolically.

For v(t, x) and dx = b dt + sigma dW,

    L v = dv/dt + grad_x(v) . b + 1/2 tr(sigma^T Hess_x(v) sigma).

A process stopped on the boundary of its domain has zero drift and diffusion
there, so the generator degenerates to dv/dt on stopping boundaries; that
variant is carried alongside the full expression.
"""

from __future__ import annotations

from dataclasses import dataclass

from .poly import TIME, Polynomial
from .model import ModelError, SdeModel


@dataclass(frozen=True)
class GeneratorResult:
    full: Polynomial       # Lv over the interior
    time_only: Polynomial  # dv/dt, the generator on stopping boundaries

    @property
    def spatial(self) -> Polynomial:
        """grad(v).b + 1/2 tr(sigma^T H sigma), i.e. full minus time_only."""
        return self.full - self.time_only


def apply_generator(v: Polynomial, model: SdeModel) -> GeneratorResult:
    """Exact symbolic Lv; v may involve t (time-independent v gets dv/dt = 0)."""
    if v.nvars != model.n:
        raise ModelError(f"v is over {v.nvars} state variables, model has {model.n}")

    dv_dt = v.differentiate(TIME)
    grads = [v.differentiate(i) for i in range(1, model.n + 1)]

    full = dv_dt
    for i in range(model.n):
        if not (grads[i].is_zero() or model.drift[i].is_zero()):
            full = full + grads[i] * model.drift[i]

    # second-order term expanded column-wise: 1/2 sum_l (sigma_:l)^T H (sigma_:l)
    for l in range(model.k):
        for i in range(model.n):
            sig_il = model.diffusion[i][l]
            if sig_il.is_zero() or grads[i].is_zero():
                continue
            for j in range(model.n):
                sig_jl = model.diffusion[j][l]
                if sig_jl.is_zero():
                    continue
                hess_ij = grads[i].differentiate(j + 1)
                if hess_ij.is_zero():
                    continue
                full = full + (sig_il * sig_jl * hess_ij).scale(0.5)

    return GeneratorResult(full=full, time_only=dv_dt)
