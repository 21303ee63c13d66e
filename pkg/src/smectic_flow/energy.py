"""Discrete free energy and the monitor for its monotone decay."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .fields import PhysParams, State
from .ops import context
from .potential import g_value


@dataclass
class EnergyReport:
    step: int
    time: float
    e_kinetic: float
    e_elastic: float
    e_bulk: float
    e_compat: float
    e_magnetic: float
    e_total: float
    grad_p_sq: float
    e_modified: float
    monotone_ok: bool = True

    COLUMNS = (
        "step", "time", "e_kinetic", "e_elastic", "e_bulk", "e_compat",
        "e_magnetic", "e_total", "grad_p_sq", "e_modified", "monotone_ok",
    )

    def as_dict(self) -> dict:
        return asdict(self)


assert tuple(f.name for f in fields(EnergyReport)) == EnergyReport.COLUMNS


def total_energy(state: State, phys: PhysParams, dt: float = 0.0, truncate: bool = True) -> EnergyReport:
    """Energy of ``state`` split into its parts, plus the pressure-augmented value.

    The gradient of the layer function uses the same discrete gradient as the
    time step (wall closure of ``phi``'s boundary condition); the director's
    elastic term uses the quadratic form of the compact Laplacian.
    """
    ctx = context(state.grid)
    lam, eta = phys.lam, phys.eta
    u = state.u.values
    d = state.d.values
    phi = state.phi.values

    e_kin = 0.5 * ctx.inner(u, u)
    e_el = 0.5 * lam * eta * (ctx.grad_norm_sq(d[0]) + ctx.grad_norm_sq(d[1]))
    bulk_density = g_value(np.moveaxis(d, 0, -1), phys.eps, truncate)
    e_bulk = lam * float(np.sum(bulk_density * ctx.weights))
    mismatch = d - ctx.grad(phi, state.phi.bc.kind)
    e_comp = 0.5 * lam / eta * ctx.inner(mismatch, mismatch)
    dh = phys.h[0] * d[0] + phys.h[1] * d[1]
    e_mag = -0.5 * lam * phys.tau * ctx.inner(dh, dh)
    total = e_kin + e_el + e_bulk + e_comp + e_mag
    gp = ctx.grad(state.p.values, "neumann")
    gp_sq = ctx.inner(gp, gp)
    return EnergyReport(
        step=state.step,
        time=state.time,
        e_kinetic=e_kin,
        e_elastic=e_el,
        e_bulk=e_bulk,
        e_compat=e_comp,
        e_magnetic=e_mag,
        e_total=total,
        grad_p_sq=gp_sq,
        e_modified=total + 0.5 * dt**2 * gp_sq,
    )


def check_monotone(prev: EnergyReport, curr: EnergyReport, tol: float = 1e-8) -> tuple[bool, float]:
    """Whether the modified energy did not grow beyond ``tol * max(1, |E_prev|)``.

    Returns ``(ok, violation)`` with ``violation = max(0, E_curr - E_prev)``.
    """
    growth = curr.e_modified - prev.e_modified
    ok = growth <= tol * max(1.0, abs(prev.e_modified))
    return bool(ok), max(0.0, growth)


__all__ = ["EnergyReport", "check_monotone", "total_energy"]
