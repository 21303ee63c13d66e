"""The decoupled, linear four-step time advance.

One step takes ``(u, p, phi, d)`` at ``t_n`` to ``t_n + dt``:

1. layer solve for ``phi`` with the auxiliary velocity ``u_star`` eliminated
   pointwise (Sherman-Morrison), a symmetric variable-coefficient Helmholtz
   problem solved by PCG;
2. director solve for ``d`` with ``u_starstar`` eliminated through the
   pointwise 2x2 matrix ``P = I/dt - J Q J^T / M2``, again SPD and solved by
   PCG;
3. momentum solve for the intermediate velocity (linearized convection in
   skew-symmetric form, BiCGStab);
4. pressure projection onto discretely divergence-free fields.

``J[i, j] = d d_i / d x_j`` throughout, so ``(u . grad) d = J u`` and the
director force on the fluid is ``J^T d_dot / M2``.

With ``flow=False`` the fluid is frozen at rest: the transport terms are
dropped and steps 3-4 are skipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .energy import EnergyReport, check_monotone, total_energy
from .fields import BC, Grid, PhysParams, ScalarField, SchemeParams, State, VectorField2, enforce_bc
from .linalg import (
    HelmholtzSolver,
    SolveReport,
    SolverError,
    bicgstab_solve,
    pcg_solve,
    sherman_morrison_apply,
    small_matrix_inverse_2x2,
)
from .ops import OperatorContext, context
from .potential import TruncatedWell, min_stabilizer, resolve_stabilizer

log = logging.getLogger(__name__)


@dataclass
class StepOutputs:
    phi_dot: ScalarField
    d_dot: VectorField2
    u_star: VectorField2
    u_starstar: VectorField2
    u_tilde: VectorField2 | None = None
    reports: dict[str, SolveReport] = field(default_factory=dict)
    dissipation: float = 0.0
    div_rel: float = 0.0
    p_min_eig: float = float("inf")
    warnings: list[str] = field(default_factory=list)


class LayerStep(tuple):
    """``(phi_next, phi_dot, u_star)`` with the solve report as an attribute."""

    def __new__(cls, phi_next, phi_dot, u_star, report):
        self = super().__new__(cls, (phi_next, phi_dot, u_star))
        self.report = report
        return self


class DirectorStep(tuple):
    """``(d_next, d_dot, u_starstar)`` with the solve report and ``min eig P``."""

    def __new__(cls, d_next, d_dot, u_starstar, report, p_min_eig):
        self = super().__new__(cls, (d_next, d_dot, u_starstar))
        self.report = report
        self.p_min_eig = p_min_eig
        return self


@lru_cache(maxsize=64)
def _helmholtz(grid: Grid, alpha: float, beta: float, bc: str, laplacian: str) -> HelmholtzSolver:
    return HelmholtzSolver(grid, alpha, beta, bc, laplacian)


@lru_cache(maxsize=16)
def _well(eps: float) -> TruncatedWell:
    return TruncatedWell(eps)


def stabilizer(phys: PhysParams, scheme: SchemeParams) -> float:
    return resolve_stabilizer(scheme.stab_s, phys.lam, phys.eps)


def _walls_identity(out: np.ndarray, x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "dirichlet":
        out[..., 0] = x[..., 0]
        out[..., -1] = x[..., -1]
    return out


def _zero_walls(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "dirichlet":
        a[..., 0] = 0.0
        a[..., -1] = 0.0
    return a


def _check(report: SolveReport, what: str) -> SolveReport:
    if not report.converged:
        raise SolverError(
            f"{what}: no convergence after {report.iterations} iterations "
            f"(relative residual {report.residual:.3e})", report)
    return report


def _jacobian(ctx: OperatorContext, d: np.ndarray, kind: str) -> np.ndarray:
    """``J[..., i, j] = d d_i / d x_j`` with shape ``(nx, ny, 2, 2)``."""
    rows = [ctx.grad(d[i], kind) for i in range(2)]
    return np.moveaxis(np.stack(rows), (0, 1), (-2, -1))


def _sym_eig_min(m: np.ndarray) -> np.ndarray:
    half_tr = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return half_tr - np.sqrt(np.maximum(half_tr**2 - det, 0.0))


def _vec_last(v: np.ndarray) -> np.ndarray:
    return np.moveaxis(v, 0, -1)


def _vec_first(v: np.ndarray) -> np.ndarray:
    return np.moveaxis(v, -1, 0)


# --- step 1 ----------------------------------------------------------------

def step1_layer(state: State, phys: PhysParams, scheme: SchemeParams, transport: bool = True) -> LayerStep:
    grid = state.grid
    ctx = context(grid)
    dt, m1 = scheme.dt, phys.m1
    kind = state.phi.bc.kind
    phi = state.phi.values
    u = state.u.values
    d = state.d.values
    coef = phys.lam / phys.eta

    g = ctx.grad(phi, kind)
    c = dt / m1 if transport else 0.0
    a = 1.0 / (1.0 + c * (g[0] ** 2 + g[1] ** 2))
    ug = (u[0] * g[0] + u[1] * g[1]) if transport else np.zeros(grid.shape)

    rhs = coef * (ctx.grad_div_laplacian(phi, kind) - ctx.div_adjoint(d, kind)) - a * ug / m1
    _zero_walls(rhs, kind)

    def op(x):
        out = a * x / (m1 * dt) - coef * ctx.grad_div_laplacian(x, kind)
        return _walls_identity(out, x, kind)

    pre = _helmholtz(grid, 1.0 / (m1 * dt), coef, kind, "grad_div")
    dphi, report = pcg_solve(op, rhs, pre.solve, scheme.krylov_tol, scheme.krylov_maxit,
                             inner=ctx.inner, name="layer")
    _check(report, "layer solve")
    _zero_walls(dphi, kind)

    phi_next = enforce_bc(phi + dphi, state.phi.bc)
    phi_dot = a * (dphi / dt + ug)
    if transport:
        rhs_u = u - dphi * g / m1
        u_star = _vec_first(sherman_morrison_apply(_vec_last(g), c, _vec_last(rhs_u)))
    else:
        u_star = u.copy()
    return LayerStep(
        state.phi.with_values(phi_next),
        ScalarField(grid, phi_dot, state.phi.bc.homogeneous()),
        VectorField2.from_arrays(grid, u_star, state.u.bcs),
        report,
    )


# --- step 2 ----------------------------------------------------------------

def director_matrices(ctx: OperatorContext, d: np.ndarray, kind: str, dt: float, m2: float,
                      transport: bool = True):
    """Pointwise ``(J, Q, P)`` of the director step, each of shape ``(nx, ny, 2, 2)``."""
    J = _jacobian(ctx, d, kind)
    eye = np.eye(2)
    if not transport:
        zero = np.zeros_like(J)
        return zero, np.broadcast_to(eye, J.shape).copy(), np.broadcast_to(eye / dt, J.shape).copy()
    c = dt / m2
    JT = np.swapaxes(J, -1, -2)
    Q = small_matrix_inverse_2x2(eye + c * JT @ J)
    P = eye / dt - (J @ Q @ JT) / m2
    return J, Q, P


def step2_director(state: State, phi_next: ScalarField, u_star: VectorField2, phys: PhysParams,
                   scheme: SchemeParams, transport: bool = True) -> DirectorStep:
    grid = state.grid
    ctx = context(grid)
    dt, m2, lam, eta = scheme.dt, phys.m2, phys.lam, phys.eta
    kinds = {bc.kind for bc in state.d.bcs}
    if len(kinds) != 1:
        raise ValueError("director components must share one boundary-condition kind")
    kind = kinds.pop()
    s = stabilizer(phys, scheme)
    d = state.d.values
    us = u_star.values

    J, Q, P = director_matrices(ctx, d, kind, dt, m2, transport)
    p_min = float(np.min(_sym_eig_min(P)))
    if not p_min > 0:
        raise SolverError(f"director step matrix lost definiteness: min eigenvalue {p_min:.3e}")
    A = (s + lam / eta) * np.eye(2) + P / m2
    A_first = np.moveaxis(A, (-2, -1), (0, 1))          # (2, 2, nx, ny)

    JQu = _vec_first(np.einsum("...ij,...j->...i", J @ Q, _vec_last(us)))
    gphi = ctx.grad(phi_next.values, phi_next.bc.kind)
    hx, hy = phys.h
    dh = hx * d[0] + hy * d[1]
    well = _well(phys.eps)
    lap_d = np.stack([ctx.laplacian(d[i], kind) for i in range(2)])
    rhs = lam * (eta * lap_d - _vec_first(well.grad(_vec_last(d))) + (gphi - d) / eta
                 + phys.tau * dh * np.array([hx, hy])[:, None, None]) - JQu / m2
    _zero_walls(rhs, kind)

    def op(x):
        out = np.einsum("ij...,j...->i...", A_first, x) - lam * eta * np.stack(
            [ctx.laplacian(x[0], kind), ctx.laplacian(x[1], kind)])
        return _walls_identity(out, x, kind)

    pre = _helmholtz(grid, s + lam / eta + 1.0 / (m2 * dt), lam * eta, kind, "compact")
    dd, report = pcg_solve(op, rhs, pre.solve, scheme.krylov_tol, scheme.krylov_maxit,
                           inner=ctx.inner, name="director")
    _check(report, "director solve")
    _zero_walls(dd, kind)

    d_next = d + dd
    for i, bc in enumerate(state.d.bcs):
        enforce_bc(d_next[i], bc)
    d_dot = _vec_first(np.einsum("...ij,...j->...i", P, _vec_last(dd))) + JQu
    if transport:
        JT = np.swapaxes(J, -1, -2)
        rhs_u = _vec_last(us) - np.einsum("...ij,...j->...i", JT, _vec_last(dd)) / m2
        u_ss = _vec_first(np.einsum("...ij,...j->...i", Q, rhs_u))
    else:
        u_ss = us.copy()
    homog = tuple(bc.homogeneous() for bc in state.d.bcs)
    return DirectorStep(
        state.d.with_values(d_next),
        VectorField2.from_arrays(grid, d_dot, homog),
        VectorField2.from_arrays(grid, u_ss, state.u.bcs),
        report,
        p_min,
    )


# --- step 3 ----------------------------------------------------------------

def momentum_forces(ctx: OperatorContext, state: State, phi_dot: np.ndarray, d_dot: np.ndarray,
                    phys: PhysParams) -> np.ndarray:
    """``(phi_dot/M1) grad phi + J^T d_dot / M2`` with the step-``n`` gradients."""
    g = ctx.grad(state.phi.values, state.phi.bc.kind)
    d = state.d.values
    kind = state.d.x.bc.kind
    J = _jacobian(ctx, d, kind)
    jt_ddot = _vec_first(np.einsum("...ji,...j->...i", J, _vec_last(d_dot)))
    return phi_dot * g / phys.m1 + jt_ddot / phys.m2


def step3_velocity(state: State, phi_dot: ScalarField, d_dot: VectorField2, phys: PhysParams,
                   scheme: SchemeParams, velocity_bcs: tuple[BC, BC] | None = None,
                   forcing: np.ndarray | None = None):
    """Intermediate velocity; returns ``(u_tilde, report)``.

    ``forcing`` is an optional extra body force added to the momentum
    equation (used to build manufactured solutions).
    """
    grid = state.grid
    ctx = context(grid)
    dt, mu = scheme.dt, phys.mu4
    bcs = velocity_bcs or state.u.bcs
    if any(not bc.dirichlet for bc in bcs):
        raise ValueError("velocity needs Dirichlet wall conditions")
    un = state.u.values

    def conv_visc(w):
        out = np.stack([ctx.convect_skew(un, w[i], "dirichlet") - mu * ctx.laplacian(w[i], "dirichlet")
                        for i in range(2)])
        return out

    lift = un.copy()
    for i, bc in enumerate(bcs):
        enforce_bc(lift[i], bc)
    force = momentum_forces(ctx, state, phi_dot.values, d_dot.values, phys)
    gp = ctx.grad(state.p.values, "neumann")
    rhs = (un - lift) / dt - gp - force - conv_visc(lift)
    if forcing is not None:
        rhs = rhs + forcing
    _zero_walls(rhs, "dirichlet")

    def op(w):
        return _walls_identity(w / dt + conv_visc(w), w, "dirichlet")

    pre = _helmholtz(grid, 1.0 / dt, mu, "dirichlet", "compact")
    w, report = bicgstab_solve(op, rhs, pre.solve, scheme.krylov_tol, scheme.krylov_maxit,
                               inner=ctx.inner, name="momentum")
    _check(report, "momentum solve")
    _zero_walls(w, "dirichlet")
    u_tilde = lift + w
    return VectorField2.from_arrays(grid, u_tilde, bcs), report


# --- step 4 ----------------------------------------------------------------

def divergence(ctx: OperatorContext, u: np.ndarray) -> np.ndarray:
    """Discrete divergence paired with the Neumann pressure gradient."""
    return ctx.div_adjoint(u, "neumann")


def step4_project(u_tilde: VectorField2, p_n: ScalarField, scheme: SchemeParams):
    """Project onto divergence-free fields; returns ``(u_next, p_next, info)``.

    ``info`` holds the relative divergence of the result (measured against the
    velocity-gradient scale of ``u_tilde``) and any compatibility warnings.
    """
    grid = u_tilde.grid
    ctx = context(grid)
    dt = scheme.dt
    ut = u_tilde.values
    warnings = []
    flux = float(np.max(np.abs(ut[1][:, [0, -1]])))
    if flux > 1e-10:
        msg = f"intermediate velocity crosses the walls (max |v| = {flux:.3e})"
        warnings.append(msg)
        log.warning(msg)
    solver = _helmholtz(grid, 0.0, 1.0, "neumann", "grad_div")
    n_warn = len(solver.warnings)
    psi = solver.solve(-divergence(ctx, ut) / dt)
    warnings.extend(solver.warnings[n_warn:])
    u_next = ut - dt * ctx.grad(psi, "neumann")
    p_next = p_n.values + psi

    scale = np.sqrt(ctx.grad_norm_sq(ut[0]) + ctx.grad_norm_sq(ut[1]))
    div_abs = ctx.norm(divergence(ctx, u_next))
    div_rel = div_abs / scale if scale > 0 else div_abs
    info = {"div_rel": div_rel, "div_abs": div_abs, "warnings": warnings}
    return u_tilde.with_values(u_next), p_n.with_values(p_next), info


# --- full step ---------------------------------------------------------------

def dissipation(ctx: OperatorContext, phys: PhysParams, dt: float, phi_dot: np.ndarray,
                d_dot: np.ndarray, u_tilde: np.ndarray | None) -> float:
    """``dt (mu |grad u_tilde|^2 + |phi_dot|^2/M1 + |d_dot|^2/M2)``."""
    out = ctx.inner(phi_dot, phi_dot) / phys.m1 + ctx.inner(d_dot, d_dot) / phys.m2
    if u_tilde is not None:
        out += phys.mu4 * (ctx.grad_norm_sq(u_tilde[0]) + ctx.grad_norm_sq(u_tilde[1]))
    return dt * out


def check_stabilizer(phys: PhysParams, scheme: SchemeParams, allow_unstable: bool = False) -> float:
    s = stabilizer(phys, scheme)
    s_min = min_stabilizer(phys.lam, _well(phys.eps).hessian_bound)
    if s < s_min and not allow_unstable:
        raise ValueError(f"stab_s = {s:g} is below lambda*L/2 = {s_min:g}; energy stability is not guaranteed")
    return s


def advance(state: State, phys: PhysParams, scheme: SchemeParams, flow: bool = True,
            prev_report: EnergyReport | None = None, energy_tol: float = 1e-8):
    """One full step; returns ``(state_next, StepOutputs, EnergyReport)``.

    ``prev_report`` is the energy report of ``state`` (recomputed when not
    given); the new report's ``monotone_ok`` compares against it.
    """
    step = state.step + 1
    try:
        phi_next, phi_dot, u_star = layer = step1_layer(state, phys, scheme, transport=flow)
        d_next, d_dot, u_ss = director = step2_director(state, phi_next, u_star, phys, scheme, transport=flow)
        reports = {"layer": layer.report, "director": director.report}
        ctx = context(state.grid)
        if flow:
            u_tilde, rep3 = step3_velocity(state, phi_dot, d_dot, phys, scheme)
            reports["momentum"] = rep3
            u_next, p_next, info = step4_project(u_tilde, state.p, scheme)
        else:
            u_tilde = None
            u_next, p_next = state.u.copy(), state.p.copy()
            info = {"div_rel": 0.0, "warnings": []}
    except SolverError as exc:
        raise SolverError(f"step {step}: {exc}", exc.report) from exc

    new = State(u_next, p_next, phi_next, d_next, time=state.time + scheme.dt, step=step)
    if not new.is_valid():
        raise SolverError(f"step {step}: non-finite values in the new state")
    outputs = StepOutputs(
        phi_dot=phi_dot,
        d_dot=d_dot,
        u_star=u_star,
        u_starstar=u_ss,
        u_tilde=u_tilde,
        reports=reports,
        dissipation=dissipation(ctx, phys, scheme.dt, phi_dot.values, d_dot.values,
                                None if u_tilde is None else u_tilde.values),
        div_rel=info["div_rel"],
        p_min_eig=director.p_min_eig,
        warnings=list(info["warnings"]),
    )
    if prev_report is None:
        prev_report = total_energy(state, phys, scheme.dt)
    report = total_energy(new, phys, scheme.dt)
    report.monotone_ok, _ = check_monotone(prev_report, report, energy_tol)
    return new, outputs, report


__all__ = [
    "DirectorStep",
    "LayerStep",
    "StepOutputs",
    "advance",
    "check_stabilizer",
    "director_matrices",
    "dissipation",
    "divergence",
    "momentum_forces",
    "stabilizer",
    "step1_layer",
    "step2_director",
    "step3_velocity",
    "step4_project",
]
