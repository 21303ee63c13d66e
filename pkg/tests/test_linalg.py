import numpy as np
import pytest

from smectic_flow.fields import make_grid
from smectic_flow.linalg import (
    HelmholtzSolver, LinearOperator, SolveReport, SolverError, bicgstab_solve, check_linearity,
    mode_tridiag_solve, pcg_solve, sherman_morrison_apply, small_matrix_inverse_2x2, thomas,
)
from smectic_flow.ops import context

GRID = make_grid(16, 13, 4.0, -1.0, 1.0)


def test_sherman_morrison_examples():
    rhs = np.array([0.3, -2.0])
    assert np.array_equal(sherman_morrison_apply([0.0, 0.0], 0.7, rhs), rhs)
    out = sherman_morrison_apply([3.0, 4.0], 1.0, [1.0, 0.0])
    assert np.allclose(out, [17 / 26, -12 / 26], rtol=0, atol=1e-15)


def test_sherman_morrison_matches_direct_inverse():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((1000, 2)) * 3
    c = rng.uniform(0, 5, 1000)
    rhs = rng.standard_normal((1000, 2))
    m = np.eye(2) + c[:, None, None] * g[:, :, None] * g[:, None, :]
    direct = np.einsum("nij,nj->ni", small_matrix_inverse_2x2(m), rhs)
    sm = sherman_morrison_apply(g, c, rhs)
    assert np.max(np.abs(sm - direct)) < 1e-12
    back = np.einsum("nij,nj->ni", m, sm)
    assert np.max(np.abs(back - rhs)) < 1e-13 * np.max(np.abs(m))


def test_sherman_morrison_rejects_negative_shift():
    with pytest.raises(ValueError):
        sherman_morrison_apply([1.0, 0.0], -1.0, [1.0, 0.0])


def test_small_inverse_examples():
    assert np.array_equal(small_matrix_inverse_2x2(np.eye(2)), np.eye(2))
    J = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert np.allclose(small_matrix_inverse_2x2(np.eye(2) + J.T @ J), np.diag([0.5, 1.0]))
    rng = np.random.default_rng(1)
    J = rng.standard_normal((200, 2, 2))
    m = np.eye(2) + np.swapaxes(J, -1, -2) @ J
    assert np.max(np.abs(m @ small_matrix_inverse_2x2(m) - np.eye(2))) < 1e-12
    with pytest.raises(ZeroDivisionError):
        small_matrix_inverse_2x2(np.zeros((2, 2)))


def test_thomas_matches_dense():
    rng = np.random.default_rng(2)
    n = 9
    lo, up = rng.standard_normal(n), rng.standard_normal(n)
    di = 4 + rng.random(n)
    a = np.diag(di) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)
    b = rng.standard_normal(n)
    assert np.allclose(thomas(lo, di, up, b), np.linalg.solve(a, b), atol=1e-13)


def test_helmholtz_single_mode():
    X, Y = GRID.mesh()
    k = 2 * np.pi / GRID.lx
    rhs = np.cos(k * X)
    out = mode_tridiag_solve(GRID, 1.0, 1.0, "neumann", rhs)
    assert np.max(np.abs(out - rhs / (1 + k**2))) < 1e-12
    assert np.all(mode_tridiag_solve(GRID, 1.0, 1.0, "neumann", np.zeros(GRID.shape)) == 0)


CASES = [(bc, lap, alpha) for bc in ("neumann", "dirichlet") for lap in ("compact", "grad_div")
         for alpha in (0.0, 1.0, 250.0) if not (alpha == 0.0 and bc == "neumann")]


@pytest.mark.parametrize("bc, lap, alpha", CASES)
def test_helmholtz_manufactured(bc, lap, alpha):
    X, Y = GRID.mesh()
    yy = (Y - GRID.y0) / (GRID.y1 - GRID.y0)
    exact = np.cos(2 * np.pi * X / GRID.lx) * (np.cos(np.pi * yy) if bc == "neumann" else np.sin(np.pi * yy))
    exact[:, [0, -1]] = exact[:, [0, -1]] if bc == "neumann" else 0.0
    solver = HelmholtzSolver(GRID, alpha, 0.7, bc, lap)
    rhs = solver.apply(exact)
    assert np.max(np.abs(solver.solve(rhs) - exact)) < 1e-10
    assert not solver.warnings


@pytest.mark.parametrize("lap", ["compact", "grad_div"])
def test_helmholtz_singular_neumann(lap):
    ctx = context(GRID)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(GRID.shape)
    solver = HelmholtzSolver(GRID, 0.0, 1.0, "neumann", lap)
    rhs = solver.apply(x)
    sol = solver.solve(rhs)
    assert np.max(np.abs(solver.apply(sol) - rhs)) < 1e-9
    assert abs(np.sum(sol * ctx.weights)) < 1e-10
    assert not solver.warnings


def test_helmholtz_incompatible_rhs_warns():
    solver = HelmholtzSolver(GRID, 0.0, 1.0, "neumann", "compact")
    out = solver.solve(np.ones(GRID.shape))
    assert solver.warnings
    assert np.all(np.isfinite(out))


def test_linear_operator_linearity():
    solver = HelmholtzSolver(GRID, 1.0, 1.0, "neumann", "compact")
    op = LinearOperator(solver.apply, symmetric=True, name="helmholtz")
    assert check_linearity(op, GRID.shape, np.random.default_rng(4)) < 1e-12


def test_pcg_identity_one_iteration():
    rhs = np.random.default_rng(5).standard_normal(GRID.shape)
    x, rep = pcg_solve(lambda v: v, rhs)
    assert rep.converged and rep.iterations == 1
    assert np.allclose(x, rhs)


def test_pcg_exact_preconditioner():
    ctx = context(GRID)
    solver = HelmholtzSolver(GRID, 3.0, 1.0, "neumann", "grad_div")
    rhs = np.random.default_rng(6).standard_normal(GRID.shape)
    x, rep = pcg_solve(solver.apply, rhs, solver.solve, tol=1e-10, inner=ctx.inner)
    assert rep.converged and rep.iterations <= 2
    r = solver.apply(x) - rhs
    assert ctx.norm(r) <= 1e-10 * ctx.norm(rhs)


def test_pcg_unpreconditioned_and_residual_reverified():
    ctx = context(GRID)
    solver = HelmholtzSolver(GRID, 50.0, 1.0, "neumann", "compact")
    rhs = np.random.default_rng(7).standard_normal(GRID.shape)
    x, rep = pcg_solve(solver.apply, rhs, tol=1e-10, maxit=2000, inner=ctx.inner)
    assert rep.converged
    assert ctx.norm(solver.apply(x) - rhs) <= 1e-10 * ctx.norm(rhs) * (1 + 1e-6)
    assert rep.residual <= 1e-10


def test_pcg_reports_nonconvergence():
    solver = HelmholtzSolver(GRID, 1e-3, 1.0, "neumann", "compact")
    rhs = np.random.default_rng(8).standard_normal(GRID.shape)
    _, rep = pcg_solve(solver.apply, rhs, tol=1e-12, maxit=2)
    assert not rep.converged


def test_bicgstab_identity():
    rhs = np.random.default_rng(9).standard_normal(GRID.shape)
    x, rep = bicgstab_solve(lambda v: v, rhs)
    assert rep.converged and np.allclose(x, rhs)


def test_bicgstab_matches_pcg_without_convection():
    ctx = context(GRID)
    solver = HelmholtzSolver(GRID, 1000.0, 1.0, "dirichlet", "compact")
    rhs = np.random.default_rng(10).standard_normal(GRID.shape)
    rhs[:, [0, -1]] = 0
    x1, r1 = pcg_solve(solver.apply, rhs, tol=1e-12, maxit=1000, inner=ctx.inner)
    x2, r2 = bicgstab_solve(solver.apply, rhs, tol=1e-12, maxit=1000, inner=ctx.inner)
    assert r1.converged and r2.converged
    assert np.max(np.abs(x1 - x2)) < 1e-10


def test_bicgstab_nonsymmetric():
    ctx = context(GRID)
    rng = np.random.default_rng(11)
    u = rng.standard_normal((2,) + GRID.shape)

    def op(w):
        out = 100 * w + ctx.convect_skew(u, w, "dirichlet") - ctx.laplacian(w, "dirichlet")
        out[:, [0, -1]] = w[:, [0, -1]]
        return out

    rhs = rng.standard_normal(GRID.shape)
    rhs[:, [0, -1]] = 0
    pre = HelmholtzSolver(GRID, 100.0, 1.0, "dirichlet", "compact")
    x, rep = bicgstab_solve(op, rhs, pre.solve, tol=1e-10, inner=ctx.inner)
    assert rep.converged
    assert ctx.norm(op(x) - rhs) <= 1e-10 * ctx.norm(rhs) * (1 + 1e-6)


def test_bicgstab_breakdown_restarts_then_fails():
    # a nilpotent map makes rho vanish immediately
    def op(v):
        out = np.zeros_like(v)
        out[0] = v[1]
        return out

    rhs = np.array([0.0, 1.0])
    _, rep = bicgstab_solve(op, rhs, maxit=50)
    assert not rep.converged
    assert rep.restarts == 1


def test_solver_error_carries_report():
    rep = SolveReport(3, 0.5, False, "x")
    err = SolverError("failed", rep)
    assert err.report is rep
