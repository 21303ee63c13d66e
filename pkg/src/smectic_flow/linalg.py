"""Matrix-free linear algebra for the time step.

* pointwise closed-form inverses of ``I + c g g^T`` and general 2x2 matrices,
* :class:`HelmholtzSolver`: direct solves of ``(alpha - beta * Lap) x = b``
  with constant coefficients, diagonal in the Fourier modes along x and
  tridiagonal (Thomas algorithm) along y,
* preconditioned CG and BiCGStab over arbitrary array shapes and inner
  products.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import Grid
from .ops import OperatorContext, context

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A Krylov solve failed to reach its tolerance."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    name: str = ""
    restarts: int = 0


@dataclass
class LinearOperator:
    """A linear map on arrays plus metadata used by the solvers."""

    apply: Callable[[np.ndarray], np.ndarray]
    symmetric: bool = False
    name: str = "operator"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)


def check_linearity(op: LinearOperator, shape, rng: np.random.Generator, trials: int = 3) -> float:
    """Largest relative defect of ``op(a x + b y) - a op(x) - b op(y)`` on random probes."""
    worst = 0.0
    for _ in range(trials):
        x, y = rng.standard_normal(shape), rng.standard_normal(shape)
        a, b = rng.standard_normal(2)
        lhs = op(a * x + b * y)
        rhs = a * op(x) + b * op(y)
        scale = max(np.max(np.abs(rhs)), np.max(np.abs(lhs)), 1e-300)
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / scale))
    return worst


# --- pointwise inverses -------------------------------------------------------

def sherman_morrison_apply(g, c, rhs) -> np.ndarray:
    """``(I + c g g^T)^{-1} rhs`` pointwise; vectors on the last axis."""
    g = np.asarray(g, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("Sherman-Morrison shift must be non-negative")
    gr = np.sum(g * rhs, axis=-1, keepdims=True)
    gg = np.sum(g * g, axis=-1, keepdims=True)
    c = c[..., None] if c.ndim else c
    return rhs - c * g * gr / (1.0 + c * gg)


def small_matrix_inverse_2x2(m) -> np.ndarray:
    """Adjugate inverse of 2x2 matrices stacked on the last two axes."""
    m = np.asarray(m, dtype=float)
    a, b = m[..., 0, 0], m[..., 0, 1]
    c, d = m[..., 1, 0], m[..., 1, 1]
    det = a * d - b * c
    if np.any(np.abs(det) < 1e-300):
        raise ZeroDivisionError("singular 2x2 matrix")
    inv = np.empty_like(m)
    inv[..., 0, 0] = d / det
    inv[..., 0, 1] = -b / det
    inv[..., 1, 0] = -c / det
    inv[..., 1, 1] = a / det
    return inv


# --- Thomas algorithm ---------------------------------------------------------

class TridiagonalFactor:
    """LU factors of a batch of tridiagonal systems, reusable across right-hand sides.

    ``lower[..., i]`` multiplies ``x[i-1]`` in row ``i`` (``lower[..., 0]``
    unused), ``upper[..., i]`` multiplies ``x[i+1]`` (last entry unused).
    """

    def __init__(self, lower: np.ndarray, diag: np.ndarray, upper: np.ndarray):
        n = diag.shape[-1]
        self.n = n
        self.lower = lower
        cp = np.zeros_like(diag)
        den = np.empty_like(diag)
        den[..., 0] = diag[..., 0]
        for i in range(1, n):
            cp[..., i - 1] = upper[..., i - 1] / den[..., i - 1]
            den[..., i] = diag[..., i] - lower[..., i] * cp[..., i - 1]
        if np.any(den == 0):
            raise ZeroDivisionError("zero pivot in tridiagonal factorization")
        self.cp = cp
        self.den = den

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        n = self.n
        y = np.empty_like(rhs)
        y[..., 0] = rhs[..., 0] / self.den[..., 0]
        for i in range(1, n):
            y[..., i] = (rhs[..., i] - self.lower[..., i] * y[..., i - 1]) / self.den[..., i]
        for i in range(n - 2, -1, -1):
            y[..., i] -= self.cp[..., i] * y[..., i + 1]
        return y


def thomas(lower, diag, upper, rhs) -> np.ndarray:
    return TridiagonalFactor(np.asarray(lower), np.asarray(diag), np.asarray(upper)).solve(np.asarray(rhs))


# --- constant-coefficient Helmholtz ------------------------------------------

@dataclass
class _Block:
    rows: np.ndarray            # y indices of the unknowns in this block
    factor: TridiagonalFactor
    singular: np.ndarray        # per-mode flags (pinned first unknown)


class HelmholtzSolver:
    """Solve ``(alpha I - beta Lap) x = b`` for fields on ``grid``.

    ``laplacian="compact"`` uses the 3-point y stencil (stride-1 tridiagonal per
    mode); ``"grad_div"`` uses ``div(grad .)`` whose y stencil couples rows two
    apart, so each mode splits into two interleaved tridiagonal systems.

    With ``bc="dirichlet"`` the wall rows of the solution are taken from the
    wall rows of ``b``.  When ``alpha = 0`` with Neumann walls, singular modes
    are handled by projecting the right-hand side onto the compatible subspace
    and returning the solution with zero weighted mean on each null vector.
    """

    def __init__(self, grid: Grid, alpha: float, beta: float, bc: str = "neumann",
                 laplacian: str = "compact"):
        if beta == 0:
            raise ValueError("beta must be nonzero")
        self.grid = grid
        self.ctx: OperatorContext = context(grid)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.bc = bc
        self.laplacian = laplacian
        self.warnings: list[str] = []
        ctx = self.ctx
        ly = ctx.y_matrix(laplacian, bc)
        kx2 = ctx.k2 if laplacian == "compact" else ctx.k2_tilde
        ny = grid.ny
        rows = np.arange(1, ny - 1) if bc == "dirichlet" else np.arange(ny)
        self._rows = rows
        self._ly = ly
        if bc == "dirichlet":
            self._wall_coupling = -self.beta * ly[np.ix_(rows, [0, ny - 1])]
        stride = 1 if laplacian == "compact" else 2
        blocks = [rows[p::stride] for p in range(stride)]
        inner_ly = ly[np.ix_(rows, rows)]
        if stride == 2:
            even = (rows % 2 == 0)
            cross = inner_ly[np.ix_(even, ~even)]
            if np.any(cross != 0) or np.any(inner_ly[np.ix_(~even, even)] != 0):
                raise AssertionError("grad_div stencil couples the even and odd sub-lattices")
        shift = self.alpha + self.beta * kx2
        self._blocks = []
        for idx in blocks:
            sub = ly[np.ix_(idx, idx)]
            n = len(idx)
            off_lo = np.zeros(n)
            off_up = np.zeros(n)
            off_lo[1:] = np.diagonal(sub, -1)
            off_up[:-1] = np.diagonal(sub, 1)
            if np.any(np.triu(sub, 2)) or np.any(np.tril(sub, -2)):
                raise AssertionError("y stencil is not tridiagonal on a sub-lattice")
            diag = shift[:, None] - self.beta * np.diagonal(sub)[None, :]
            lower = np.broadcast_to(-self.beta * off_lo, diag.shape).copy()
            upper = np.broadcast_to(-self.beta * off_up, diag.shape).copy()
            scale = np.abs(diag).max(axis=1) + 1.0
            singular = np.zeros(len(kx2), dtype=bool)
            if bc == "neumann":
                # constant vector on the sub-lattice is a null vector iff the shift vanishes
                singular = np.abs(shift) <= 1e-14 * scale
            # pin the first unknown of singular modes; the dropped row is redundant
            diag[singular, 0] = 1.0
            upper[singular, 0] = 0.0
            self._blocks.append(_Block(idx, TridiagonalFactor(lower, diag, upper), singular))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Operator application through the discrete-ops layer (independent of the factors)."""
        ctx = self.ctx
        if self.laplacian == "compact":
            lap = ctx.laplacian(x, self.bc)
        else:
            lap = ctx.grad_div_laplacian(x, self.bc)
        out = self.alpha * x - self.beta * lap
        if self.bc == "dirichlet":
            out[..., 0] = x[..., 0]
            out[..., -1] = x[..., -1]
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        ctx = self.ctx
        nx = self.grid.nx
        rhs = np.asarray(rhs, dtype=float)
        bh = np.fft.rfft(rhs, axis=-2)
        out = np.zeros_like(bh)
        if self.bc == "dirichlet":
            walls = bh[..., [0, -1]]
            out[..., 0] = walls[..., 0]
            out[..., -1] = walls[..., 1]
            bh = bh.copy()
            bh[..., self._rows] -= walls @ self._wall_coupling.T
        wy = ctx.wy
        for blk in self._blocks:
            b = bh[..., blk.rows]
            if np.any(blk.singular):
                w = wy[blk.rows]
                b = b.copy()
                bs = b[..., blk.singular, :]
                mean = (bs @ w) / w.sum()
                size = np.max(np.abs(bs)) if bs.size else 0.0
                if np.max(np.abs(mean), initial=0.0) > 1e-10 * max(size, 1.0):
                    msg = f"incompatible right-hand side in singular mode (mean {np.max(np.abs(mean)):.3e}); removed"
                    self.warnings.append(msg)
                    log.warning(msg)
                bs = bs - mean[..., None]
                bs[..., 0] = 0.0
                b[..., blk.singular, :] = bs
            x = blk.factor.solve(b)
            if np.any(blk.singular):
                w = wy[blk.rows]
                xs = x[..., blk.singular, :]
                x[..., blk.singular, :] = xs - ((xs @ w) / w.sum())[..., None]
            out[..., blk.rows] = x
        return np.fft.irfft(out, n=nx, axis=-2)

    __call__ = solve


def mode_tridiag_solve(grid: Grid, alpha: float, beta: float, bc: str, rhs: np.ndarray,
                       laplacian: str = "compact") -> np.ndarray:
    return HelmholtzSolver(grid, alpha, beta, bc, laplacian).solve(rhs)


# --- Krylov solvers -----------------------------------------------------------

def _euclid(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a, b).real)


def pcg_solve(op, rhs: np.ndarray, precond=None, tol: float = 1e-10, maxit: int = 500,
              x0: np.ndarray | None = None, inner=_euclid, name: str = "pcg"):
    """Preconditioned conjugate gradients; ``op`` must be SPD in ``inner``.

    Convergence is declared when ``||rhs - op(x)|| <= tol ||rhs||`` in the norm
    induced by ``inner``.  Returns ``(x, SolveReport)``.
    """
    precond = precond or (lambda r: r)
    bnorm = math.sqrt(max(inner(rhs, rhs), 0.0))
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return np.zeros_like(rhs), SolveReport(0, 0.0, True, name)
    r = rhs - op(x) if x0 is not None else rhs.copy()
    rel = math.sqrt(max(inner(r, r), 0.0)) / bnorm
    if rel <= tol:
        return x, SolveReport(0, rel, True, name)
    z = precond(r)
    p = z.copy()
    rz = inner(r, z)
    for it in range(1, maxit + 1):
        q = op(p)
        pq = inner(p, q)
        if pq <= 0:
            return x, SolveReport(it, rel, False, name)
        a = rz / pq
        x = x + a * p
        r = r - a * q
        rel = math.sqrt(max(inner(r, r), 0.0)) / bnorm
        if rel <= tol:
            # confirm with a freshly computed residual
            r = rhs - op(x)
            rel = math.sqrt(max(inner(r, r), 0.0)) / bnorm
            if rel <= tol:
                return x, SolveReport(it, rel, True, name)
        z = precond(r)
        rz_new = inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(maxit, rel, False, name)


def bicgstab_solve(op, rhs: np.ndarray, precond=None, tol: float = 1e-10, maxit: int = 500,
                   x0: np.ndarray | None = None, inner=_euclid, name: str = "bicgstab"):
    """Right-preconditioned BiCGStab.  A breakdown triggers one restart from the
    current iterate; a second breakdown is reported as non-convergence."""
    precond = precond or (lambda r: r)
    bnorm = math.sqrt(max(inner(rhs, rhs), 0.0))
    if bnorm == 0.0:
        return np.zeros_like(rhs), SolveReport(0, 0.0, True, name)
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    restarts = 0
    it = 0
    rel = math.inf
    while True:
        r = rhs - op(x)
        rel = math.sqrt(max(inner(r, r), 0.0)) / bnorm
        if rel <= tol:
            return x, SolveReport(it, rel, True, name, restarts)
        r_hat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros_like(rhs)
        p = np.zeros_like(rhs)
        broke = False
        while it < maxit:
            it += 1
            rho_new = inner(r_hat, r)
            if abs(rho_new) < 1e-300 or omega == 0.0:
                broke = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
            ph = precond(p)
            v = op(ph)
            denom = inner(r_hat, v)
            if abs(denom) < 1e-300:
                broke = True
                break
            alpha = rho_new / denom
            s = r - alpha * v
            srel = math.sqrt(max(inner(s, s), 0.0)) / bnorm
            if srel <= tol:
                x = x + alpha * ph
                r_true = rhs - op(x)
                rel = math.sqrt(max(inner(r_true, r_true), 0.0)) / bnorm
                if rel <= tol:
                    return x, SolveReport(it, rel, True, name, restarts)
                r = r_true
                rho = rho_new
                continue
            sh = precond(s)
            t = op(sh)
            tt = inner(t, t)
            omega = inner(t, s) / tt if tt > 0 else 0.0
            x = x + alpha * ph + omega * sh
            r = s - omega * t
            rho = rho_new
            rel = math.sqrt(max(inner(r, r), 0.0)) / bnorm
            if rel <= tol:
                r_true = rhs - op(x)
                rel = math.sqrt(max(inner(r_true, r_true), 0.0)) / bnorm
                if rel <= tol:
                    return x, SolveReport(it, rel, True, name, restarts)
                r = r_true
        if broke and restarts == 0:
            restarts += 1
            continue
        return x, SolveReport(it, rel, False, name, restarts)


__all__ = [
    "HelmholtzSolver",
    "LinearOperator",
    "SolveReport",
    "SolverError",
    "TridiagonalFactor",
    "bicgstab_solve",
    "check_linearity",
    "mode_tridiag_solve",
    "pcg_solve",
    "sherman_morrison_apply",
    "small_matrix_inverse_2x2",
    "thomas",
]
