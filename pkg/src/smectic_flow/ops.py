"""Discrete differential operators on the periodic channel.

x-derivatives are Fourier pseudospectral; y-derivatives are second-order
finite differences.  The operators are built so that discrete summation by
parts holds exactly under the trapezoidal inner product :func:`inner`:

* ``div`` is the negative adjoint of ``grad`` for fields that vanish on
  Dirichlet walls, or for vector fields without wall-normal component when
  the scalar is Neumann.  ``div_adjoint`` is the exact negative adjoint with
  no side condition (it differs from ``div`` only next to Neumann walls).
* ``laplacian`` is the compact 3-point operator; it is self-adjoint and
  ``-inner(laplacian(f), g) = inner(grad_c f, grad_c g)`` where ``grad_c``
  uses staggered y-differences (see :func:`grad_norm_sq`).
* ``div(grad(.))`` is the wide-stencil Laplacian that the layer equation and
  the pressure projection need for exact energy and divergence identities.

Array-level functions take arrays whose last two axes are ``(nx, ny)`` and a
boundary kind (``"neumann"`` or ``"dirichlet"``) selecting the wall closure.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .fields import BC, Grid, ScalarField, VectorField2


class OperatorContext:
    """Precomputed wavenumbers and quadrature weights for one grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        self.hx, self.hy = grid.hx, grid.hy
        # full-length wavenumbers k_j = 2 pi j / lx (j in fftfreq order)
        self.k = 2.0 * np.pi * np.fft.fftfreq(nx, d=grid.hx)
        self.rk = 2.0 * np.pi * np.fft.rfftfreq(nx, d=grid.hx)
        # first-derivative multiplier: the Nyquist mode has no real derivative
        self.ik = 1j * self.rk
        self.ik[-1] = 0.0
        self.k2 = self.rk**2
        self.k2_tilde = np.abs(self.ik) ** 2
        wy = np.full(ny, grid.hy)
        wy[0] = wy[-1] = 0.5 * grid.hy
        self.wy = wy
        self.weights = grid.hx * np.broadcast_to(wy, (nx, ny))

    # --- x direction -------------------------------------------------------
    def dx(self, f: np.ndarray) -> np.ndarray:
        fh = np.fft.rfft(f, axis=-2)
        return np.fft.irfft(self.ik[:, None] * fh, n=self.grid.nx, axis=-2)

    def dxx(self, f: np.ndarray) -> np.ndarray:
        fh = np.fft.rfft(f, axis=-2)
        return np.fft.irfft(-self.k2[:, None] * fh, n=self.grid.nx, axis=-2)

    # --- y direction -------------------------------------------------------
    def dy(self, f: np.ndarray, kind: str) -> np.ndarray:
        """Centered difference; walls: zero (Neumann) or one-sided first order (Dirichlet)."""
        h = self.hy
        out = np.empty_like(f)
        out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * h)
        if kind == "neumann":
            out[..., 0] = 0.0
            out[..., -1] = 0.0
        else:
            out[..., 0] = (f[..., 1] - f[..., 0]) / h
            out[..., -1] = (f[..., -1] - f[..., -2]) / h
        return out

    def dy_transpose(self, m: np.ndarray, kind: str) -> np.ndarray:
        """Matrix transpose of :meth:`dy` acting along y."""
        h = self.hy
        t = np.zeros_like(m)
        t[..., 2:] += m[..., 1:-1] / (2.0 * h)
        t[..., :-2] -= m[..., 1:-1] / (2.0 * h)
        if kind != "neumann":
            t[..., 0] -= m[..., 0] / h
            t[..., 1] += m[..., 0] / h
            t[..., -1] += m[..., -1] / h
            t[..., -2] -= m[..., -1] / h
        return t

    def div_y(self, v: np.ndarray) -> np.ndarray:
        h = self.hy
        out = np.empty_like(v)
        out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2.0 * h)
        out[..., 0] = (v[..., 1] - v[..., 0]) / h
        out[..., -1] = (v[..., -1] - v[..., -2]) / h
        return out

    def dyy(self, f: np.ndarray, kind: str) -> np.ndarray:
        h2 = self.hy**2
        out = np.empty_like(f)
        out[..., 1:-1] = (f[..., 2:] - 2.0 * f[..., 1:-1] + f[..., :-2]) / h2
        if kind == "neumann":
            out[..., 0] = 2.0 * (f[..., 1] - f[..., 0]) / h2
            out[..., -1] = 2.0 * (f[..., -2] - f[..., -1]) / h2
        else:
            # wall rows of a Dirichlet field are data; report the adjacent value
            out[..., 0] = out[..., 1]
            out[..., -1] = out[..., -2]
        return out

    # --- composite operators ----------------------------------------------
    def grad(self, f: np.ndarray, kind: str) -> np.ndarray:
        return np.stack([self.dx(f), self.dy(f, kind)])

    def div(self, v: np.ndarray) -> np.ndarray:
        return self.dx(v[0]) + self.div_y(v[1])

    def div_adjoint(self, v: np.ndarray, kind: str) -> np.ndarray:
        """Exact ``-grad^*`` under :meth:`inner` for a gradient with wall closure ``kind``."""
        return self.dx(v[0]) - self.dy_transpose(v[1] * self.wy, kind) / self.wy

    def laplacian(self, f: np.ndarray, kind: str) -> np.ndarray:
        return self.dxx(f) + self.dyy(f, kind)

    def grad_div_laplacian(self, f: np.ndarray, kind: str) -> np.ndarray:
        return self.div_adjoint(self.grad(f, kind), kind)

    def convect(self, u: np.ndarray, f: np.ndarray, kind: str) -> np.ndarray:
        """Advective form ``u . grad f``."""
        return u[0] * self.dx(f) + u[1] * self.dy(f, kind)

    def convect_skew(self, u: np.ndarray, f: np.ndarray, kind: str) -> np.ndarray:
        """Skew-symmetric form ``(u . grad f + div(u f)) / 2``.

        Exactly skew under :meth:`inner` on fields vanishing at the walls when
        ``kind`` is ``"dirichlet"``; equals the advective form when
        ``div u = 0``.
        """
        return 0.5 * (self.convect(u, f, kind) + self.div(u * f))

    # --- quadrature --------------------------------------------------------
    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * b * self.weights))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(self.inner(a, a)))

    def dx_norm_sq(self, f: np.ndarray) -> float:
        """``||d/dx f||^2`` by Parseval, Nyquist mode included."""
        nx = self.grid.nx
        fh = np.fft.rfft(f, axis=-2)
        spec = self.k2[:, None] * np.abs(fh) ** 2
        spec[1:-1] *= 2.0
        per_row = spec.sum(axis=-2) / nx
        return float(self.hx * np.sum(per_row * self.wy))

    def dy_norm_sq(self, f: np.ndarray) -> float:
        """Staggered ``||d/dy f||^2`` over cell midpoints."""
        diff = np.diff(f, axis=-1) / self.hy
        return float(self.hx * self.hy * np.sum(diff**2))

    def grad_norm_sq(self, f: np.ndarray) -> float:
        """Quadratic form of :meth:`laplacian`: ``-(lap f, f)`` when boundary terms vanish."""
        return self.dx_norm_sq(f) + self.dy_norm_sq(f)

    # --- 1D y matrices ------------------------------------------------------
    def y_matrix(self, which: str, kind: str) -> np.ndarray:
        """Dense ``ny x ny`` matrix of a y-operator: ``"compact"`` or ``"grad_div"``."""
        eye = np.eye(self.grid.ny)
        if which == "compact":
            rows = self.dyy(eye, kind)
        elif which == "grad_div":
            m = self.dy(eye, kind)
            rows = -self.dy_transpose(m * self.wy, kind) / self.wy
        else:
            raise ValueError(f"unknown y operator {which!r}")
        return rows.T


@lru_cache(maxsize=32)
def context(grid: Grid) -> OperatorContext:
    return OperatorContext(grid)


# --- field-level API --------------------------------------------------------

def _arr(a) -> np.ndarray:
    if isinstance(a, (ScalarField, VectorField2)):
        return a.values
    return np.asarray(a, dtype=float)


def grad(phi: ScalarField) -> VectorField2:
    ctx = context(phi.grid)
    g = ctx.grad(phi.values, phi.bc.kind)
    return VectorField2.from_arrays(phi.grid, g)


def div(v: VectorField2, bc: BC | None = None) -> ScalarField:
    ctx = context(v.grid)
    return ScalarField(v.grid, ctx.div(v.values), bc or BC())


def div_adjoint(v: VectorField2, bc: BC) -> ScalarField:
    ctx = context(v.grid)
    return ScalarField(v.grid, ctx.div_adjoint(v.values, bc.kind), bc)


def laplacian(phi: ScalarField) -> ScalarField:
    ctx = context(phi.grid)
    return ScalarField(phi.grid, ctx.laplacian(phi.values, phi.bc.kind), phi.bc.homogeneous())


def convect(u: VectorField2, f):
    """``(u . grad) f`` for a scalar field, or componentwise for a vector field."""
    ctx = context(u.grid)
    if isinstance(f, VectorField2):
        return VectorField2(convect(u, f.x), convect(u, f.y))
    return ScalarField(f.grid, ctx.convect(u.values, f.values, f.bc.kind), f.bc.homogeneous())


def inner(a, b, grid: Grid | None = None) -> float:
    grid = grid or getattr(a, "grid", None) or getattr(b, "grid", None)
    if grid is None:
        raise ValueError("inner of plain arrays needs a grid")
    return context(grid).inner(_arr(a), _arr(b))


def norm_l2(a, grid: Grid | None = None) -> float:
    return float(np.sqrt(inner(a, a, grid)))


__all__ = [
    "OperatorContext",
    "context",
    "convect",
    "div",
    "div_adjoint",
    "grad",
    "inner",
    "laplacian",
    "norm_l2",
]
