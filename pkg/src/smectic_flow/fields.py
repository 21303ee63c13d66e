"""Grids, grid-sampled fields, parameter bundles and seeded perturbations.

Fields live on a uniform tensor grid that is periodic in x and bounded by
walls at ``y = y0`` and ``y = y1``.  Values are stored as arrays of shape
``(nx, ny)``: the first index runs along x, the second along y, and the
rows ``values[:, 0]`` / ``values[:, -1]`` are the wall rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

BCKind = Literal["neumann", "dirichlet"]


@dataclass(frozen=True)
class Grid:
    """Uniform grid, ``nx`` Fourier points in x and ``ny`` nodes (walls included) in y."""

    nx: int
    ny: int
    lx: float
    y0: float
    y1: float

    def __post_init__(self):
        if self.nx < 4 or self.nx % 2:
            raise ValueError(f"nx must be even and >= 4, got {self.nx}")
        if self.ny < 3:
            raise ValueError(f"ny must be >= 3, got {self.ny}")
        if not (self.lx > 0 and math.isfinite(self.lx)):
            raise ValueError(f"lx must be positive, got {self.lx}")
        if not self.y1 > self.y0:
            raise ValueError(f"need y1 > y0, got y0={self.y0}, y1={self.y1}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def area(self) -> float:
        return self.lx * (self.y1 - self.y0)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.hx

    @property
    def y(self) -> np.ndarray:
        y = self.y0 + np.arange(self.ny) * self.hy
        y[-1] = self.y1
        return y

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays ``(X, Y)`` of shape ``(nx, ny)``."""
        return np.meshgrid(self.x, self.y, indexing="ij")


def make_grid(nx: int, ny: int, lx: float, y0: float, y1: float) -> Grid:
    return Grid(int(nx), int(ny), float(lx), float(y0), float(y1))


@dataclass(frozen=True)
class BC:
    """Wall condition of a scalar field; x is always periodic.

    ``lower``/``upper`` are the wall values at ``y0``/``y1`` and are only
    meaningful for Dirichlet conditions.
    """

    kind: BCKind = "neumann"
    lower: float = 0.0
    upper: float = 0.0

    def __post_init__(self):
        if self.kind not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")

    @property
    def dirichlet(self) -> bool:
        return self.kind == "dirichlet"

    def homogeneous(self) -> "BC":
        return BC(self.kind)


NEUMANN = BC("neumann")
NO_SLIP = BC("dirichlet", 0.0, 0.0)


def enforce_bc(values: np.ndarray, bc: BC) -> np.ndarray:
    """Write Dirichlet wall values into ``values`` in place and return it."""
    if bc.dirichlet:
        values[..., 0] = bc.lower
        values[..., -1] = bc.upper
    return values


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray
    bc: BC = NEUMANN

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    def apply_bc(self) -> "ScalarField":
        enforce_bc(self.values, self.bc)
        return self

    def is_valid(self) -> bool:
        if not np.all(np.isfinite(self.values)):
            return False
        if self.bc.dirichlet:
            return bool(np.all(self.values[:, 0] == self.bc.lower) and np.all(self.values[:, -1] == self.bc.upper))
        return True

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.bc)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values, self.bc)

    @classmethod
    def zeros(cls, grid: Grid, bc: BC = NEUMANN) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape), bc).apply_bc()


@dataclass
class VectorField2:
    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if self.x.grid != self.y.grid:
            raise ValueError("vector components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.x.grid

    @property
    def values(self) -> np.ndarray:
        """Stacked copy of the components, shape ``(2, nx, ny)``."""
        return np.stack([self.x.values, self.y.values])

    @property
    def bcs(self) -> tuple[BC, BC]:
        return (self.x.bc, self.y.bc)

    def apply_bc(self) -> "VectorField2":
        self.x.apply_bc()
        self.y.apply_bc()
        return self

    def is_valid(self) -> bool:
        return self.x.is_valid() and self.y.is_valid()

    def copy(self) -> "VectorField2":
        return VectorField2(self.x.copy(), self.y.copy())

    def with_values(self, values: np.ndarray) -> "VectorField2":
        return VectorField2(self.x.with_values(values[0]), self.y.with_values(values[1]))

    @classmethod
    def from_arrays(cls, grid: Grid, values, bcs: tuple[BC, BC] = (NEUMANN, NEUMANN)) -> "VectorField2":
        return cls(ScalarField(grid, values[0], bcs[0]), ScalarField(grid, values[1], bcs[1]))

    @classmethod
    def zeros(cls, grid: Grid, bcs: tuple[BC, BC] = (NEUMANN, NEUMANN)) -> "VectorField2":
        return cls(ScalarField.zeros(grid, bcs[0]), ScalarField.zeros(grid, bcs[1]))


@dataclass(frozen=True)
class PhysParams:
    """Normalized model constants; defaults are the reference parameter set."""

    lam: float = 2.5
    eta: float = 0.02
    eps: float = 0.02
    tau: float = 16.0
    m1: float = 0.08
    m2: float = 2.0
    mu4: float = 1.0
    h: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for name in ("lam", "eta", "eps", "m1", "m2", "mu4"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not self.tau >= 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        object.__setattr__(self, "h", (float(self.h[0]), float(self.h[1])))
        if abs(math.hypot(*self.h) - 1.0) > 1e-14:
            raise ValueError(f"magnetic direction h must be a unit vector, got {self.h}")


@dataclass(frozen=True)
class SchemeParams:
    """Time-step constants.

    ``stab_s=None`` means "use the smallest stabilizer that keeps the scheme
    energy stable", resolved against the physical parameters by
    :func:`smectic_flow.potential.resolve_stabilizer`.
    """

    dt: float = 1e-3
    stab_s: float | None = None
    krylov_tol: float = 1e-10
    krylov_maxit: int = 500

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.stab_s is not None and self.stab_s < 0:
            raise ValueError(f"stab_s must be non-negative, got {self.stab_s}")
        if not 0 < self.krylov_tol < 1:
            raise ValueError(f"krylov_tol must lie in (0, 1), got {self.krylov_tol}")
        if self.krylov_maxit < 1:
            raise ValueError("krylov_maxit must be >= 1")


@dataclass
class State:
    u: VectorField2
    p: ScalarField
    phi: ScalarField
    d: VectorField2
    time: float = 0.0
    step: int = 0

    def __post_init__(self):
        grids = {self.u.grid, self.p.grid, self.phi.grid, self.d.grid}
        if len(grids) != 1:
            raise ValueError("state fields must share one grid")

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    def is_valid(self) -> bool:
        # the projected velocity keeps an O(dt) tangential slip on the walls,
        # so only finiteness is required of it
        u_ok = bool(np.all(np.isfinite(self.u.x.values)) and np.all(np.isfinite(self.u.y.values)))
        return u_ok and self.p.is_valid() and self.phi.is_valid() and self.d.is_valid()

    def copy(self) -> "State":
        return replace(self, u=self.u.copy(), p=self.p.copy(), phi=self.phi.copy(), d=self.d.copy())


def zero_mean_noise(grid: Grid, amplitude: float, seed, interior_only: bool = False) -> ScalarField:
    """Uniform noise in ``[-amplitude, amplitude]`` with its arithmetic mean removed.

    Draws come from numpy's PCG64 generator seeded with ``seed`` (an int or a
    ``numpy.random.SeedSequence``).  With ``interior_only`` the wall rows are
    left at zero and the mean is taken over interior nodes only.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    rng = np.random.Generator(np.random.PCG64(seed))
    values = np.zeros(grid.shape)
    target = values[:, 1:-1] if interior_only else values
    draw = rng.uniform(-1.0, 1.0, size=target.shape) * amplitude
    target[...] = draw - draw.mean()
    return ScalarField(grid, values)


__all__ = [
    "BC",
    "BCKind",
    "Grid",
    "NEUMANN",
    "NO_SLIP",
    "PhysParams",
    "ScalarField",
    "SchemeParams",
    "State",
    "VectorField2",
    "enforce_bc",
    "make_grid",
    "zero_mean_noise",
]
