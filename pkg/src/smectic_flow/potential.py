"""Truncated Ginzburg-Landau penalty on the director length.

Inside the unit ball the penalty is the usual quartic ``(|d|^2-1)^2/(4 eps^2)``;
outside it grows only quadratically, ``(|d|-1)^2/(4 eps^2)``, so its Hessian is
bounded by ``L = 2/eps^2`` (attained radially at ``|d| = 1`` from inside).
Functions accept arrays whose last axis has length 2.
"""

from __future__ import annotations

import numpy as np


def _norm(d: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(d * d, axis=-1))


def g_value(d, eps: float, truncate: bool = True) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    r = _norm(d)
    inner = (r**2 - 1.0) ** 2 / (4.0 * eps**2)
    if not truncate:
        return inner
    outer = (r - 1.0) ** 2 / (4.0 * eps**2)
    return np.where(r <= 1.0, inner, outer)


def g_grad(d, eps: float, truncate: bool = True) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    r = _norm(d)[..., None]
    inner = (r**2 - 1.0) * d / eps**2
    if not truncate:
        return inner
    safe_r = np.where(r > 1.0, r, 1.0)
    outer = (r - 1.0) * d / (2.0 * eps**2 * safe_r)
    return np.where(r <= 1.0, inner, outer)


def g_hessian(d, eps: float) -> np.ndarray:
    """Analytic Hessian of the truncated penalty, shape ``(..., 2, 2)``.

    On ``|d| = 1`` this returns the inner-branch (one-sided) limit.
    """
    d = np.asarray(d, dtype=float)
    r = _norm(d)[..., None, None]
    eye = np.eye(2)
    ddT = d[..., :, None] * d[..., None, :]
    inner = ((r**2 - 1.0) * eye + 2.0 * ddT) / eps**2
    safe_r = np.where(r > 1.0, r, 1.0)
    # outer: radial curvature 1/(2eps^2), tangential (r-1)/(2 eps^2 r)
    outer = ((r - 1.0) / safe_r * eye + ddT / safe_r**3) / (2.0 * eps**2)
    return np.where(r <= 1.0, inner, outer)


def _fd_hessian_norm(points: np.ndarray, eps: float, step: float) -> np.ndarray:
    """Spectral norm of a central-difference Hessian built from :func:`g_grad`."""
    cols = []
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        cols.append((g_grad(points + e, eps) - g_grad(points - e, eps)) / (2.0 * step))
    hess = np.stack(cols, axis=-1)
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    return np.max(np.abs(np.linalg.eigvalsh(hess)), axis=-1)


def sampled_hessian_sup(eps: float, radius: float = 3.0, n: int = 101) -> float:
    """Largest finite-difference Hessian norm over an ``n x n`` lattice in ``|d| <= radius``.

    Unit-circle points are added and differenced one-sidedly from the inside,
    where the supremum is attained.
    """
    s = np.linspace(-radius, radius, n)
    X, Y = np.meshgrid(s, s, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    pts = pts[_norm(pts) <= radius]
    step = 1e-6
    sup = float(np.max(_fd_hessian_norm(pts, eps, step)))

    theta = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    # second difference of g along the radius, fully inside the unit ball
    hstep = 1e-5
    g0 = g_grad(ring, eps)
    g1 = g_grad(ring * (1.0 - hstep), eps)
    radial = np.sum((g0 - g1) * ring, axis=-1) / hstep
    return max(sup, float(np.max(np.abs(radial))))


def hessian_bound(eps: float, check: bool = True) -> float:
    """``L = 2/eps^2``, cross-checked against :func:`sampled_hessian_sup`."""
    bound = 2.0 / eps**2
    if check:
        sup = sampled_hessian_sup(eps)
        if sup > bound * (1.0 + 1e-3):
            raise RuntimeError(f"sampled Hessian norm {sup:g} exceeds analytic bound {bound:g}")
    return bound


def min_stabilizer(lam: float, hessian_bound_value: float) -> float:
    """Smallest stabilizer ``S`` for unconditional energy stability."""
    return lam * hessian_bound_value / 2.0


class TruncatedWell:
    """Penalty with its Hessian bound validated once at construction."""

    def __init__(self, eps: float, truncate: bool = True, check: bool = True):
        self.eps = float(eps)
        self.truncate = truncate
        self.hessian_bound = hessian_bound(self.eps, check=check and truncate)

    def value(self, d) -> np.ndarray:
        return g_value(d, self.eps, self.truncate)

    def grad(self, d) -> np.ndarray:
        return g_grad(d, self.eps, self.truncate)

    def __repr__(self):
        return f"TruncatedWell(eps={self.eps}, L={self.hessian_bound:g})"


def resolve_stabilizer(stab_s: float | None, lam: float, eps: float) -> float:
    """Return ``stab_s``, or the minimal stable value when it is ``None``."""
    if stab_s is None:
        return min_stabilizer(lam, 2.0 / eps**2)
    return float(stab_s)


__all__ = [
    "TruncatedWell",
    "g_grad",
    "g_hessian",
    "g_value",
    "hessian_bound",
    "min_stabilizer",
    "resolve_stabilizer",
    "sampled_hessian_sup",
]
