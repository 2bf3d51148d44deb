"""Piecewise-linear finite elements on the unit interval.

Uniform mesh with homogeneous Dirichlet conditions, hat-function mass and
stiffness matrices (exact element integrals), and the discrete Laplacian
exposed through the generalized eigenproblem ``S phi = lambda M phi``.

Coefficient vectors may carry a trailing batch axis: an array of shape
``(N,)`` is one function, ``(N, B)`` is ``B`` functions side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla


class InvalidMeshError(ValueError):
    pass


class DecompositionError(RuntimeError):
    pass


class NumericDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh1D:
    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise InvalidMeshError(
                f"need at least 2 cells for an interior node, got {self.n_cells}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def n_dofs(self) -> int:
        return self.n_cells - 1

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.arange(1, self.n_cells) / self.n_cells


def build_uniform_mesh(n_cells: int) -> Mesh1D:
    return Mesh1D(n_cells)


def mesh_from_width(h: float) -> Mesh1D:
    """Mesh with width ``h``; ``1/h`` must be an integer (up to rounding)."""
    n = round(1.0 / h)
    if n < 2 or abs(n * h - 1.0) > 1e-9:
        raise InvalidMeshError(f"1/h must be an integer >= 2, got h={h!r}")
    return Mesh1D(n)


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Mass/stiffness pair on a mesh, optionally with its spectral data.

    ``eigvecs`` holds M-orthonormal generalized eigenvectors as columns, so
    ``eigvecs.T @ M @ eigvecs = I`` and ``eigvecs.T @ S @ eigvecs = diag(eigvals)``.
    """

    mesh: Mesh1D
    mass_diag: np.ndarray
    mass_off: np.ndarray
    stiff_diag: np.ndarray
    stiff_off: np.ndarray
    eigvals: np.ndarray | None = None
    eigvecs: np.ndarray | None = None
    # per-system scratch for factorizations and transforms; not part of the value
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_dofs

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def M(self) -> np.ndarray:
        return _cached(self, "M", lambda: _tridiag_dense(self.mass_diag, self.mass_off))

    @property
    def S(self) -> np.ndarray:
        return _cached(self, "S", lambda: _tridiag_dense(self.stiff_diag, self.stiff_off))

    @property
    def has_spectrum(self) -> bool:
        return self.eigvals is not None

    def require_spectrum(self) -> None:
        if not self.has_spectrum:
            raise ValueError("spectral fields unset; call spectral_decompose first")

    @property
    def omega(self) -> np.ndarray:
        """Square roots of the discrete eigenvalues."""
        self.require_spectrum()
        return _cached(self, "omega", lambda: np.sqrt(self.eigvals))

    @property
    def to_modal(self) -> np.ndarray:
        """Matrix ``Phi^T M`` mapping nodal coefficients to modal ones."""
        self.require_spectrum()
        return _cached(self, "to_modal", lambda: self.eigvecs.T @ self.M)

    def mass_apply(self, v: np.ndarray) -> np.ndarray:
        return _tridiag_apply(self.mass_diag, self.mass_off, v)

    def stiff_apply(self, v: np.ndarray) -> np.ndarray:
        return _tridiag_apply(self.stiff_diag, self.stiff_off, v)

    def mass_solve(self, b: np.ndarray) -> np.ndarray:
        return spd_tridiag_solve(self, "mass", self.mass_diag, self.mass_off, b)

    def stiff_solve(self, b: np.ndarray) -> np.ndarray:
        return spd_tridiag_solve(self, "stiff", self.stiff_diag, self.stiff_off, b)


def _cached(system: FemSystem, key, build):
    try:
        return system.cache[key]
    except KeyError:
        value = system.cache[key] = build()
        return value


def _tridiag_dense(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def _tridiag_apply(diag, off, v):
    v = np.asarray(v, dtype=float)
    out = diag.reshape((-1,) + (1,) * (v.ndim - 1)) * v
    o = off.reshape((-1,) + (1,) * (v.ndim - 1))
    out[:-1] += o * v[1:]
    out[1:] += o * v[:-1]
    return out


def spd_tridiag_solve(system: FemSystem, key, diag, off, b):
    """Solve with a symmetric positive-definite tridiagonal matrix.

    The banded Cholesky factor is cached on ``system`` under ``key``.
    """
    factor = system.cache.get(("chol", key))
    if factor is None:
        ab = np.zeros((2, diag.size))
        ab[0, 1:] = off
        ab[1] = diag
        factor = system.cache[("chol", key)] = sla.cholesky_banded(ab)
    return sla.cho_solve_banded((factor, False), np.asarray(b, dtype=float))


def assemble(mesh: Mesh1D) -> FemSystem:
    h = mesh.h
    n = mesh.n_dofs
    return FemSystem(
        mesh=mesh,
        mass_diag=np.full(n, 2.0 * h / 3.0),
        mass_off=np.full(n - 1, h / 6.0),
        stiff_diag=np.full(n, 2.0 / h),
        stiff_off=np.full(n - 1, -1.0 / h),
    )


def spectral_decompose(system: FemSystem) -> FemSystem:
    try:
        lam, vecs = sla.eigh(system.S, system.M)
    except (sla.LinAlgError, ValueError) as exc:
        raise DecompositionError(str(exc)) from exc
    if not np.all(np.isfinite(lam)) or lam[0] <= 0:
        raise DecompositionError("non-positive or non-finite generalized eigenvalue")
    # fix the sign so the first nonzero nodal entry of each eigenvector is positive
    idx = np.argmax(np.abs(vecs) > 1e-12 * np.abs(vecs).max(axis=0), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    vecs = vecs * signs
    out = replace(system, eigvals=lam, eigvecs=vecs, cache={})
    out.cache.update({k: v for k, v in system.cache.items() if k in ("M", "S")})
    return out


def build_system(n_cells: int) -> FemSystem:
    """Assembled and spectrally decomposed system on a uniform mesh."""
    return spectral_decompose(assemble(build_uniform_mesh(n_cells)))


def discrete_eigenvalue_formula(mesh: Mesh1D) -> np.ndarray:
    """Closed-form discrete eigenvalues ``(6/h^2)(1-cos(j pi h))/(2+cos(j pi h))``."""
    h = mesh.h
    c = np.cos(np.arange(1, mesh.n_cells) * np.pi * h)
    return 6.0 / h**2 * (1.0 - c) / (2.0 + c)


def apply_spectral_function(system: FemSystem, f: Callable[[np.ndarray], np.ndarray],
                            v: np.ndarray) -> np.ndarray:
    """Coefficients of ``f(Lambda_h) v``, i.e. ``Phi f(diag lam) Phi^T M v``."""
    system.require_spectrum()
    vals = np.asarray(f(system.eigvals), dtype=float)
    vals = np.broadcast_to(vals, system.eigvals.shape)
    if not np.all(np.isfinite(vals)):
        raise NumericDomainError("spectral function is not finite on the discrete spectrum")
    a = system.to_modal @ v
    a = vals.reshape((-1,) + (1,) * (a.ndim - 1)) * a
    return system.eigvecs @ a


def l2_project(system: FemSystem, load: np.ndarray) -> np.ndarray:
    """Coefficients of the L2 projection given ``load_i = (g, phi_i)``."""
    load = np.asarray(load, dtype=float)
    if load.shape[0] != system.n_dofs:
        raise ValueError(f"load has length {load.shape[0]}, expected {system.n_dofs}")
    return system.mass_solve(load)


def ritz_project(system: FemSystem, stiffness_load: np.ndarray) -> np.ndarray:
    """Coefficients of the Ritz projection given ``b_i = (grad g, grad phi_i)``."""
    b = np.asarray(stiffness_load, dtype=float)
    if b.shape[0] != system.n_dofs:
        raise ValueError(f"load has length {b.shape[0]}, expected {system.n_dofs}")
    return system.stiff_solve(b)


def h_alpha_norm(system: FemSystem, v: np.ndarray, alpha: float) -> float | np.ndarray:
    """Discrete norm ``||Lambda_h^{alpha/2} v||``.

    Computed with quadratic forms for ``alpha`` in {0, 1} and spectrally
    otherwise.
    """
    v = np.asarray(v, dtype=float)
    if alpha == 0:
        q = np.sum(v * system.mass_apply(v), axis=0)
    elif alpha == 1:
        q = np.sum(v * system.stiff_apply(v), axis=0)
    else:
        if not -1.0 <= alpha <= 2.0:
            raise ValueError(f"alpha must lie in [-1, 2], got {alpha}")
        a = system.to_modal @ v
        w = system.eigvals**alpha
        q = np.sum(w.reshape((-1,) + (1,) * (a.ndim - 1)) * a * a, axis=0)
    return np.sqrt(np.maximum(q, 0.0))


# ---------------------------------------------------------------------------
# load vectors

def sine_load(mesh: Mesh1D, j: int | np.ndarray) -> np.ndarray:
    """Exact ``(sin(j pi x), phi_i)`` for every interior node.

    ``j`` may be an array of mode numbers; the result then has shape ``(N, len(j))``.
    """
    j = np.asarray(j, dtype=float)
    h = mesh.h
    x = mesh.interior_nodes
    a = j * np.pi
    factor = 4.0 / (a**2 * h) * np.sin(a * h / 2.0) ** 2
    return np.sin(np.multiply.outer(x, a)) * factor


def mode_load(mesh: Mesh1D, j) -> np.ndarray:
    """Load vector of the orthonormal sine mode ``sqrt(2) sin(j pi x)``."""
    return np.sqrt(2.0) * sine_load(mesh, j)


def sine_stiffness_load(mesh: Mesh1D, j: int) -> np.ndarray:
    """Exact ``(d/dx sin(j pi x), phi_i')``; equals ``(j pi)^2`` times the mass load."""
    return (j * np.pi) ** 2 * sine_load(mesh, j)


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(4)


def quadrature_load(mesh: Mesh1D, g: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``(g, phi_i)`` by composite 4-point Gauss quadrature on each element."""
    h = mesh.h
    left = np.arange(mesh.n_cells) * h
    xq = left[:, None] + 0.5 * h * (_GAUSS_X + 1.0)
    wq = 0.5 * h * _GAUSS_W
    gq = g(xq) * wq
    t = (xq - left[:, None]) / h
    # element e spans nodes e and e+1; hat of node e+1 rises on it, hat of node e falls
    rising = np.sum(gq * t, axis=1)
    falling = np.sum(gq * (1.0 - t), axis=1)
    return rising[:-1] + falling[1:]


def interval_indicator_load(mesh: Mesh1D, a: float, b: float) -> np.ndarray:
    """Exact ``(1_[a,b], phi_i)``."""
    h = mesh.h
    x = mesh.interior_nodes

    def rise(lo, hi):
        # integral of (t - x_{i-1})/h over [lo, hi] within the left half of the hat
        lo, hi = np.maximum(lo, x - h), np.minimum(hi, x)
        ok = hi > lo
        val = ((hi - (x - h)) ** 2 - (lo - (x - h)) ** 2) / (2 * h)
        return np.where(ok, val, 0.0)

    def fall(lo, hi):
        lo, hi = np.maximum(lo, x), np.minimum(hi, x + h)
        ok = hi > lo
        val = (((x + h) - lo) ** 2 - ((x + h) - hi) ** 2) / (2 * h)
        return np.where(ok, val, 0.0)

    return rise(a, b) + fall(a, b)


def prolongate(coarse: np.ndarray, coarse_mesh: Mesh1D, fine_mesh: Mesh1D) -> np.ndarray:
    """Nodal values on ``fine_mesh`` of a piecewise-linear function on ``coarse_mesh``.

    Exact for nested meshes; works along axis 0 with any trailing batch axes.
    """
    ratio = fine_mesh.n_cells // coarse_mesh.n_cells
    if ratio * coarse_mesh.n_cells != fine_mesh.n_cells:
        raise InvalidMeshError("meshes are not nested")
    coarse = np.asarray(coarse, dtype=float)
    pad = np.zeros((1,) + coarse.shape[1:])
    full = np.concatenate([pad, coarse, pad])
    i = np.arange(1, fine_mesh.n_cells)
    left = i // ratio
    t = ((i % ratio) / ratio).reshape((-1,) + (1,) * (coarse.ndim - 1))
    right = np.minimum(left + 1, coarse_mesh.n_cells)
    return (1.0 - t) * full[left] + t * full[right]
