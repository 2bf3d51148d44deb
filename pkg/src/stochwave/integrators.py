"""Time steppers for the semidiscrete stochastic wave equation.

All schemes advance a :class:`State` of nodal coefficient vectors
``(u1, u2)`` (position, velocity). The ``noise`` arguments are nodal
coefficients of the projected increment ``P_h dW`` over the step, or over
each half step for Stormer-Verlet. Every array may carry a trailing batch
axis, so ``B`` independent samples advance in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fem import FemSystem, spd_tridiag_solve

SCHEMES = ("stm", "stm-nl", "bem", "cnm", "sv")
LINEAR_SCHEMES = ("stm", "bem", "cnm", "sv")


class StepError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class State:
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        if np.shape(self.u1) != np.shape(self.u2):
            raise DimensionError(
                f"position {np.shape(self.u1)} and velocity {np.shape(self.u2)} differ in shape")

    @classmethod
    def zeros(cls, n: int, batch: int | None = None) -> "State":
        shape = (n,) if batch is None else (n, batch)
        return cls(np.zeros(shape), np.zeros(shape))

    def broadcast(self, batch: int) -> "State":
        """Copy a single state into ``batch`` identical columns."""
        return State(np.repeat(self.u1[:, None], batch, axis=1),
                     np.repeat(self.u2[:, None], batch, axis=1))

    def norm_max(self) -> float:
        return float(max(np.max(np.abs(self.u1), initial=0.0),
                         np.max(np.abs(self.u2), initial=0.0)))


def _check(system: FemSystem, x: State, *noises) -> None:
    n = system.n_dofs
    if x.u1.shape[0] != n:
        raise DimensionError(f"state has {x.u1.shape[0]} dofs, system has {n}")
    for w in noises:
        if np.shape(w) != np.shape(x.u1):
            raise DimensionError(f"noise shape {np.shape(w)} does not match state {np.shape(x.u1)}")


def _col(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (ndim - 1))


# ---------------------------------------------------------------------------
# stochastic trigonometric method

@dataclass(frozen=True, eq=False)
class Propagator:
    """Per-mode values of ``E_h(k)``: ``cos(k omega_j)`` and ``sin(k omega_j)``."""

    system: FemSystem
    k: float
    cos: np.ndarray
    sin: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def omega(self) -> np.ndarray:
        return self.system.omega

    def rotate(self, a1: np.ndarray, a2: np.ndarray):
        """Apply ``E_h(k)`` to modal coordinates."""
        c = _col(self.cos, a1.ndim)
        s = _col(self.sin, a1.ndim)
        w = _col(self.omega, a1.ndim)
        return c * a1 + (s / w) * a2, -(w * s) * a1 + c * a2


def make_stm_propagator(system: FemSystem, k: float) -> Propagator:
    if not k > 0:
        raise StepError(f"step must be positive, got {k}")
    system.require_spectrum()
    theta = k * system.omega
    return Propagator(system, float(k), np.cos(theta), np.sin(theta))


def stm_step(prop: Propagator, x: State, noise: np.ndarray) -> State:
    """One step of ``U' = E_h(k) U + E_h(k) P_h B dW``.

    The increment enters the velocity before the rotation, which is the
    same as pushing it through the column ``[Lambda_h^{-1/2} S_h; C_h]``.
    """
    system = prop.system
    _check(system, x, noise)
    to_modal = system.to_modal
    a1, a2 = prop.rotate(to_modal @ x.u1, to_modal @ (x.u2 + noise))
    return State(system.eigvecs @ a1, system.eigvecs @ a2)


# ---------------------------------------------------------------------------
# filtered nonlinear variant

def sinc(xi: np.ndarray) -> np.ndarray:
    """``sin(xi)/xi`` with a Taylor branch near zero."""
    xi = np.asarray(xi, dtype=float)
    small = np.abs(xi) < 1e-4
    safe = np.where(small, 1.0, xi)
    x2 = xi * xi
    return np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(safe) / safe)


@dataclass(frozen=True)
class FilterSet:
    psi: Callable[[np.ndarray], np.ndarray]
    phi: Callable[[np.ndarray], np.ndarray]
    psi0: Callable[[np.ndarray], np.ndarray]
    psi1: Callable[[np.ndarray], np.ndarray]

    def evaluate(self, xi: np.ndarray):
        return self.psi(xi), self.phi(xi), self.psi0(xi), self.psi1(xi)


def sinc_filters() -> FilterSet:
    """``psi = sinc^3``, ``phi = sinc``, ``psi0 = cos sinc^2``, ``psi1 = sinc^2``."""
    return FilterSet(
        psi=lambda xi: sinc(xi) ** 3,
        phi=sinc,
        psi0=lambda xi: np.cos(xi) * sinc(xi) ** 2,
        psi1=lambda xi: sinc(xi) ** 2,
    )


def unit_filters() -> FilterSet:
    one = np.ones_like
    return FilterSet(one, one, one, one)


@dataclass(frozen=True)
class NonlinearTerm:
    """Pointwise force ``g`` and its potential (``g = -V'``) for energies."""

    g: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], np.ndarray] | None = None


def sine_gordon_term() -> NonlinearTerm:
    return NonlinearTerm(g=lambda u: -np.sin(u), potential=lambda u: 1.0 - np.cos(u))


def zero_term() -> NonlinearTerm:
    return NonlinearTerm(g=np.zeros_like, potential=np.zeros_like)


def _filter_values(prop: Propagator, filters: FilterSet):
    vals = prop.cache.get(filters)
    if vals is None:
        xi = prop.k * prop.omega
        vals = prop.cache[filters] = tuple(np.broadcast_to(f, xi.shape).astype(float)
                                           for f in filters.evaluate(xi))
    return vals


def stm_nonlinear_step(prop: Propagator, filters: FilterSet, g: NonlinearTerm,
                       x: State, noise: np.ndarray) -> State:
    """Filtered trigonometric step for ``u'' + Lambda_h u = G(u) + dW``.

    ``G`` is evaluated at the nodal values of the filtered position and the
    result is used directly as a nodal coefficient vector.
    """
    system = prop.system
    _check(system, x, noise)
    to_modal, vecs = system.to_modal, system.eigvecs
    psi, phi, psi0, psi1 = (_col(v, x.u1.ndim) for v in _filter_values(prop, filters))
    k = prop.k

    a1 = to_modal @ x.u1
    force0 = to_modal @ g.g(vecs @ (phi * a1))
    b1, b2 = prop.rotate(a1, to_modal @ (x.u2 + noise))
    b1 = b1 + 0.5 * k * k * psi * force0
    force1 = to_modal @ g.g(vecs @ (phi * b1))
    b2 = b2 + 0.5 * k * (psi0 * force0 + psi1 * force1)
    return State(vecs @ b1, vecs @ b2)


# ---------------------------------------------------------------------------
# comparison schemes

def _shifted_solve(system: FemSystem, key, alpha: float, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(M + alpha S) y = rhs`` with a cached banded factorization."""
    return spd_tridiag_solve(system, (key, alpha),
                             system.mass_diag + alpha * system.stiff_diag,
                             system.mass_off + alpha * system.stiff_off, rhs)


def bem_step(system: FemSystem, k: float, x: State, noise: np.ndarray) -> State:
    """Backward Euler-Maruyama: ``X' = X + k A X' + B dW``."""
    _check(system, x, noise)
    rhs = system.mass_apply(x.u2 + noise) - k * system.stiff_apply(x.u1)
    u2 = _shifted_solve(system, "bem", k * k, rhs)
    return State(x.u1 + k * u2, u2)


def cnm_step(system: FemSystem, k: float, x: State, noise: np.ndarray) -> State:
    """Crank-Nicolson-Maruyama: ``X' = X + (k/2) A (X' + X) + B dW``."""
    _check(system, x, noise)
    q = 0.25 * k * k
    rhs = (system.mass_apply(x.u2 + noise) - k * system.stiff_apply(x.u1)
           - q * system.stiff_apply(x.u2))
    u2 = _shifted_solve(system, "cnm", q, rhs)
    return State(x.u1 + 0.5 * k * (x.u2 + u2), u2)


def sv_step(system: FemSystem, k: float, x: State, noise_half1: np.ndarray,
            noise_half2: np.ndarray) -> State:
    """Stochastic Stormer-Verlet with the two half-step increments."""
    _check(system, x, noise_half1, noise_half2)

    def accel(u):
        return -system.mass_solve(system.stiff_apply(u))

    v = x.u2 + 0.5 * k * accel(x.u1) + noise_half1
    u1 = x.u1 + k * v
    return State(u1, v + 0.5 * k * accel(u1) + noise_half2)


def sv_cfl_number(system: FemSystem, k: float) -> float:
    """``k sqrt(lambda_max)``; the leapfrog update is unstable above 2."""
    return float(k * np.sqrt(system.eigvals[-1]))


# ---------------------------------------------------------------------------
# uniform dispatch

class Stepper:
    """Scheme bound to a system and step size.

    ``needs_half_steps`` tells the caller to pass two half-window increments
    (Stormer-Verlet); every other scheme takes the full-window increment.
    """

    def __init__(self, scheme: str, system: FemSystem, k: float,
                 filters: FilterSet | None = None, term: NonlinearTerm | None = None):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        if not k > 0:
            raise StepError(f"step must be positive, got {k}")
        self.scheme = scheme
        self.system = system
        self.k = float(k)
        self.needs_half_steps = scheme == "sv"
        if scheme in ("stm", "stm-nl"):
            self.prop = make_stm_propagator(system, k)
        if scheme == "stm-nl":
            self.filters = filters or sinc_filters()
            self.term = term or sine_gordon_term()

    def __call__(self, x: State, noise, noise2=None) -> State:
        s = self.scheme
        if s == "stm":
            return stm_step(self.prop, x, noise)
        if s == "stm-nl":
            return stm_nonlinear_step(self.prop, self.filters, self.term, x, noise)
        if s == "bem":
            return bem_step(self.system, self.k, x, noise)
        if s == "cnm":
            return cnm_step(self.system, self.k, x, noise)
        return sv_step(self.system, self.k, x, noise, noise2)
