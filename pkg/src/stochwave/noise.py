"""Q-Wiener noise with covariance ``Q = Lambda^{-s}`` on (0, 1).

The process is expanded over the Dirichlet sine modes
``e_j = sqrt(2) sin(j pi x)``, ``j = 1..J``, with eigenvalues
``gamma_j = (j pi)^{-2s}``. Brownian increments come from a counter-based
generator so that every value is a pure function of
``(seed, sample, mode, base step)``:

* the raw 64-bit word at base step ``n`` of the stream keyed by
  ``(seed, sample << 32 | j)`` is output ``n`` of numpy's Philox4x64-10;
* it is mapped to a standard normal by the inverse CDF
  (``ndtri`` of the 53-bit midpoint uniform).

Consequently truncation at ``J1 < J2`` reproduces the first ``J1`` rows
exactly, and any window can be regenerated without storing the path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .fem import FemSystem, mode_load

RNG_ID = "philox4x64-10/inverse-cdf(ndtri)/v1"
DEFAULT_MEMORY_BUDGET = 2 * 1024**3


class WindowError(ValueError):
    pass


class PathTooLargeError(MemoryError):
    pass


@dataclass(frozen=True)
class CovarianceModel:
    s: float = 0.0
    J: int = 1

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("s must be nonnegative")
        if int(self.J) != self.J or self.J < 1:
            raise ValueError("truncation J must be a positive integer")

    @property
    def beta_nominal(self) -> float:
        """Supremum of the admissible regularity, capped at 4 (d = 1)."""
        return min(0.5 + self.s, 4.0)

    @property
    def gammas(self) -> np.ndarray:
        return (np.arange(1, self.J + 1) * np.pi) ** (-2.0 * self.s)

    def with_truncation(self, J: int) -> "CovarianceModel":
        return CovarianceModel(self.s, J)


def covariance_eigenpair(model: CovarianceModel, j: int):
    """Return ``(gamma_j, e_j)`` with ``e_j`` a callable on x."""
    if not 1 <= j <= model.J:
        raise IndexError(f"mode {j} outside 1..{model.J}")
    gamma = (j * np.pi) ** (-2.0 * model.s)

    def mode(x):
        return np.sqrt(2.0) * np.sin(j * np.pi * np.asarray(x))

    return gamma, mode


def standard_normals(seed: int, sample: int, j: int, n1: int, n2: int) -> np.ndarray:
    """Standard normals at base steps ``n1..n2-1`` of mode ``j`` (1-based)."""
    if n2 <= n1:
        return np.empty(0)
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, ((int(sample) & 0xFFFFFFFF) << 32) | int(j)]
    start = n1 // 4
    raw = Philox(key=key, counter=start).random_raw(n2 - 4 * start)[n1 - 4 * start:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class ModeIncrements:
    dt: float
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class CoupledPath:
    """Brownian-mode increments on a uniform grid of ``n_base_steps`` steps.

    ``table`` is ``None`` in streaming mode; windows are then regenerated
    from the counter-based generator and agree bit-for-bit with the stored
    variant.
    """

    seed: int
    base_dt: float
    n_base_steps: int
    J: int
    sample: int = 0
    table: np.ndarray | None = field(default=None, repr=False)

    def base_increments(self, n1: int, n2: int) -> np.ndarray:
        """Increments of each base step in ``[n1, n2)``, shape ``(J, n2 - n1)``."""
        if self.table is not None:
            return self.table[:, n1:n2]
        scale = np.sqrt(self.base_dt)
        return np.stack([scale * standard_normals(self.seed, self.sample, j, n1, n2)
                         for j in range(1, self.J + 1)])


def make_coupled_path(seed: int, base_dt: float, n_base_steps: int, J: int, *,
                      sample: int = 0, memory_budget: int = DEFAULT_MEMORY_BUDGET,
                      streaming: bool = False) -> CoupledPath:
    if base_dt <= 0 or n_base_steps < 1 or J < 1:
        raise ValueError("base_dt, n_base_steps and J must be positive")
    path = CoupledPath(seed, float(base_dt), int(n_base_steps), int(J), sample)
    if streaming:
        return path
    if 8 * J * n_base_steps > memory_budget:
        raise PathTooLargeError(
            f"path of {J} x {n_base_steps} increments exceeds the memory budget; "
            "use streaming=True")
    table = path.base_increments(0, n_base_steps)
    return CoupledPath(seed, float(base_dt), int(n_base_steps), int(J), sample, table)


def sample_mode_increments(path: CoupledPath, window: tuple[int, int]) -> ModeIncrements:
    n1, n2 = window
    if not 0 <= n1 < n2 <= path.n_base_steps:
        raise WindowError(f"window [{n1}, {n2}) not inside [0, {path.n_base_steps})")
    values = path.base_increments(n1, n2).sum(axis=1)
    return ModeIncrements((n2 - n1) * path.base_dt, values)


def increment_batch(seed: int, samples, J: int, n_base_steps: int,
                    base_dt: float) -> np.ndarray:
    """Base increments for several samples at once, shape ``(B, J, n_base_steps)``.

    Row ``b`` equals the table of ``make_coupled_path(seed, ..., sample=samples[b])``.
    """
    samples = list(samples)
    out = np.empty((len(samples), J, n_base_steps))
    scale = np.sqrt(base_dt)
    for b, smp in enumerate(samples):
        for j in range(1, J + 1):
            out[b, j - 1] = standard_normals(seed, smp, j, 0, n_base_steps)
    out *= scale
    return out


class NoiseProjector:
    """Maps mode increments to coefficients of ``P_h dW`` on a given system.

    Holds the ``N x J`` matrix whose column ``j`` is
    ``gamma_j^{1/2} M^{-1} b_j`` with ``b_j`` the exact load of ``e_j``.
    """

    def __init__(self, system: FemSystem, model: CovarianceModel):
        self.system = system
        self.model = model
        loads = mode_load(system.mesh, np.arange(1, model.J + 1))
        self.loads = loads
        self.matrix = system.mass_solve(loads) * np.sqrt(model.gammas)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """``values`` has shape ``(J,)`` or ``(J, B)``."""
        return self.matrix @ values

    def covariance(self) -> np.ndarray:
        """Nodal covariance of the projected unit-time increment."""
        return self.matrix @ self.matrix.T

    def trace(self) -> float:
        """``Tr(P_h Q P_h) = sum_j gamma_j b_j^T M^{-1} b_j``."""
        quad = np.sum(self.loads * self.system.mass_solve(self.loads), axis=0)
        return float(np.sum(self.model.gammas * quad))


def projector_for(system: FemSystem, model: CovarianceModel) -> NoiseProjector:
    """Projector cached on ``system`` per covariance model."""
    projector = system.cache.get(("noise", model))
    if projector is None:
        projector = system.cache[("noise", model)] = NoiseProjector(system, model)
    return projector


def project_increment(system: FemSystem, model: CovarianceModel,
                      inc: ModeIncrements) -> np.ndarray:
    return projector_for(system, model)(np.asarray(inc.values, dtype=float))


def trace_ph_q_ph(system: FemSystem, model: CovarianceModel) -> float:
    return projector_for(system, model).trace()
