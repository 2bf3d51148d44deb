"""Energies, strong errors, slope fits and exact second-moment propagation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import FemSystem
from .integrators import LINEAR_SCHEMES, State, Stepper, sinc
from .noise import CovarianceModel, projector_for


class SampleCountError(ValueError):
    pass


class UnsupportedSchemeError(ValueError):
    pass


@dataclass(frozen=True)
class EnergySample:
    t: float
    value: float


@dataclass(frozen=True)
class ErrorRow:
    scheme: str
    h: float
    k: float
    component: int
    rmse: float
    stderr: float
    M: int

    @property
    def exploded(self) -> bool:
        return not math.isfinite(self.rmse)


@dataclass
class ErrorTable:
    """Strong errors against one reference; ``resolution`` names the abscissa."""

    resolution: str = "k"
    rows: list[ErrorRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def abscissa(self) -> np.ndarray:
        return np.array([getattr(r, self.resolution) for r in self.rows])

    def errors(self) -> np.ndarray:
        return np.array([r.rmse for r in self.rows])

    def select(self, **match) -> "ErrorTable":
        rows = [r for r in self.rows if all(getattr(r, key) == val for key, val in match.items())]
        return ErrorTable(self.resolution, rows)

    def finite(self) -> "ErrorTable":
        return ErrorTable(self.resolution, [r for r in self.rows if not r.exploded])


@dataclass(frozen=True)
class CurveRow:
    scheme: str
    t: float
    energy: float
    stderr: float
    exact_energy: float


@dataclass
class EnergyCurve:
    rows: list[CurveRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def select(self, scheme: str) -> "EnergyCurve":
        return EnergyCurve([r for r in self.rows if r.scheme == scheme])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


# ---------------------------------------------------------------------------

def discrete_energy(system: FemSystem, x: State, term=None):
    """``(u1^T S u1 + u2^T M u2) / 2``, plus the lumped potential of ``term`` if given.

    Returns a float for a single state and an array for a batch.
    """
    e = 0.5 * (np.sum(x.u1 * system.stiff_apply(x.u1), axis=0)
               + np.sum(x.u2 * system.mass_apply(x.u2), axis=0))
    if term is not None and term.potential is not None:
        e = e + system.h * np.sum(term.potential(x.u1), axis=0)
    return e if np.ndim(e) else float(e)


def _jackknife_root(q: np.ndarray) -> tuple[float, float]:
    n = q.size
    if n < 2:
        raise SampleCountError(f"need at least 2 samples, got {n}")
    total = q.sum()
    root = math.sqrt(max(total / n, 0.0))
    loo = np.sqrt(np.maximum((total - q) / (n - 1), 0.0))
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return root, se


def rms_error(system: FemSystem, diffs: np.ndarray) -> tuple[float, float]:
    """Root of the mean of ``e^T M e`` over the columns of ``diffs``, with jackknife error."""
    diffs = np.asarray(diffs, dtype=float)
    if diffs.ndim != 2:
        raise SampleCountError("differences must be an (N, samples) array")
    q = np.sum(diffs * system.mass_apply(diffs), axis=0)
    return _jackknife_root(q)


def strong_error(system: FemSystem, samples, component: int = 1) -> tuple[float, float]:
    """Mean-square error of one component over matched ``(approx, reference)`` pairs."""
    samples = list(samples)
    if len(samples) < 2:
        raise SampleCountError(f"need at least 2 samples, got {len(samples)}")
    if component not in (1, 2):
        raise ValueError("component must be 1 or 2")
    attr = "u1" if component == 1 else "u2"
    diffs = np.stack([getattr(a, attr) - getattr(r, attr) for a, r in samples], axis=1)
    return rms_error(system, diffs)


def fit_loglog(x, y) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError(f"need at least 3 points for a slope, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("log-log fit needs positive finite data")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def fit_slope(table: ErrorTable) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log(rmse)`` against ``log(resolution)``."""
    return fit_loglog(table.abscissa(), table.errors())


def fit_line(t, values) -> tuple[float, float]:
    slope, intercept = np.polyfit(np.asarray(t, float), np.asarray(values, float), 1)
    return float(slope), float(intercept)


# ---------------------------------------------------------------------------
# second moments

@dataclass
class SecondMoment:
    """Blocks of ``E[X X^T]`` for ``X = (u1, u2)`` in nodal coefficients."""

    C11: np.ndarray
    C12: np.ndarray
    C22: np.ndarray

    @classmethod
    def from_state(cls, x: State) -> "SecondMoment":
        return cls(np.outer(x.u1, x.u1), np.outer(x.u1, x.u2), np.outer(x.u2, x.u2))

    @classmethod
    def from_full(cls, C: np.ndarray) -> "SecondMoment":
        n = C.shape[0] // 2
        return cls(C[:n, :n], C[:n, n:], C[n:, n:])

    def full(self) -> np.ndarray:
        return np.block([[self.C11, self.C12], [self.C12.T, self.C22]])

    def energy(self, system: FemSystem) -> float:
        """Expected energy ``(tr(S C11) + tr(M C22)) / 2``."""
        return 0.5 * float(np.sum(system.S * self.C11) + np.sum(system.M * self.C22))


def one_step_maps(system: FemSystem, scheme: str, k: float):
    """Matrices of a linear scheme: ``X' = T X + sum_i N_i dW_i``.

    Returns ``T`` and a list of ``(N_i, fraction_i)`` where ``dW_i`` spans
    ``fraction_i * k`` of the step. Obtained by stepping unit vectors.
    """
    if scheme not in LINEAR_SCHEMES:
        raise UnsupportedSchemeError(f"no exact moment recursion for scheme {scheme!r}")
    n = system.n_dofs
    step = Stepper(scheme, system, k)
    eye, zero = np.eye(n), np.zeros((n, n))

    def stacked(x):
        return np.vstack([x.u1, x.u2])

    T = np.hstack([stacked(step(State(eye, zero), zero, zero)),
                   stacked(step(State(zero, eye), zero, zero))])
    if step.needs_half_steps:
        noise = [(stacked(step(State(zero, zero), eye, zero)), 0.5),
                 (stacked(step(State(zero, zero), zero, eye)), 0.5)]
    else:
        noise = [(stacked(step(State(zero, zero), eye, zero)), 1.0)]
    return T, noise


def _trig_product_integrals(a: np.ndarray, b: np.ndarray, k: float):
    """``int_0^k`` of sin*sin, sin*cos, cos*cos at frequencies ``a[i]``, ``b[j]``."""
    plus = np.add.outer(a, b)
    minus = np.subtract.outer(a, b)

    def cos_int(c):
        return k * sinc(c * k)

    def sin_int(c):
        return k * np.sin(0.5 * c * k) * sinc(0.5 * c * k)

    ss = 0.5 * (cos_int(minus) - cos_int(plus))
    cc = 0.5 * (cos_int(minus) + cos_int(plus))
    sc = 0.5 * (sin_int(plus) + sin_int(minus))
    return ss, sc, cc


def exact_noise_covariance(system: FemSystem, model: CovarianceModel, k: float) -> np.ndarray:
    """Covariance of ``int_0^k E_h(k - s) P_h B dW(s)`` in nodal coefficients.

    The modal blocks are closed-form trigonometric integrals; no time
    quadrature is involved.
    """
    proj = projector_for(system, model)
    phi, om = system.eigvecs, system.omega
    Qm = system.to_modal @ proj.covariance() @ system.to_modal.T
    ss, sc, cc = _trig_product_integrals(om, om, k)
    C11 = Qm * ss / np.outer(om, om)
    C12 = Qm * sc / om[:, None]
    C22 = Qm * cc
    Cm = np.block([[C11, C12], [C12.T, C22]])
    P = np.zeros((2 * phi.shape[0], 2 * phi.shape[1]))
    n = phi.shape[0]
    P[:n, :n] = phi
    P[n:, n:] = phi
    return P @ Cm @ P.T


def propagate_second_moment(system: FemSystem, model: CovarianceModel, scheme: str,
                            k: float, n_steps: int, initial: State):
    """Yield the second moment after 0, 1, ..., ``n_steps`` steps.

    ``scheme`` is one of the linear schemes or ``"exact"`` (exact semidiscrete
    flow sampled at multiples of ``k``).
    """
    if scheme == "exact":
        T, _ = one_step_maps(system, "stm", k)
        noise_cov = exact_noise_covariance(system, model, k)
    else:
        T, noise = one_step_maps(system, scheme, k)
        Q = projector_for(system, model).covariance()
        noise_cov = sum(frac * k * N @ Q @ N.T for N, frac in noise)
    C = SecondMoment.from_state(initial).full()
    yield SecondMoment.from_full(C)
    for _ in range(n_steps):
        C = T @ C @ T.T + noise_cov
        C = 0.5 * (C + C.T)
        yield SecondMoment.from_full(C)


def propagate_expected_energy(system: FemSystem, model: CovarianceModel, scheme: str,
                              k: float, n_steps: int, initial: State) -> list[EnergySample]:
    return [EnergySample(n * k, m.energy(system))
            for n, m in enumerate(propagate_second_moment(system, model, scheme, k, n_steps,
                                                          initial))]
