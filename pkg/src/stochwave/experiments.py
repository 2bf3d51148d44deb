"""Study runners: convergence in h and k, scheme comparison, energy drift,
Sine-Gordon and local defects.

All Monte Carlo runs share one engine. Samples are processed in batches of
fixed composition; every sample draws its increments from its own counter
stream, so results do not depend on the number of worker threads. Step
sizes are coupled by summing base increments of the finest level.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, validate
from .fem import (
    FemSystem,
    build_system,
    interval_indicator_load,
    l2_project,
    mesh_from_width,
    prolongate,
    sine_load,
)
from .integrators import State, Stepper, sine_gordon_term, sinc_filters, sv_cfl_number
from .noise import CovarianceModel, increment_batch, projector_for, trace_ph_q_ph
from .observables import (
    CurveRow,
    EnergyCurve,
    ErrorRow,
    ErrorTable,
    _jackknife_root,
    discrete_energy,
    fit_line,
    fit_loglog,
    fit_slope,
    propagate_second_moment,
)

GUARD = 1e12
BATCH_BUDGET = 256 * 1024**2


@dataclass(frozen=True)
class DefectSample:
    k: float
    n: int
    d1_msq: float
    d2_msq: float
    d1_stderr: float = 0.0

    def __post_init__(self):
        if self.d1_msq < 0 or self.d2_msq < 0:
            raise ValueError("mean-square defects are nonnegative")


@dataclass(frozen=True)
class StabilityRow:
    scheme: str
    k: float
    cfl_number: float
    guard_tripped: bool
    exploded: bool
    max_norm: float


@dataclass
class ConvergenceResult:
    table: ErrorTable
    slopes: dict = field(default_factory=dict)
    stability: list[StabilityRow] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def slope(self, scheme: str = "stm", h: float | None = None, component: int = 1) -> float:
        key = (scheme, h, component) if h is not None else None
        if key is None:
            matches = [v for (sc, _, c), v in self.slopes.items() if sc == scheme and c == component]
            if len(matches) != 1:
                raise KeyError(f"{len(matches)} slopes for scheme {scheme!r}; pass h")
            return matches[0]
        return self.slopes[key]


@dataclass
class TraceResult:
    curve: EnergyCurve
    exact: EnergyCurve
    trace: float
    initial_energy: float
    max_rel_deviation: float | None
    timings: dict = field(default_factory=dict)

    def line(self, t):
        return self.initial_energy + 0.5 * np.asarray(t) * self.trace


@dataclass
class SineGordonResult:
    curve: EnergyCurve
    energy_slope: float
    trace: float
    errors: ConvergenceResult
    timings: dict = field(default_factory=dict)

    @property
    def energy_slope_ratio(self) -> float:
        return self.energy_slope / (0.5 * self.trace)


@dataclass
class DefectResult:
    samples: list[DefectSample]
    exponent: float
    target: float
    timings: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# shared pieces

def _ratio(a: float, b: float) -> int:
    return int(round(a / b))


def system_for(h: float) -> FemSystem:
    return build_system(mesh_from_width(h).n_cells)


def linear_initial_state(system: FemSystem) -> State:
    """``u0 = sin(pi x)`` projected, ``v0 = 0``."""
    return State(l2_project(system, sine_load(system.mesh, 1)), np.zeros(system.n_dofs))


def sine_gordon_initial_state(system: FemSystem) -> State:
    """``u0 = 0``, ``v0`` the projected indicator of ``[1/4, 3/4]``."""
    v0 = l2_project(system, interval_indicator_load(system.mesh, 0.25, 0.75))
    return State(np.zeros(system.n_dofs), v0)


def _batches(M: int, size: int) -> list[range]:
    return [range(a, min(a + size, M)) for a in range(0, M, size)]


def _batch_size(cfg: ExperimentConfig, per_sample_floats: int, M: int) -> int:
    if cfg.batch_size is not None:
        return min(cfg.batch_size, M)
    return max(1, min(M, BATCH_BUDGET // max(1, 8 * per_sample_floats)))


def _map_batches(fn, batches, threads: int):
    if threads <= 1 or len(batches) <= 1:
        return [fn(b) for b in batches]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, batches))


def _windows(inc: np.ndarray, m: int, halves: bool) -> np.ndarray:
    """Sum base increments ``(B, J, n_base)`` over windows of ``m`` steps.

    Returns a contiguous ``(n, J, B)`` array or, with ``halves``,
    ``(n, 2, J, B)``, so each step reads one contiguous block.
    """
    B, J, n_base = inc.shape
    n = n_base // m
    if halves:
        w = inc.reshape(B, J, n, 2, m // 2).sum(axis=4)
        return np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    w = inc.reshape(B, J, n, m).sum(axis=3)
    return np.ascontiguousarray(w.transpose(2, 1, 0))


@dataclass
class _Run:
    stepper: Stepper
    x: State
    max_norm: float = 0.0
    tripped: bool = False


def _integrate(run: _Run, proj, windows: np.ndarray, on_step=None) -> None:
    """Advance ``run`` through all windows, stopping if the guard trips."""
    step = run.stepper
    n = windows.shape[0]
    x = run.x
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            if step.needs_half_steps:
                x = step(x, proj(windows[i, 0]), proj(windows[i, 1]))
            else:
                x = step(x, proj(windows[i]))
            size = x.norm_max()
            run.max_norm = max(run.max_norm, size) if math.isfinite(size) else math.inf
            if not size <= GUARD:
                run.tripped = True
                break
            if on_step is not None:
                on_step(i + 1, x)
    run.x = x


def _stepper(scheme: str, system: FemSystem, k: float) -> Stepper:
    if scheme == "stm-nl":
        return Stepper(scheme, system, k, filters=sinc_filters(), term=sine_gordon_term())
    return Stepper(scheme, system, k)


# ---------------------------------------------------------------------------
# convergence in k (temporal, comparison, Sine-Gordon errors)

def _time_cells(cfg: ExperimentConfig, h: float, schemes: list[str], reference: str,
                initial, s: float) -> tuple[list[ErrorRow], list[StabilityRow]]:
    system = system_for(h)
    J = cfg.J or system.n_dofs
    model = CovarianceModel(s, J)
    proj = projector_for(system, model)
    x0 = initial(system)
    base_dt = cfg.k_exact
    n_base = _ratio(cfg.T, base_dt)
    cells = [(sc, k) for sc in schemes for k in cfg.k]

    def one_batch(samples: range):
        inc = increment_batch(cfg.seed, samples, J, n_base, base_dt)
        B = len(samples)
        ref = _Run(_stepper(reference, system, base_dt), x0.broadcast(B))
        _integrate(ref, proj, _windows(inc, 1, False))
        out = {}
        for sc, k in cells:
            run = _Run(_stepper(sc, system, k), x0.broadcast(B))
            _integrate(run, proj, _windows(inc, _ratio(k, base_dt), sc == "sv"))
            diffs = None if run.tripped else (run.x.u1 - ref.x.u1, run.x.u2 - ref.x.u2)
            out[(sc, k)] = (diffs, run.max_norm, run.tripped)
        return out

    batches = _batches(cfg.M, _batch_size(cfg, J * n_base * 2, cfg.M))
    results = _map_batches(one_batch, batches, cfg.threads)

    rows, stability = [], []
    for sc, k in cells:
        cfl = sv_cfl_number(system, k) if sc == "sv" else float("nan")
        guard = any(r[(sc, k)][2] for r in results)
        exploded = guard or (sc == "sv" and cfl > 2.0)
        max_norm = max(r[(sc, k)][1] for r in results)
        stability.append(StabilityRow(sc, k, cfl, guard, exploded, max_norm))
        for comp in cfg.components:
            if exploded:
                rows.append(ErrorRow(sc, h, k, comp, math.inf, math.nan, cfg.M))
                continue
            diffs = np.concatenate([r[(sc, k)][0][comp - 1] for r in results], axis=1)
            q = np.sum(diffs * system.mass_apply(diffs), axis=0)
            rmse, se = _jackknife_root(q)
            rows.append(ErrorRow(sc, h, k, comp, rmse, se, cfg.M))
    return rows, stability


def _fit_time_slopes(table: ErrorTable, cfg: ExperimentConfig, hs, schemes) -> dict:
    slopes = {}
    for h in hs:
        for sc in schemes:
            for comp in cfg.components:
                sub = table.select(scheme=sc, h=h, component=comp).finite()
                if len(sub) >= 3:
                    slopes[(sc, h, comp)] = fit_slope(sub)[0]
                else:
                    slopes[(sc, h, comp)] = math.nan
    return slopes


def run_temporal_convergence(cfg: ExperimentConfig) -> ConvergenceResult:
    """Strong errors at ``T`` against STM at ``k_exact`` on each mesh."""
    validate(cfg)
    t0 = time.perf_counter()
    table = ErrorTable("k")
    stability = []
    for h in cfg.h:
        rows, stab = _time_cells(cfg, h, cfg.schemes, "stm", linear_initial_state, cfg.s)
        table.rows.extend(rows)
        stability.extend(stab)
    slopes = _fit_time_slopes(table, cfg, cfg.h, cfg.schemes)
    return ConvergenceResult(table, slopes, stability,
                             {"total_s": time.perf_counter() - t0})


def run_scheme_comparison(cfg: ExperimentConfig) -> ConvergenceResult:
    """Strong errors of several schemes on one mesh, with a stability report.

    A Stormer-Verlet cell is marked exploded when ``k sqrt(lambda_max) > 2``
    (its deterministic unstable regime) or when any norm exceeds the guard.
    """
    validate(cfg)
    t0 = time.perf_counter()
    table = ErrorTable("k")
    stability = []
    for h in cfg.h:
        rows, stab = _time_cells(cfg, h, cfg.schemes, "stm", linear_initial_state, cfg.s)
        table.rows.extend(rows)
        stability.extend(stab)
    slopes = _fit_time_slopes(table, cfg, cfg.h, cfg.schemes)
    return ConvergenceResult(table, slopes, stability,
                             {"total_s": time.perf_counter() - t0})


# ---------------------------------------------------------------------------
# convergence in h

def run_spatial_convergence(cfg: ExperimentConfig) -> ConvergenceResult:
    """Position errors at ``T`` for each mesh against the ``h_exact`` mesh.

    Every mesh runs STM with step ``k_exact`` on the same noise (``J`` modes
    of the finest mesh). Coarse solutions are carried to the fine mesh by
    linear interpolation at the nested nodes and compared in the fine mass
    norm.
    """
    validate(cfg)
    t0 = time.perf_counter()
    fine = system_for(cfg.h_exact)
    J = cfg.J or fine.n_dofs
    model = CovarianceModel(cfg.s, J)
    k = cfg.k_exact
    n = _ratio(cfg.T, k)
    coarse = [system_for(h) for h in cfg.h]

    def one_batch(samples: range):
        inc = increment_batch(cfg.seed, samples, J, n, k)
        w = _windows(inc, 1, False)
        B = len(samples)
        finals = []
        for system in [fine, *coarse]:
            run = _Run(Stepper("stm", system, k), linear_initial_state(system).broadcast(B))
            _integrate(run, projector_for(system, model), w)
            finals.append(run.x)
        ref = finals[0]
        out = []
        for system, x in zip(coarse, finals[1:]):
            u1 = prolongate(x.u1, system.mesh, fine.mesh) - ref.u1
            u2 = prolongate(x.u2, system.mesh, fine.mesh) - ref.u2
            out.append((u1, u2))
        return out

    batches = _batches(cfg.M, _batch_size(cfg, J * n, cfg.M))
    results = _map_batches(one_batch, batches, cfg.threads)
    table = ErrorTable("h")
    for i, h in enumerate(cfg.h):
        for comp in cfg.components:
            diffs = np.concatenate([r[i][comp - 1] for r in results], axis=1)
            q = np.sum(diffs * fine.mass_apply(diffs), axis=0)
            rmse, se = _jackknife_root(q)
            table.rows.append(ErrorRow("stm", h, k, comp, rmse, se, cfg.M))
    slopes = {}
    for comp in cfg.components:
        sub = table.select(component=comp)
        slopes[("stm", cfg.h_exact, comp)] = fit_slope(sub)[0] if len(sub) >= 3 else math.nan
    return ConvergenceResult(table, slopes, [], {"total_s": time.perf_counter() - t0})


# ---------------------------------------------------------------------------
# energy drift

def _mc_energy(cfg_seed: int, system: FemSystem, model: CovarianceModel, schemes, k: float,
               n_steps: int, every: int, M: int, initial: State, cfg: ExperimentConfig,
               term=None):
    """Sample mean and standard error of the energy every ``every`` steps.

    Returns ``{scheme: (means, stderrs)}`` with entries for steps
    ``0, every, 2 every, ...``.
    """
    halves = "sv" in schemes
    base_dt = 0.5 * k if halves else k
    n_base = n_steps * (2 if halves else 1)
    proj = projector_for(system, model)
    n_out = n_steps // every + 1

    def one_batch(samples: range):
        inc = increment_batch(cfg_seed, samples, model.J, n_base, base_dt)
        B = len(samples)
        res = {}
        for sc in schemes:
            vals = np.full((n_out, B), np.nan)
            vals[0] = discrete_energy(system, initial.broadcast(B), term)

            def record(i, x, vals=vals):
                if i % every == 0:
                    vals[i // every] = discrete_energy(system, x, term)

            run = _Run(_stepper(sc, system, k), initial.broadcast(B))
            m = 2 if halves else 1
            _integrate(run, proj, _windows(inc, m, sc == "sv"), record)
            if run.tripped:
                vals[np.isnan(vals)] = np.inf
            res[sc] = vals
        return res

    batches = _batches(M, _batch_size(cfg, model.J * n_base, M))
    results = _map_batches(one_batch, batches, cfg.threads)
    out = {}
    for sc in schemes:
        e = np.concatenate([r[sc] for r in results], axis=1)
        finite = np.all(np.isfinite(e), axis=1)
        with np.errstate(invalid="ignore"):
            mean = np.where(finite, e.mean(axis=1), np.inf)
            se = np.where(finite, e.std(axis=1, ddof=1) / math.sqrt(M), np.nan)
        out[sc] = (mean, se)
    return out


def _guarded_energies(system, model, scheme, k, n_steps, x0) -> list[float]:
    """Exact expected energies; values past the overflow guard become inf."""
    out = []
    with np.errstate(all="ignore"):
        for m in propagate_second_moment(system, model, scheme, k, n_steps, x0):
            e = m.energy(system)
            if not abs(e) <= GUARD:
                out.extend([math.inf] * (n_steps + 1 - len(out)))
                break
            out.append(e)
    return out


def run_trace_formula(cfg: ExperimentConfig) -> TraceResult:
    """Expected energy from exact moment propagation on ``[0, T]`` and from
    Monte Carlo on ``[0, mc_T]`` at ``checkpoints`` equally spaced times."""
    validate(cfg)
    t0 = time.perf_counter()
    system = system_for(cfg.energy_h)
    model = CovarianceModel(cfg.s, cfg.J or system.n_dofs)
    k = cfg.energy_k
    x0 = linear_initial_state(system)
    tr = trace_ph_q_ph(system, model)
    h0 = discrete_energy(system, x0)
    n_exact = _ratio(max(cfg.T, cfg.mc_T), k)
    n_out = _ratio(cfg.T, k)

    exact_rows, exact_values, max_dev = [], {}, None
    for sc in cfg.schemes:
        values = _guarded_energies(system, model, sc, k, n_exact, x0)
        exact_values[sc] = values
        for n in range(n_out + 1):
            exact_rows.append(CurveRow(sc, n * k, values[n], 0.0, values[n]))
        if sc == "stm":
            t = np.arange(n_out + 1) * k
            line = h0 + 0.5 * t * tr
            max_dev = float(np.max(np.abs(np.asarray(values[:n_out + 1]) - line) / line))
    t1 = time.perf_counter()

    n_mc = _ratio(cfg.mc_T, k)
    every = n_mc // cfg.checkpoints
    mc = _mc_energy(cfg.seed, system, model, cfg.schemes, k, n_mc, every, cfg.M, x0, cfg)
    rows = []
    for sc in cfg.schemes:
        means, ses = mc[sc]
        for i in range(1, cfg.checkpoints + 1):
            rows.append(CurveRow(sc, i * every * k, float(means[i]), float(ses[i]),
                                 exact_values[sc][i * every]))
    t2 = time.perf_counter()
    return TraceResult(EnergyCurve(rows), EnergyCurve(exact_rows), tr, h0, max_dev,
                       {"exact_s": t1 - t0, "monte_carlo_s": t2 - t1})


# ---------------------------------------------------------------------------
# Sine-Gordon

def run_sine_gordon(cfg: ExperimentConfig) -> SineGordonResult:
    """Expected energy of the filtered scheme and its strong errors in ``k``.

    The energy includes the lumped potential ``h sum(1 - cos u_i)``. The
    energy curve uses ``energy_s``; the error table uses ``s``.
    """
    validate(cfg)
    t0 = time.perf_counter()
    system = system_for(cfg.energy_h)
    model = CovarianceModel(cfg.energy_s, cfg.J or system.n_dofs)
    k = cfg.energy_k
    n = _ratio(cfg.energy_T, k)
    x0 = sine_gordon_initial_state(system)
    term = sine_gordon_term()
    tr = trace_ph_q_ph(system, model)
    h0 = discrete_energy(system, x0, term)
    means, ses = _mc_energy(cfg.seed, system, model, ["stm-nl"], k, n, 1, cfg.energy_M, x0,
                            cfg, term)["stm-nl"]
    t = np.arange(n + 1) * k
    rows = [CurveRow("stm-nl", float(ti), float(m), float(e), float(h0 + 0.5 * ti * tr))
            for ti, m, e in zip(t, means, ses)]
    slope, _ = fit_line(t, means)
    t1 = time.perf_counter()

    table = ErrorTable("k")
    stability = []
    for h in cfg.h:
        r, st = _time_cells(cfg, h, ["stm-nl"], "stm-nl", sine_gordon_initial_state, cfg.s)
        table.rows.extend(r)
        stability.extend(st)
    errors = ConvergenceResult(table, _fit_time_slopes(table, cfg, cfg.h, ["stm-nl"]),
                               stability, {"total_s": time.perf_counter() - t1})
    return SineGordonResult(EnergyCurve(rows), slope, tr, errors,
                            {"energy_s": t1 - t0, "errors_s": time.perf_counter() - t1})


# ---------------------------------------------------------------------------
# local defects

def defect_target(s: float) -> float:
    """Exponent ``min(2 beta + 1, 3)`` with ``beta = 1/2 + s``."""
    return min(2.0 * CovarianceModel(s).beta_nominal + 1.0, 3.0)


def measure_local_defect(cfg: ExperimentConfig) -> DefectResult:
    """Mean-square one-step defects of STM for each ``k``.

    The stochastic convolution over one step is approximated by ``substeps``
    STM steps of ``k / substeps`` on the same path; the defect is that value
    minus one STM step of size ``k``, both started from zero.
    """
    validate(cfg)
    t0 = time.perf_counter()
    system = system_for(cfg.h[0])
    model = CovarianceModel(cfg.s, cfg.J or system.n_dofs)
    proj = projector_for(system, model)
    m = cfg.substeps
    samples_out = []
    for k in cfg.k:
        fine_step = Stepper("stm", system, k / m)
        coarse_step = Stepper("stm", system, k)

        def one_batch(samples: range, fine_step=fine_step, coarse_step=coarse_step, k=k):
            inc = increment_batch(cfg.seed, samples, model.J, m, k / m)
            zero = State.zeros(system.n_dofs, len(samples))
            fine = _Run(fine_step, zero)
            _integrate(fine, proj, _windows(inc, 1, False))
            coarse = coarse_step(zero, proj(np.ascontiguousarray(inc.sum(axis=2).T)))
            d1 = fine.x.u1 - coarse.u1
            d2 = fine.x.u2 - coarse.u2
            return (np.sum(d1 * system.mass_apply(d1), axis=0),
                    np.sum(d2 * system.mass_apply(d2), axis=0))

        batches = _batches(cfg.M, _batch_size(cfg, model.J * m, cfg.M))
        res = _map_batches(one_batch, batches, cfg.threads)
        q1 = np.concatenate([r[0] for r in res])
        q2 = np.concatenate([r[1] for r in res])
        samples_out.append(DefectSample(k, 0, float(q1.mean()), float(q2.mean()),
                                        float(q1.std(ddof=1) / math.sqrt(q1.size))))
    exponent, _ = fit_loglog([d.k for d in samples_out], [d.d1_msq for d in samples_out])
    return DefectResult(samples_out, exponent, defect_target(cfg.s),
                        {"total_s": time.perf_counter() - t0})


RUNNERS = {
    "temporal": run_temporal_convergence,
    "spatial": run_spatial_convergence,
    "compare": run_scheme_comparison,
    "trace": run_trace_formula,
    "sine-gordon": run_sine_gordon,
    "defect": measure_local_defect,
}
