"""Fast invariant checks across all modules, run by ``stochwave selftest``."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from .config import ConfigError, default_config, parse_config
from .fem import (
    build_system,
    discrete_eigenvalue_formula,
    h_alpha_norm,
    l2_project,
    quadrature_load,
    sine_load,
)
from .integrators import State, Stepper, make_stm_propagator
from .noise import (
    CovarianceModel,
    make_coupled_path,
    projector_for,
    sample_mode_increments,
    trace_ph_q_ph,
)
from .observables import discrete_energy, propagate_expected_energy


def check_eigenvalue_formula():
    s = build_system(32)
    return np.allclose(s.eigvals, discrete_eigenvalue_formula(s.mesh), rtol=1e-10)


def check_mass_orthonormal_modes():
    s = build_system(24)
    return np.allclose(s.eigvecs.T @ s.M @ s.eigvecs, np.eye(23), atol=1e-11)


def check_projection_optimality():
    s = build_system(16)
    g = lambda x: x * (1 - x) * np.exp(x)  # noqa: E731
    p = l2_project(s, quadrature_load(s.mesh, g))
    x = np.linspace(0, 1, 4001)
    rng = np.random.default_rng(0)

    def err(c):
        vals = np.interp(x, np.r_[0, s.mesh.interior_nodes, 1], np.r_[0, c, 0])
        return np.trapezoid((vals - g(x)) ** 2, x)

    best = err(p)
    return all(err(p + 1e-2 * rng.normal(size=p.size)) > best for _ in range(20))


def check_rotation_identities():
    s = build_system(20)
    prop = make_stm_propagator(s, 0.37)
    c, sn = prop.cos, prop.sin
    if not np.allclose(c**2 + sn**2, 1.0, atol=1e-14):
        return False
    rng = np.random.default_rng(1)
    x = State(rng.normal(size=19), rng.normal(size=19))
    step = Stepper("stm", s, 0.37)
    y = x
    for _ in range(200):
        y = step(y, np.zeros(19))
    return abs(discrete_energy(s, y) - discrete_energy(s, x)) < 1e-10 * discrete_energy(s, x)


def check_ito_isometry():
    s = build_system(8)
    model = CovarianceModel(0.5, 7)
    k, n = 0.05, 20_000
    c = projector_for(s, model)(make_coupled_path(3, k, n, 7).table)
    sq = np.sum(c * (s.M @ c), axis=0)
    return abs(sq.mean() - k * trace_ph_q_ph(s, model)) < 4 * sq.std(ddof=1) / np.sqrt(n)


def check_refinement_coupling():
    path = make_coupled_path(5, 0.125, 16, 3)
    a = sample_mode_increments(path, (0, 2)).values + sample_mode_increments(path, (2, 4)).values
    return np.allclose(a, sample_mode_increments(path, (0, 4)).values, rtol=0, atol=1e-15)


def check_trace_formula():
    s = build_system(10)
    model = CovarianceModel(0.5, 9)
    x0 = State(l2_project(s, sine_load(s.mesh, 1)), np.zeros(9))
    tr, h0 = trace_ph_q_ph(s, model), discrete_energy(s, x0)
    curve = propagate_expected_energy(s, model, "stm", 0.1, 200, x0)
    return all(abs(e.value - h0 - 0.5 * e.t * tr) <= 1e-10 * (h0 + 0.5 * e.t * tr) for e in curve)


def check_energy_norm_identity():
    s = build_system(12)
    rng = np.random.default_rng(2)
    x = State(rng.normal(size=11), rng.normal(size=11))
    ref = 0.5 * (h_alpha_norm(s, x.u1, 1) ** 2 + h_alpha_norm(s, x.u2, 0) ** 2)
    return np.isclose(discrete_energy(s, x), ref, rtol=1e-12)


def check_config_divisibility():
    cfg = default_config("temporal")
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "c.json"
        p.write_text('{"k": [0.3], "k_exact": 0.25}')
        try:
            parse_config(p, verb="temporal")
        except ConfigError as exc:
            return exc.key == "k[0]" and cfg.M == 100
    return False


def _tiny_temporal():
    cfg = default_config("temporal")
    cfg.h, cfg.M, cfg.T, cfg.k_exact, cfg.k = [0.125], 4, 1.0, 0.125, [0.25, 0.5]
    return cfg


def check_csv_reproducibility():
    from .cli import run_study

    cfg = _tiny_temporal()
    with tempfile.TemporaryDirectory() as d:
        run_study(cfg, Path(d) / "a")
        run_study(cfg, Path(d) / "b")
        return all((Path(d) / "a" / n).read_bytes() == (Path(d) / "b" / n).read_bytes()
                   for n in ("temporal_errors.csv", "temporal_errors.svg"))


def check_reference_self_consistency():
    """A cell whose step equals the reference step has error exactly zero."""
    from .experiments import _time_cells, linear_initial_state

    cfg = _tiny_temporal()
    cfg.k = [cfg.k_exact, 0.5]
    rows, _ = _time_cells(cfg, 0.125, ["stm"], "stm", linear_initial_state, cfg.s)
    return rows[0].rmse == 0.0 and rows[1].rmse > 0


CHECKS = [
    check_eigenvalue_formula,
    check_mass_orthonormal_modes,
    check_projection_optimality,
    check_rotation_identities,
    check_ito_isometry,
    check_refinement_coupling,
    check_trace_formula,
    check_energy_norm_identity,
    check_config_divisibility,
    check_csv_reproducibility,
    check_reference_self_consistency,
]


def run_selftest(verbose: bool = True) -> bool:
    ok_all = True
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        try:
            ok = bool(check())
            detail = ""
        except Exception as exc:  # a crash is a failure, reported by name
            ok, detail = False, f" ({type(exc).__name__}: {exc})"
        ok_all &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}{detail}")
    return ok_all
