import numpy as np
import pytest

from stochwave.fem import apply_spectral_function, build_system
from stochwave.integrators import (
    DimensionError,
    State,
    StepError,
    Stepper,
    bem_step,
    cnm_step,
    make_stm_propagator,
    sinc,
    sinc_filters,
    stm_nonlinear_step,
    stm_step,
    sv_cfl_number,
    sv_step,
    zero_term,
    sine_gordon_term,
)


def energy(system, x):
    return 0.5 * (x.u1 @ system.S @ x.u1 + x.u2 @ system.M @ x.u2)


def random_state(system, seed=0):
    rng = np.random.default_rng(seed)
    return State(rng.normal(size=system.n_dofs), rng.normal(size=system.n_dofs))


def test_propagator():
    s = build_system(16)
    prop = make_stm_propagator(s, 0.3)
    np.testing.assert_allclose(prop.cos**2 + prop.sin**2, 1.0, atol=1e-12)
    tiny = make_stm_propagator(s, 1e-12)
    np.testing.assert_allclose(tiny.cos, 1.0, atol=1e-12)
    np.testing.assert_allclose(tiny.sin, 0.0, atol=1e-9)
    s2 = build_system(2)
    assert make_stm_propagator(s2, 1.0).cos[0] == pytest.approx(np.cos(np.sqrt(12.0)), rel=1e-14)
    for bad in (0.0, -0.1):
        with pytest.raises(StepError):
            make_stm_propagator(s, bad)


def test_stm_energy_conserved_single_mode():
    s = build_system(2)
    prop = make_stm_propagator(s, 0.37)
    x = State(np.array([0.8]), np.array([-1.3]))
    e0 = energy(s, x)
    zero = np.zeros(1)
    for _ in range(10_000):
        x = stm_step(prop, x, zero)
    assert abs(energy(s, x) - e0) <= 1e-12 * e0


def test_stm_full_period_returns():
    s = build_system(2)
    prop = make_stm_propagator(s, 2 * np.pi / np.sqrt(12.0))
    x0 = State(np.array([0.4]), np.array([2.0]))
    x = stm_step(prop, x0, np.zeros(1))
    np.testing.assert_allclose(x.u1, x0.u1, atol=1e-10)
    np.testing.assert_allclose(x.u2, x0.u2, atol=1e-10)


def test_stm_single_kick():
    s = build_system(12)
    k = 0.21
    prop = make_stm_propagator(s, k)
    w = np.random.default_rng(4).normal(size=11)
    x = stm_step(prop, State.zeros(11), w)
    u1 = apply_spectral_function(s, lambda lam: np.sin(k * np.sqrt(lam)) / np.sqrt(lam), w)
    u2 = apply_spectral_function(s, lambda lam: np.cos(k * np.sqrt(lam)), w)
    np.testing.assert_allclose(x.u1, u1, atol=1e-13)
    np.testing.assert_allclose(x.u2, u2, atol=1e-13)


def test_stm_matches_dense_matrix_exponential():
    """E_h(k) equals expm(k A_h) with A_h = [[0, I], [-M^{-1} S, 0]]."""
    from scipy.linalg import expm

    s = build_system(10)
    n = s.n_dofs
    k = 0.13
    A = np.block([[np.zeros((n, n)), np.eye(n)], [-np.linalg.solve(s.M, s.S), np.zeros((n, n))]])
    E = expm(k * A)
    x = random_state(s, 2)
    ref = E @ np.concatenate([x.u1, x.u2])
    out = stm_step(make_stm_propagator(s, k), x, np.zeros(n))
    np.testing.assert_allclose(np.concatenate([out.u1, out.u2]), ref, atol=1e-9)


def test_stm_group_property():
    s = build_system(16)
    x = random_state(s, 1)
    zero = np.zeros(15)
    p1, p2 = make_stm_propagator(s, 0.05), make_stm_propagator(s, 0.1)
    twice = stm_step(p1, stm_step(p1, x, zero), zero)
    once = stm_step(p2, x, zero)
    np.testing.assert_allclose(twice.u1, once.u1, atol=1e-10)
    np.testing.assert_allclose(twice.u2, once.u2, atol=1e-10)


def test_stm_noise_column_consistency():
    s = build_system(16)
    prop = make_stm_propagator(s, 0.07)
    x = random_state(s, 3)
    w = np.random.default_rng(9).normal(size=15)
    a = stm_step(prop, x, w)
    b = stm_step(prop, State(x.u1, x.u2 + w), np.zeros(15))
    np.testing.assert_allclose(a.u1, b.u1, atol=1e-13)
    np.testing.assert_allclose(a.u2, b.u2, atol=1e-13)


def test_dimension_errors():
    s = build_system(8)
    prop = make_stm_propagator(s, 0.1)
    with pytest.raises(DimensionError):
        stm_step(prop, State.zeros(6), np.zeros(6))
    with pytest.raises(DimensionError):
        stm_step(prop, State.zeros(7), np.zeros(5))
    with pytest.raises(DimensionError):
        State(np.zeros(3), np.zeros(4))


def test_batched_steps_match_columns():
    s = build_system(8)
    rng = np.random.default_rng(12)
    xb = State(rng.normal(size=(7, 3)), rng.normal(size=(7, 3)))
    wb = rng.normal(size=(7, 3))
    for scheme in ("stm", "stm-nl", "bem", "cnm", "sv"):
        step = Stepper(scheme, s, 0.05)
        out = step(xb, wb, 0.5 * wb)
        for col in range(3):
            single = step(State(xb.u1[:, col], xb.u2[:, col]), wb[:, col], 0.5 * wb[:, col])
            np.testing.assert_allclose(out.u1[:, col], single.u1, atol=1e-13)
            np.testing.assert_allclose(out.u2[:, col], single.u2, atol=1e-13)


# ---------------------------------------------------------------------------
# filtered nonlinear scheme

def test_sinc_series_branch():
    xi = np.array([0.0, 1e-6, -5e-5, 9.9e-5, 1.01e-4, 0.5, np.pi])
    ref = np.where(xi == 0, 1.0, np.sin(xi) / np.where(xi == 0, 1, xi))
    np.testing.assert_allclose(sinc(xi), ref, rtol=1e-15, atol=1e-16)


def test_filters_at_zero_and_pi():
    f = sinc_filters()
    for value in f.evaluate(np.array([0.0])):
        assert value[0] == 1.0
    psi, phi, _, _ = f.evaluate(np.array([np.pi]))
    assert abs(psi[0]) < 1e-15
    assert abs(phi[0]) < 1e-15


def test_nonlinear_step_with_zero_force_is_stm():
    s = build_system(16)
    prop = make_stm_propagator(s, 0.1)
    x = random_state(s, 4)
    w = np.random.default_rng(5).normal(size=15)
    a = stm_nonlinear_step(prop, sinc_filters(), zero_term(), x, w)
    b = stm_step(prop, x, w)
    np.testing.assert_allclose(a.u1, b.u1, rtol=0, atol=1e-14)
    np.testing.assert_allclose(a.u2, b.u2, rtol=0, atol=1e-14)


def test_nonlinear_step_scalar_oracle():
    """Single mode: the update written out by hand with scalar filters."""
    s = build_system(2)
    k = 0.2
    prop = make_stm_propagator(s, k)
    x = State(np.array([0.3]), np.array([0.1]))
    term = sine_gordon_term()
    out = stm_nonlinear_step(prop, sinc_filters(), term, x, np.zeros(1))
    om = np.sqrt(12.0)
    xi = k * om
    sc = np.sin(xi) / xi
    g0 = -np.sin(sc * 0.3)
    u1 = np.cos(xi) * 0.3 + np.sin(xi) / om * 0.1 + 0.5 * k**2 * sc**3 * g0
    assert out.u1[0] == pytest.approx(u1, rel=1e-13)
    g1 = -np.sin(sc * u1)
    u2 = -om * np.sin(xi) * 0.3 + np.cos(xi) * 0.1 + 0.5 * k * (np.cos(xi) * sc**2 * g0 + sc**2 * g1)
    assert out.u2[0] == pytest.approx(u2, rel=1e-13)


def test_nonlinear_deterministic_second_order():
    """Deterministic Sine-Gordon: global error at t = 1 drops by ~4 when k halves."""
    s = build_system(8)
    x0 = State(0.5 * np.sin(np.pi * s.mesh.interior_nodes), np.zeros(7))
    zero = np.zeros(7)

    def run(k):
        step = Stepper("stm-nl", s, k)
        x = x0
        for _ in range(round(1 / k)):
            x = step(x, zero)
        return x.u1

    ref = run(2**-12)
    e1 = np.linalg.norm(run(2**-4) - ref)
    e2 = np.linalg.norm(run(2**-5) - ref)
    assert 3.0 < e1 / e2 < 5.0


# ---------------------------------------------------------------------------
# comparison schemes

def test_bem_energy_decay_single_mode():
    s = build_system(2)
    lam = s.eigvals[0]
    for k in (0.01, 0.1, 0.5):
        x = State(np.array([0.7]), np.array([0.2]))
        e = energy(s, x)
        for _ in range(5):
            x = bem_step(s, k, x, np.zeros(1))
            e_new = energy(s, x)
            assert e_new == pytest.approx(e / (1 + k * k * lam), rel=1e-12)
            e = e_new


def test_small_step_limits_are_identity():
    s = build_system(8)
    x = random_state(s, 7)
    zero = np.zeros(7)
    k = 1e-10
    for out in (bem_step(s, k, x, zero), cnm_step(s, k, x, zero), sv_step(s, k, x, zero, zero),
                stm_step(make_stm_propagator(s, k), x, zero)):
        np.testing.assert_allclose(out.u1, x.u1, atol=1e-7)
        np.testing.assert_allclose(out.u2, x.u2, atol=1e-7)


def test_cnm_energy_conserved():
    s = build_system(16)
    for k in (0.001, 0.1, 2.0):
        x = random_state(s, 8)
        e0 = energy(s, x)
        zero = np.zeros(15)
        for _ in range(10_000):
            x = cnm_step(s, k, x, zero)
        assert abs(energy(s, x) - e0) <= 1e-10 * e0


def test_cnm_rotation_angle():
    s = build_system(2)
    om = np.sqrt(s.eigvals[0])
    for k in (0.05, 0.3, 1.0):
        # start on the unit circle in energy-scaled coordinates (om u1, u2)
        x = cnm_step(s, k, State(np.array([1.0 / om]), np.array([0.0])), np.zeros(1))
        p, q = om * x.u1[0], x.u2[0]
        # rotation [[c, s], [-s, c]] maps (1, 0) to (c, -s)
        angle = np.arctan2(-q, p)
        assert angle == pytest.approx(2 * np.arctan(k * om / 2), rel=1e-12)


def _deterministic_one_step(scheme, s, k, x):
    zero = np.zeros(s.n_dofs)
    return Stepper(scheme, s, k)(x, zero, zero)


@pytest.mark.parametrize("scheme", ["bem", "cnm", "sv"])
def test_one_step_consistency_with_stm(scheme):
    s = build_system(8)
    x = State(np.sin(np.pi * s.mesh.interior_nodes), np.cos(2 * np.pi * s.mesh.interior_nodes))
    diffs = []
    for k in (0.01, 0.005, 0.0025):
        a = _deterministic_one_step(scheme, s, k, x)
        b = _deterministic_one_step("stm", s, k, x)
        diffs.append(np.linalg.norm(np.concatenate([a.u1 - b.u1, a.u2 - b.u2])))
    ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
    if scheme == "bem":
        assert np.all((3.5 <= ratios) & (ratios <= 4.5))
    else:
        # second-order schemes: local difference is O(k^3)
        assert np.all(ratios >= 3.5)


def test_sv_stable_inside_cfl():
    s = build_system(16)
    k = 1.9 / np.sqrt(s.eigvals[-1])
    assert sv_cfl_number(s, k) == pytest.approx(1.9)
    x = random_state(s, 10)
    e0 = energy(s, x)
    zero = np.zeros(15)
    peak = e0
    for _ in range(10_000):
        x = sv_step(s, k, x, zero, zero)
        peak = max(peak, energy(s, x))
    # modified energy is conserved, so the plain energy stays within a bounded factor
    assert peak < 20 * e0


def test_sv_unstable_outside_cfl():
    s = build_system(16)
    k = 2.1 / np.sqrt(s.eigvals[-1])
    x = random_state(s, 11)
    e0 = energy(s, x)
    zero = np.zeros(15)
    for n in range(200):
        x = sv_step(s, k, x, zero, zero)
        if energy(s, x) > 10 * e0:
            break
    assert energy(s, x) > 10 * e0


def test_sv_amplification_oracle():
    """Per mode, SV is the leapfrog map with trace 2 - (k omega)^2."""
    s = build_system(2)
    lam = s.eigvals[0]
    k = 0.3
    cols = [sv_step(s, k, State(np.array([1.0]), np.array([0.0])), np.zeros(1), np.zeros(1)),
            sv_step(s, k, State(np.array([0.0]), np.array([1.0])), np.zeros(1), np.zeros(1))]
    T = np.array([[c.u1[0] for c in cols], [c.u2[0] for c in cols]])
    assert np.trace(T) == pytest.approx(2 - k * k * lam, rel=1e-12)
    assert np.linalg.det(T) == pytest.approx(1.0, rel=1e-12)


def test_stepper_rejects_unknown_scheme():
    with pytest.raises(ValueError):
        Stepper("rk4", build_system(4), 0.1)
