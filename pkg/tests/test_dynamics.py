import math

import numpy as np
import pytest

from bdgap import (CoefficientModel, StateVector, apply_linearized, bd_rhs,
                   build_linearized, dissipation, equilibrium_profile,
                   exp_moment, fit_decay_rate, flux, fluctuation_split,
                   free_energy, gamma_term, integrate, integrate_linearized,
                   numerical_gap, weighted_l1_distance)
from bdgap.dynamics import (Controls, fluxes, mass_matched_fluctuation,
                            perturbation_pattern, perturbed_equilibrium)
from bdgap.errors import (DomainError, InsufficientDataError,
                          MomentOverflowError)


@pytest.fixture(scope="module")
def pt_profile(pt_third):
    return equilibrium_profile(pt_third, 0.8, 300)


def brute_force_rhs(model, c):
    """``dc/dt`` by enumerating the reactions ``C_1 + C_i <-> C_{i+1}``."""
    n = len(c)
    out = [0.0] * n
    for i in range(1, n):
        a = float(model.a(np.array([i]))[0])
        b = float(model.b(np.array([i + 1]))[0])
        rate = a * c[0] * c[i - 1] - b * c[i]
        out[0] -= rate
        out[i - 1] -= rate
        out[i] += rate
    return out


def test_state_validation():
    with pytest.raises(DomainError):
        StateVector([1.0, -1e-3])
    with pytest.raises(DomainError):
        StateVector([1.0])
    s = StateVector([1.0, 2.0, 3.0])
    assert s.mass == 14.0
    with pytest.raises(ValueError):
        s.c[0] = 5.0


def test_flux_examples(pt_third, pt_profile):
    s = StateVector(np.exp(pt_profile.log_scriptQ[:50]))
    w = [flux(pt_third, s, i) for i in range(1, 50)]
    scale = [pt_third.a(np.array([i]))[0] * s.c[0] * s.c[i - 1] for i in range(1, 50)]
    assert max(abs(x) / y for x, y in zip(w, scale)) < 1e-12
    assert flux(pt_third, s, 50) == 0.0
    e1 = StateVector([1.0, 0.0, 0.0])
    assert flux(pt_third, e1, 1) == 1.0
    with pytest.raises(DomainError):
        flux(pt_third, e1, 4)


def test_rhs_vanishes_at_equilibrium(pt_third, pt_profile):
    s = StateVector(np.exp(pt_profile.log_scriptQ))
    rhs = bd_rhs(pt_third, s)
    assert np.max(np.abs(rhs)) < 1e-12 * np.max(s.c)


def test_rhs_brute_force(rng):
    model = CoefficientModel.power_law(0.5, 0.4, zs=0.7, q=2.0)
    for _ in range(10):
        c = rng.uniform(0, 2, 5)
        np.testing.assert_allclose(bd_rhs(model, StateVector(c)),
                                   brute_force_rhs(model, c), rtol=1e-13, atol=1e-14)


def test_rhs_conserves_mass(pt_third, rng):
    i = np.arange(1, 61)
    for _ in range(100):
        c = rng.uniform(0, 1, 60) * np.exp(-0.1 * i)
        rhs = bd_rhs(pt_third, StateVector(c))
        assert abs(np.dot(i, rhs)) <= 1e-12 * np.dot(i, np.abs(rhs))


def test_weak_form(pt_third, rng):
    n = 40
    for _ in range(20):
        c = rng.uniform(0, 1, n)
        phi = rng.standard_normal(n)
        w = fluxes(pt_third, c)
        # phi_{n+1} = phi_n + phi_1 makes the closure term vanish
        nxt = np.append(phi[1:], phi[-1] + phi[0])
        lhs = np.dot(phi, bd_rhs(pt_third, StateVector(c)))
        rhs = np.dot(w, nxt - phi - phi[0])
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_free_energy_examples(pt_profile):
    s = StateVector(np.exp(pt_profile.log_scriptQ))
    h_val, fz = free_energy(s, pt_profile)
    assert abs(fz) < 1e-10
    h0, fz0 = free_energy(StateVector(np.zeros(300)), pt_profile)
    assert h0 == 0.0
    assert fz0 == pytest.approx(pt_profile.total, rel=1e-12)


def test_free_energy_definition(pt_profile, rng):
    # F_z = H - log z sum i c_i + sum Q_i z^i, evaluated directly
    q = np.exp(pt_profile.log_scriptQ)
    c = q * (1 + 0.3 * rng.uniform(-1, 1, 300))
    s = StateVector(c)
    h_val, fz = free_energy(s, pt_profile)
    i = np.arange(1, 301)
    log_Q = pt_profile.log_scriptQ - i * math.log(pt_profile.z)
    h_direct = np.sum(c * (np.log(c) - log_Q - 1))
    fz_direct = h_direct - math.log(pt_profile.z) * s.mass + pt_profile.total
    assert h_val == pytest.approx(h_direct, rel=1e-12)
    assert fz == pytest.approx(fz_direct, rel=1e-6, abs=1e-12)
    assert fz > 0


def test_dissipation(pt_third, pt_profile, rng):
    s = StateVector(np.exp(pt_profile.log_scriptQ))
    assert dissipation(s, pt_third) < 1e-28
    for _ in range(20):
        assert dissipation(StateVector(rng.uniform(0, 1, 30)), pt_third) >= 0
    assert dissipation(StateVector([1.0, 0.0, 0.0]), pt_third) == np.inf
    assert dissipation(StateVector([0.0, 0.0, 0.0]), pt_third) == 0.0


def test_exp_moment():
    assert exp_moment(StateVector([1.0, 0.0]), 1.0) == pytest.approx(math.e, rel=1e-15)
    assert exp_moment(StateVector([1.0, 2.0, 3.0]), 0.0) == 6.0
    with pytest.raises(MomentOverflowError):
        exp_moment(StateVector(np.ones(1000)), 1.0)


def test_weighted_distance(pt_profile, rng):
    eta = 0.25 * math.log(1 / 0.8)
    q = np.exp(pt_profile.log_scriptQ)
    assert weighted_l1_distance(StateVector(q), pt_profile, eta) < 1e-20
    with pytest.raises(DomainError):
        weighted_l1_distance(StateVector(q), pt_profile, 0.6 * math.log(1 / 0.8))
    for _ in range(20):
        x = StateVector(q * (1 + 0.5 * rng.uniform(-1, 1, 300)))
        y = StateVector(q * (1 + 0.5 * rng.uniform(-1, 1, 300)))
        dxy = np.sum(np.exp(eta * np.arange(1, 301)) * np.abs(x.c - y.c))
        assert dxy <= weighted_l1_distance(x, pt_profile, eta) + weighted_l1_distance(y, pt_profile, eta)


def test_distance_dominated_by_h_norm(pt_profile, rng):
    eta = 0.25 * math.log(1 / 0.8)
    q = np.exp(pt_profile.log_scriptQ)
    i = np.arange(1, 301)
    const = math.sqrt(2) * math.sqrt(np.sum(q * np.exp(2 * eta * i)))
    for _ in range(20):
        h = mass_matched_fluctuation(pt_profile, rng.uniform(-1, 1, 300), 0.1)
        s = StateVector(q * (1 + h))
        assert weighted_l1_distance(s, pt_profile, eta) <= const * math.sqrt(np.sum(q * h * h))


def test_fluctuation_split(pt_profile):
    q = np.exp(pt_profile.log_scriptQ)
    assert np.all(fluctuation_split(StateVector(q), pt_profile) == 0)
    s = perturbed_equilibrium(pt_profile, 300, 0.1, seed=3)
    h = fluctuation_split(s, pt_profile)
    i = np.arange(1, 301)
    assert abs(np.dot(i * q, h)) <= 1e-10 * np.dot(i * q, np.abs(h))
    np.testing.assert_allclose(q * (1 + h), s.c, rtol=2.3e-16, atol=0)


def test_fluctuation_split_clips(pt_third):
    p = equilibrium_profile(pt_third, 0.3, 800)
    with pytest.warns(RuntimeWarning):
        h = fluctuation_split(StateVector(np.exp(np.maximum(p.log_scriptQ, -700))), p)
    assert h.size < 800


def test_gamma_bilinear_zero(pt_third, pt_profile, rng):
    g = rng.standard_normal(300)
    assert np.all(gamma_term(pt_profile, pt_third, np.zeros(300), g) == 0)


def test_gamma_mass_orthogonal(pt_third, pt_profile, rng):
    q = np.exp(pt_profile.log_scriptQ)
    i = np.arange(1, 301)
    for _ in range(20):
        f = np.zeros(300)
        g = np.zeros(300)
        f[:200] = rng.standard_normal(200)
        g[:200] = rng.standard_normal(200)
        out = gamma_term(pt_profile, pt_third, f, g)
        assert abs(np.dot(i * q, out)) <= 1e-10 * np.dot(i * q, np.abs(out))


def test_decomposition_identity(pt_third, pt_profile, rng):
    m = build_linearized(pt_profile, pt_third, 300)
    q = np.exp(pt_profile.log_scriptQ)
    for _ in range(10):
        h = mass_matched_fluctuation(pt_profile, rng.uniform(-1, 1, 300), 0.2)
        lhs = bd_rhs(pt_third, StateVector(q * (1 + h))) / q
        rhs = apply_linearized(m, h) + gamma_term(pt_profile, pt_third, h, h)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(lhs))


def test_perturbation_is_reproducible():
    a = perturbation_pattern(50, seed=7)
    assert np.array_equal(a, perturbation_pattern(50, seed=7))
    assert np.all(np.abs(a) <= 1)


def test_fit_exact_exponential():
    t = np.linspace(0, 5, 20)
    fit = fit_decay_rate(np.column_stack([t, np.exp(-3 * t)]))
    assert fit.rate == pytest.approx(3.0, abs=1e-9)
    assert fit.r2 > 1 - 1e-12
    assert fit.window == (2.5, 5.0)


def test_fit_constant():
    t = np.linspace(0, 5, 20)
    assert fit_decay_rate(np.column_stack([t, np.full(20, 2.0)])).rate == 0.0


def test_fit_wobbly_exponential():
    t = np.linspace(0, 40, 200)
    fit = fit_decay_rate(np.column_stack([t, np.exp(-t) * (1 + 0.01 * np.sin(t))]))
    assert fit.rate == pytest.approx(1.0, abs=0.02)


def test_fit_needs_eight_rows():
    t = np.linspace(0, 1, 10)
    with pytest.raises(InsufficientDataError):
        fit_decay_rate(np.column_stack([t, np.exp(-t)]))


def test_integrate_fixed_point(pt_third, pt_profile):
    s = StateVector(np.exp(pt_profile.log_scriptQ[:200]))
    traj = integrate(pt_third, s, 1.0, {"profile": pt_profile, "snapshot_every": 0.5})
    assert np.max(np.abs(traj.states[-1].c - s.c)) < 1e-14
    assert traj.times.tolist() == [0.0, 0.5, 1.0]


def test_integrate_short_run(pt_third, pt_profile):
    s = perturbed_equilibrium(pt_profile, 300, 0.05)
    traj = integrate(pt_third, s, 4.0, {"profile": pt_profile, "snapshot_every": 0.25})
    assert traj.mass_drift < 1e-8 and not traj.flagged
    assert np.all(np.diff(traj.column("H")) <= 1e-10)
    assert np.all(traj.column("Fz") >= 0)
    assert np.all(traj.column("D") >= 0)
    csv = traj.to_csv().splitlines()
    assert csv[0] == "t,mass,H,Fz,D,exp_moment,l1_dist"
    assert len(csv) == traj.times.size + 1


def test_controls_reject_unknown():
    with pytest.raises(DomainError):
        Controls.coerce({"step": 1})
    with pytest.raises(DomainError):
        Controls.coerce({"rtol": -1.0}).validate()


def test_linearized_run(pt_third, pt_profile):
    m = build_linearized(pt_profile, pt_third, 300)
    h0 = mass_matched_fluctuation(pt_profile, perturbation_pattern(300, 1), 1.0)
    lam = numerical_gap(m)
    run = integrate_linearized(m, h0, 10.0, {"snapshot_every": 0.5})
    norms = run.norm_h
    assert np.all(np.diff(norms) <= 1e-10 * norms[:-1])
    q = m.weight
    i = np.arange(1, 301)
    for h in run.h:
        assert abs(np.dot(i * q, h)) <= 1e-8 * np.dot(i * q, np.abs(h0))
    for k in range(1, norms.size):
        dt = run.times[k] - run.times[k - 1]
        assert norms[k] <= math.exp(-lam * dt) * norms[k - 1] * (1 + 1e-8)


def test_linearized_projects_null_direction(pt_third, pt_profile):
    m = build_linearized(pt_profile, pt_third, 300)
    with pytest.warns(RuntimeWarning):
        run = integrate_linearized(m, np.arange(1.0, 301), 0.5, {"snapshot_every": 0.25})
    assert run.norm_h[0] < 1e-10
