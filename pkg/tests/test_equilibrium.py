import dataclasses
import math

import numpy as np
import pytest

from bdgap import equilibrium_profile, mass_of_z, z_of_mass
from bdgap.equilibrium import EquilibriumProfile
from bdgap.errors import DomainError, SupercriticalError


def geometric_moments(z):
    """Closed forms for ``Q_i z**i = 2 x**i`` with ``x = z / 2``."""
    x = z / 2
    mass = 2 * x / (1 - x) ** 2
    m2 = 2 * x * (1 + x) / (1 - x) ** 3
    return mass, m2


def test_geometric_mass(geometric):
    assert mass_of_z(geometric, 1.0) == pytest.approx(4.0, rel=1e-12)
    assert mass_of_z(geometric, 1.5) == pytest.approx(24.0, rel=1e-12)
    assert mass_of_z(geometric, 0.0) == 0.0


def test_geometric_inverse(geometric):
    assert z_of_mass(geometric, 4.0) == pytest.approx(1.0, abs=1e-10)
    assert z_of_mass(geometric, 24.0) == pytest.approx(1.5, abs=1e-10)
    assert 0 < z_of_mass(geometric, 1e-8) < 1e-6


def test_mass_above_critical_density(pt_third):
    with pytest.raises(DomainError):
        mass_of_z(pt_third, 1.01)


def test_supercritical_mass(pt_third):
    from bdgap import critical_mass
    with pytest.raises(SupercriticalError):
        z_of_mass(pt_third, 1.1 * critical_mass(pt_third))


def test_geometric_profile_fields(geometric_profile):
    p = geometric_profile
    assert p.mass == pytest.approx(4.0, rel=1e-12)
    assert p.m2 == pytest.approx(12.0, rel=1e-12)
    # sum_{j>i} j Q_j = (i + 2) 2^(1-i), so M3 = sum (i + 2)^2 2^(1-i)
    assert p.m3 == pytest.approx(36.0, rel=1e-12)
    assert p.a_quantity == pytest.approx(192.0, rel=1e-12)
    assert math.exp(p.log_scriptQ[0]) == pytest.approx(p.z, rel=1e-15)


@pytest.mark.parametrize("z", [0.2, 0.7, 1.3])
def test_geometric_profile_other_z(geometric, z):
    p = equilibrium_profile(geometric, z, 200)
    mass, m2 = geometric_moments(z)
    assert p.mass == pytest.approx(mass, rel=1e-9)
    assert p.m2 == pytest.approx(m2, rel=1e-9)
    assert p.a_quantity == pytest.approx(16 * m2, rel=1e-9)


def test_round_trip_on_grid(pt_third):
    for z in np.linspace(0.05, 0.99, 12):
        rho = mass_of_z(pt_third, z, tol=1e-13)
        assert z_of_mass(pt_third, rho, tol=1e-13) == pytest.approx(z, abs=1e-9)


def test_mass_strictly_increasing(pt_two_thirds):
    masses = [mass_of_z(pt_two_thirds, z) for z in np.linspace(0.01, 0.99, 40)]
    assert np.all(np.diff(masses) > 0)


def test_a_quantity_dominates_m2(pt_third):
    # a_i + b_i >= 2 for every i (b_1 by the family formula), so the
    # weight (1 + a_i + b_i)^2 is at least 9
    i = np.arange(1, 100_000)
    assert np.all(pt_third.a(i) + np.exp(pt_third.log_b_raw(i)) >= 2.0)
    p = equilibrium_profile(pt_third, 0.8, 300)
    assert p.a_quantity >= 9 * p.m2


def test_detailed_balance_entrywise(pt_third):
    p = equilibrium_profile(pt_third, 0.9, 500)
    lq = p.log_scriptQ
    i = np.arange(1, 500)
    lhs = pt_third.log_a(i) + lq[0] + lq[:-1]
    rhs = pt_third.log_b(i + 1) + lq[1:]
    assert np.max(np.abs(np.expm1(lhs - rhs))) < 1e-12


def test_moments_finite_at_critical_density(pt_third):
    # stretched-exponential decay keeps every moment finite at z = zs
    p = equilibrium_profile(pt_third, 1.0, 200)
    assert np.isfinite(p.mass) and np.isfinite(p.m3)
    assert p.m3 > p.m2 > p.mass > 0


def test_json_round_trip(pt_third):
    p = equilibrium_profile(pt_third, 1.0, 50)
    p = dataclasses.replace(p, m3=np.inf)
    back = EquilibriumProfile.from_json(p.to_json())
    assert back.m3 == np.inf
    assert back.zs == 1.0
    np.testing.assert_array_equal(back.log_scriptQ, p.log_scriptQ)
    assert back.mass == p.mass


def test_profile_domain_errors(pt_third):
    with pytest.raises(DomainError):
        equilibrium_profile(pt_third, 0.5, 1)
    with pytest.raises(DomainError):
        equilibrium_profile(pt_third, 1.2, 10)
