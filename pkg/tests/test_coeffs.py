import json
import math

import numpy as np
import pytest

from bdgap import (CoefficientModel, Kind, critical_mass,
                   critical_monomer_density, delta_condition,
                   eval_coefficients, log_detailed_balance)
from bdgap.coeffs import ratio_diagnostics
from bdgap.errors import ConfigError, DomainError, EstimationError


def test_power_law_at_eight():
    # 8^(1/3) = 2 and 8^(-1/3) = 1/2
    a, b = eval_coefficients(CoefficientModel.power_law(1 / 3, 2 / 3), 8)
    assert a == pytest.approx(2.0, rel=1e-14)
    assert b == pytest.approx(3.0, rel=1e-14)


@pytest.mark.parametrize("model", [
    CoefficientModel.power_law(1 / 3, 2 / 3),
    CoefficientModel.surface_tension(0.0, 0.5),
    CoefficientModel.surface_tension(0.5, 0.5),
    CoefficientModel.table([1.0], [2.0]),
])
def test_b1_is_zero(model):
    assert eval_coefficients(model, 1)[1] == 0.0


def test_table_lookup_and_constant_continuation():
    model = CoefficientModel.table([1.0, 3.0], [0.0, 2.0, 5.0])
    assert eval_coefficients(model, 2) == pytest.approx((3.0, 2.0), rel=1e-15)
    assert eval_coefficients(model, 50) == pytest.approx((3.0, 5.0), rel=1e-15)


@pytest.mark.parametrize("i", [0, -1, 2.5])
def test_bad_index(i):
    with pytest.raises(DomainError):
        eval_coefficients(CoefficientModel.power_law(1 / 3, 2 / 3), i)


def test_geometric_log_q():
    ldb = log_detailed_balance(CoefficientModel.table([1.0], [2.0]), 4)
    np.testing.assert_allclose(ldb.log_Q, -np.log(2) * np.arange(4), rtol=0, atol=1e-15)


def test_balanced_rates_give_flat_q():
    ldb = log_detailed_balance(CoefficientModel.table([1.5], [0.0, 1.5]), 50)
    assert np.all(ldb.log_Q == 0.0)


def test_surface_tension_log_q_matches_recursion():
    # alpha = 0, mu = 1/2: Q_{i+1}/Q_i = 1/exp(sqrt(i+1) - sqrt(i))
    ldb = log_detailed_balance(CoefficientModel.surface_tension(0.0, 0.5), 3)
    expected = [0.0, -(math.sqrt(2) - 1), -(math.sqrt(3) - 1)]
    np.testing.assert_allclose(ldb.log_Q, expected, rtol=1e-14, atol=1e-15)


def test_log_q_reproducible():
    model = CoefficientModel.surface_tension(1 / 3, 2 / 3)
    a = log_detailed_balance(model, 10_000).log_Q
    b = log_detailed_balance(model, 10_000).log_Q
    assert a.tobytes() == b.tobytes()


def test_log_q_no_overflow_at_a_million():
    ldb = log_detailed_balance(CoefficientModel.power_law(1 / 3, 2 / 3, zs=0.5), 10 ** 6)
    assert np.all(np.isfinite(ldb.log_Q))
    # log Q_i ~ i log 2 grows linearly
    assert ldb.log_Q[-1] > 6e5


@pytest.mark.parametrize("model", [
    CoefficientModel.power_law(1 / 3, 2 / 3),
    CoefficientModel.power_law(2 / 3, 2 / 3, zs=2.0, q=0.5),
    CoefficientModel.surface_tension(1 / 3, 2 / 3, zs=0.7, sigma=2.0),
    CoefficientModel.table([1.0, 2.0, 3.0], [0.0, 1.0, 4.0, 2.0]),
])
@pytest.mark.parametrize("z", [0.3, 0.9])
def test_detailed_balance_residual(model, z):
    n = 2000
    lq = log_detailed_balance(model, n).log_scriptQ(z)
    i = np.arange(1, n)
    lhs = model.log_a(i) + lq[0] + lq[:-1]
    rhs = model.log_b(i + 1) + lq[1:]
    assert np.max(np.abs(np.expm1(lhs - rhs))) < 1e-12


def test_critical_density_parametric_exact():
    assert critical_monomer_density(CoefficientModel.power_law(1 / 3, 2 / 3)) == 1.0
    assert critical_monomer_density(CoefficientModel.surface_tension(0.2, 0.4, zs=0.37)) == 0.37


def test_critical_density_tables():
    assert critical_monomer_density(CoefficientModel.table([1.0], [2.0])) == pytest.approx(2.0, rel=1e-14)
    assert critical_monomer_density(CoefficientModel.table([1.0], [0.0, 1.0])) == pytest.approx(1.0, rel=1e-14)


def test_critical_density_oscillating_table():
    a = [1.0] * 40
    b = [0.0] + [1.0, 3.0] * 20
    with pytest.raises(EstimationError) as info:
        critical_monomer_density(CoefficientModel.table(a, b))
    lo, hi = info.value.observed
    assert lo < hi


def test_critical_mass_geometric_diverges():
    assert critical_mass(CoefficientModel.table([1.0], [2.0])) == math.inf


def test_critical_mass_surface_tension_brute_force():
    # Q_i zs^i = exp(-(i^(2/3) - 1)); summands are below 1e-300 well before 4e5
    i = np.arange(1, 400_001, dtype=float)
    brute = math.fsum(i * np.exp(-(i ** (2 / 3) - 1.0)))
    got = critical_mass(CoefficientModel.surface_tension(1 / 3, 2 / 3))
    assert got == pytest.approx(brute, rel=1e-11)


def test_delta_boundary_case_is_one():
    values, ok = delta_condition(CoefficientModel.power_law(2 / 3, 2 / 3), (1, 4000))
    np.testing.assert_allclose(values, 1.0, rtol=1e-12)
    assert ok


def test_delta_decaying_case_fails():
    values, ok = delta_condition(CoefficientModel.power_law(1 / 3, 2 / 3), (1, 4000))
    k = np.arange(2, 4001)
    np.testing.assert_allclose(values, k ** (-1 / 6), rtol=1e-10)
    assert not ok


def test_delta_boundary_other_exponents():
    # alpha = 2 (1 - mu) exactly
    _, ok = delta_condition(CoefficientModel.power_law(0.5, 0.75), (1, 4000))
    assert ok


def test_surface_tension_matches_power_law_asymptotically():
    m = CoefficientModel.surface_tension(1 / 3, 2 / 3, zs=1.3, sigma=0.8)
    i = np.unique(np.geomspace(1e3, 1e5, 30).astype(int))
    resid = np.abs(m.b(i) / m.a(i) - 1.3 - 1.3 * 0.8 * (2 / 3) * i ** (-1 / 3))
    scaled = resid / i ** (-1 / 3)
    assert np.all(np.diff(scaled) < 0)


def test_ratio_diagnostics_power_law():
    d = ratio_diagnostics(CoefficientModel.power_law(1 / 3, 2 / 3), (1000, 2000))
    assert 1.0 < d["q_ratio"][0] <= d["q_ratio"][1] < 1.2
    assert d["a_ratio"][1] < 1.001


def test_json_roundtrip_and_strictness():
    m = CoefficientModel.surface_tension(1 / 3, 2 / 3, zs=0.5, sigma=2.0)
    back = CoefficientModel.from_json(json.dumps(m.to_dict()))
    assert back == m
    assert back.kind is Kind.CF
    with pytest.raises(ConfigError):
        CoefficientModel.from_dict({"kind": "PowerLawPT", "alpha": 1, "mu": 0.5,
                                    "zs": 1, "q": 1, "colour": 3})
    with pytest.raises(ConfigError):
        CoefficientModel.from_dict({"kind": "PowerLawPT", "alpha": 1, "mu": 0.5,
                                    "zs": 1, "q": 1, "sigma": 1})
    with pytest.raises(ConfigError):
        CoefficientModel.power_law(1.0, 1.5)
