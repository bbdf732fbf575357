"""Equilibria ``Q_i z**i`` of the Becker-Doring system and their moments."""
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import _series
from .coeffs import LogProfileStream, critical_monomer_density, series_mass
from .errors import BudgetError, DomainError, SupercriticalError

#: relative margin kept below zs by the bisection bracket
ZS_MARGIN = 1e-12
BISECTION_STEPS = 200


def _check_z(model, z):
    if z < 0:
        raise DomainError(f"z must be nonnegative, got {z}")
    zs = critical_monomer_density(model)
    if z > zs:
        raise DomainError(f"z = {z} exceeds the critical monomer density {zs}")
    return zs


def mass_of_z(model, z, tol=1e-12):
    """Mass ``sum_i i Q_i z**i`` of the equilibrium with monomer density ``z``.

    The neglected tail is bounded by ``tol`` (absolute).

    Raises
    ------
    DomainError
        if ``z`` is negative or above ``zs``.
    BudgetError
        if the tail cannot be certified within the summation budget.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    _check_z(model, z)
    if z == 0:
        return 0.0
    return series_mass(model, z, tol).value


def z_of_mass(model, rho, tol=1e-12):
    """Equilibrium monomer density ``z`` with ``mass_of_z(z) = rho``.

    Bisection over ``[0, zs (1 - 1e-12)]``, stopping when the mass residual
    is within ``tol`` or the bracket has collapsed.
    """
    if not rho > 0:
        raise DomainError("rho must be positive")
    zs = critical_monomer_density(model)
    lo, hi = 0.0, zs * (1.0 - ZS_MARGIN)
    sum_tol = min(tol, 1e-12) * 1e-2
    m_hi = mass_of_z(model, hi, sum_tol) if np.isfinite(zs) else np.inf
    if rho > m_hi + tol:
        try:
            rho_s = mass_of_z(model, zs, sum_tol)
        except BudgetError:
            rho_s = m_hi
        if rho > rho_s + tol:
            raise SupercriticalError(
                f"mass {rho} exceeds the critical mass {rho_s}")
        return zs
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        m = mass_of_z(model, mid, sum_tol)
        if abs(m - rho) <= tol:
            return mid
        if m < rho:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return lo if abs(mass_of_z(model, lo, sum_tol) - rho) <= abs(
        mass_of_z(model, hi, sum_tol) - rho) else hi


@dataclass(frozen=True)
class EquilibriumProfile:
    """Truncated equilibrium ``Q_i z**i`` together with its moments.

    ``log_scriptQ`` covers ``i = 1..n``; the scalar moments are full
    infinite sums with certified tails.
    """

    z: float
    n: int
    log_scriptQ: np.ndarray
    mass: float
    m2: float
    m3: float
    a_quantity: float
    total: float
    a_weighted: float
    tol: float
    zs: float = math.nan

    @property
    def scriptQ(self):
        return np.exp(self.log_scriptQ)

    @property
    def sizes(self):
        return np.arange(1, self.n + 1)

    def to_dict(self):
        d = asdict(self)
        d["log_scriptQ"] = [float(v) for v in self.log_scriptQ]
        for key in ("m3", "a_quantity", "zs"):
            if not np.isfinite(d[key]):
                d[key] = "inf" if d[key] > 0 else "nan"
        return d

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["log_scriptQ"] = np.asarray(d["log_scriptQ"], dtype=float)
        for key in ("m3", "a_quantity", "zs"):
            if key in d:
                d[key] = float(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _extend_until_certified(model, z, tol, n_min, max_terms=_series.MAX_TERMS):
    """Grow ``log(Q_i z**i)`` until every moment sum has a certified tail.

    Returns ``(i, log_q, log_terms)`` where ``log_terms`` maps each moment
    name to its log-summands over ``i``.
    """
    stream = LogProfileStream(model, z)
    idx, lq = stream.take(max(n_min, _series.CHUNK))
    while True:
        terms = _moment_log_terms(model, idx, lq)
        if all(_series.geometric_tail(t)[0] <= tol for t in terms.values()):
            return idx, lq, terms
        if idx.size >= max_terms:
            raise BudgetError(
                f"equilibrium sums at z={z} not certified after {idx.size} terms",
                partial={k: float(np.sum(np.exp(v))) for k, v in terms.items()})
        i_new, lq_new = stream.take(idx.size)
        idx = np.concatenate([idx, i_new])
        lq = np.concatenate([lq, lq_new])


def _moment_log_terms(model, idx, lq):
    li = np.log(idx.astype(float))
    log_a = model.log_a(idx)
    with np.errstate(divide="ignore"):
        a_plus_b = np.logaddexp(np.logaddexp(0.0, log_a), model.log_b_raw(idx))
    return {
        "total": lq,
        "mass": li + lq,
        "m2": 2 * li + lq,
        "a_quantity": 2 * li + 2 * a_plus_b + lq,
        "a_weighted": log_a + lq,
    }


def equilibrium_profile(model, z, n, tol=1e-12):
    """Materialise the equilibrium of monomer density ``z`` up to size ``n``.

    ``M_3`` uses suffix sums of ``j Q_j z**j`` in one pass and is reported
    as ``inf`` when its own summands fail the tail certificate.
    """
    if n < 2:
        raise DomainError("n must be at least 2")
    if not z > 0:
        raise DomainError("z must be positive")
    zs = _check_z(model, z)
    idx, lq, terms = _extend_until_certified(model, z, tol, n)
    sums = {k: float(np.sum(np.exp(v))) for k, v in terms.items()}

    # suffix sums S_i = sum_{j > i} j Q_j, kept in logs; the certified
    # mass tail beyond the last index is folded in.
    log_jq = terms["mass"]
    log_mass_tail = _series.log_geometric_tail(log_jq)[0]
    rev = np.logaddexp.accumulate(log_jq[::-1])[::-1]
    log_suffix = np.logaddexp(np.append(rev[1:], -np.inf), log_mass_tail)
    log_m3 = 2 * log_suffix - model.log_a(idx) - lq
    m3_tail, _ = _series.geometric_tail(log_m3)
    m3 = float(np.sum(np.exp(log_m3))) if m3_tail <= max(tol, 1e-10) else np.inf

    log_q = np.array(lq[:n], copy=True)
    log_q.flags.writeable = False
    return EquilibriumProfile(
        z=float(z), n=int(n), log_scriptQ=log_q, mass=sums["mass"],
        m2=sums["m2"], m3=m3, a_quantity=sums["a_quantity"],
        total=sums["total"], a_weighted=sums["a_weighted"], tol=tol,
        zs=float(zs))
