"""Coagulation/fragmentation coefficient families and detailed balance.

Three families are supported:

``PowerLawPT``
    ``a_i = i**alpha``, ``b_i = a_i (zs + q i**(mu - 1))``.
``SurfaceTensionCF``
    ``a_i = i**alpha``,
    ``b_i = zs (i-1)**alpha exp(sigma i**mu - sigma (i-1)**mu)``.
``ExplicitTable``
    user supplied ``a_1, a_2, ...`` and ``b_1, b_2, ...``.  Indices past
    the end of a table repeat its last entry (constant continuation).
    The first entry of ``table_b`` stands for ``b_1`` and is ignored.

``b_1`` is zero for every family.  Everything that involves the
detailed-balance coefficients ``Q_i`` is computed with logarithms.
"""
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _series
from .errors import ConfigError, DomainError, EstimationError


class Kind(str, enum.Enum):
    PT = "PowerLawPT"
    CF = "SurfaceTensionCF"
    TABLE = "ExplicitTable"


_KIND_ALIASES = {
    "powerlawpt": Kind.PT, "pt": Kind.PT, "power_law": Kind.PT,
    "surfacetensioncf": Kind.CF, "cf": Kind.CF, "surface_tension": Kind.CF,
    "explicittable": Kind.TABLE, "table": Kind.TABLE,
}

_JSON_FIELDS = ("kind", "alpha", "mu", "zs", "q", "sigma", "table_a", "table_b")


def _as_index(i):
    i = np.asarray(i)
    if not np.issubdtype(i.dtype, np.integer):
        if np.any(i != np.floor(i)):
            raise DomainError("cluster sizes must be integers")
        i = i.astype(np.int64)
    if np.any(i < 1):
        raise DomainError("cluster sizes start at 1")
    return i


@dataclass(frozen=True)
class CoefficientModel:
    """Rate sequences ``(a_i)``, ``(b_i)`` with their parametric metadata."""

    kind: Kind
    alpha: float = None
    mu: float = None
    zs: float = None
    q: float = None
    sigma: float = None
    table_a: tuple = field(default=None, repr=False)
    table_b: tuple = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", _parse_kind(self.kind))
        if self.kind is Kind.TABLE:
            for name in ("table_a", "table_b"):
                seq = getattr(self, name)
                if seq is None or len(seq) == 0:
                    raise ConfigError(f"ExplicitTable requires a nonempty {name}")
                seq = tuple(float(v) for v in seq)
                object.__setattr__(self, name, seq)
            if any(not v > 0 for v in self.table_a):
                raise ConfigError("table_a entries must be positive")
            b_used = self.table_b[1:] if len(self.table_b) > 1 else self.table_b
            if any(not v > 0 for v in b_used):
                raise ConfigError("table_b entries (i >= 2) must be positive")
            return
        for name in ("alpha", "mu", "zs"):
            if getattr(self, name) is None:
                raise ConfigError(f"{self.kind.value} requires '{name}'")
        extra = "q" if self.kind is Kind.PT else "sigma"
        if getattr(self, extra) is None:
            raise ConfigError(f"{self.kind.value} requires '{extra}'")
        if not 0.0 < self.mu < 1.0:
            raise ConfigError("mu must lie in (0, 1)")
        if not self.zs > 0.0:
            raise ConfigError("zs must be positive")
        if not getattr(self, extra) > 0.0:
            raise ConfigError(f"{extra} must be positive")
        if self.alpha < 0.0:
            raise ConfigError("alpha must be nonnegative")

    # -- constructors ---------------------------------------------------
    @classmethod
    def power_law(cls, alpha, mu, zs=1.0, q=1.0):
        return cls(Kind.PT, alpha=float(alpha), mu=float(mu), zs=float(zs),
                   q=float(q))

    @classmethod
    def surface_tension(cls, alpha, mu, zs=1.0, sigma=1.0):
        return cls(Kind.CF, alpha=float(alpha), mu=float(mu), zs=float(zs),
                   sigma=float(sigma))

    @classmethod
    def table(cls, a, b):
        return cls(Kind.TABLE, table_a=tuple(a), table_b=tuple(b))

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(_JSON_FIELDS)
        if unknown:
            raise ConfigError(f"unknown model fields: {sorted(unknown)}")
        if "kind" not in doc:
            raise ConfigError("model document needs a 'kind'")
        kind = _parse_kind(doc["kind"])
        if kind is Kind.TABLE:
            stray = {"alpha", "mu", "zs", "q", "sigma"} & set(doc)
            if stray:
                raise ConfigError(f"fields {sorted(stray)} do not apply to ExplicitTable")
            return cls(kind, table_a=doc.get("table_a"), table_b=doc.get("table_b"))
        stray = {"table_a", "table_b", "sigma" if kind is Kind.PT else "q"} & set(doc)
        if stray:
            raise ConfigError(f"fields {sorted(stray)} do not apply to {kind.value}")
        return cls(kind, **{k: float(v) for k, v in doc.items() if k != "kind"})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        if self.kind is Kind.TABLE:
            return {"kind": self.kind.value, "table_a": list(self.table_a),
                    "table_b": list(self.table_b)}
        extra = "q" if self.kind is Kind.PT else "sigma"
        return {"kind": self.kind.value, "alpha": self.alpha, "mu": self.mu,
                "zs": self.zs, extra: getattr(self, extra)}

    # -- coefficients ---------------------------------------------------
    def _table(self, seq, i):
        arr = np.asarray(seq)
        return arr[np.minimum(i, len(arr)) - 1]

    def log_a(self, i):
        i = _as_index(i)
        if self.kind is Kind.TABLE:
            return np.log(self._table(self.table_a, i))
        return self.alpha * np.log(i.astype(float))

    def log_b(self, i):
        """``log b_i``; ``-inf`` at ``i = 1``."""
        i = _as_index(i)
        fi = i.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind is Kind.TABLE:
                out = np.log(self._table(self.table_b, i))
            elif self.kind is Kind.PT:
                out = self.alpha * np.log(fi) + np.log(self.zs + self.q * fi ** (self.mu - 1.0))
            else:
                out = (math.log(self.zs) + self.alpha * np.log(fi - 1.0)
                       + self.sigma * _pow_increment(fi - 1.0, self.mu))
        return np.where(i == 1, -np.inf, out)

    def log_b_raw(self, i):
        """``log b_i`` with the family formula (or table entry) also at ``i = 1``.

        Only the moment ``A = sum i^2 (1 + a_i + b_i)^2 Q_i z^i`` uses this;
        the dynamics always see ``b_1 = 0``.
        """
        i = _as_index(i)
        out = self.log_b(i)
        if self.kind is Kind.TABLE:
            b1 = math.log(self.table_b[0]) if self.table_b[0] > 0 else -np.inf
            return np.where(i == 1, b1, out)
        if self.kind is Kind.PT:
            return np.where(i == 1, math.log(self.zs + self.q), out)
        b1 = -np.inf if self.alpha > 0 else math.log(self.zs) + self.sigma
        return np.where(i == 1, b1, out)

    def a(self, i):
        return np.exp(self.log_a(i))

    def b(self, i):
        return np.exp(self.log_b(i))

    def log_db_step(self, i):
        """``log(a_i / b_{i+1}) = log Q_{i+1} - log Q_i``, evaluated stably."""
        i = _as_index(i)
        fi = i.astype(float)
        if self.kind is Kind.PT:
            return (-self.alpha * np.log1p(1.0 / fi)
                    - np.log(self.zs + self.q * (fi + 1.0) ** (self.mu - 1.0)))
        if self.kind is Kind.CF:
            return -math.log(self.zs) - self.sigma * _pow_increment(fi, self.mu)
        return self.log_a(i) - self.log_b(i + 1)

    @property
    def parametric(self):
        return self.kind is not Kind.TABLE

    def sigma_tail_lower(self, z, n):
        """Lower bound for ``inf_{i > n} (a_i z + b_i)``."""
        if self.kind is Kind.TABLE:
            last = max(len(self.table_a), len(self.table_b))
            if n + 1 >= last:
                i = np.array([n + 1])
                return float(self.a(i)[0] * z + self.b(i)[0])
            i = np.arange(n + 1, last + 1)
            return float(np.min(self.a(i) * z + self.b(i)))
        if self.kind is Kind.PT:
            return (n + 1) ** self.alpha * (z + self.zs)
        return (n + 1) ** self.alpha * z + self.zs * n ** self.alpha


def _pow_increment(x, mu):
    """``(x + 1)**mu - x**mu`` without cancellation for large ``x``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        big = x ** mu * np.expm1(mu * np.log1p(1.0 / x))
    return np.where(x > 0, big, 1.0)


def _parse_kind(kind):
    if isinstance(kind, Kind):
        return kind
    try:
        return _KIND_ALIASES[str(kind).lower()]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}") from None


def eval_coefficients(model, i):
    """Return ``(a_i, b_i)`` for a single cluster size ``i >= 1``."""
    if int(i) != i or i < 1:
        raise DomainError(f"cluster size must be a positive integer, got {i!r}")
    idx = np.array([int(i)])
    return float(model.a(idx)[0]), float(model.b(idx)[0])


@dataclass(frozen=True)
class LogDetailedBalance:
    log_Q: np.ndarray
    n: int

    def log_scriptQ(self, z):
        """``log(Q_i z**i)`` for ``i = 1..n``."""
        with np.errstate(divide="ignore"):
            return self.log_Q + np.arange(1, self.n + 1) * math.log(z)


def log_detailed_balance(model, n):
    """``log Q_i`` for ``i = 1..n`` from ``Q_1 = 1``, ``Q_{i+1} = Q_i a_i / b_{i+1}``."""
    if n < 1:
        raise DomainError("n must be at least 1")
    log_q = np.zeros(n)
    if n > 1:
        np.cumsum(model.log_db_step(np.arange(1, n)), out=log_q[1:])
    log_q.flags.writeable = False
    return LogDetailedBalance(log_q, n)


class LogProfileStream:
    """Yields ``log(Q_i z**i)`` chunk by chunk, carrying the running sum."""

    def __init__(self, model, z):
        self.model = model
        self.log_z = math.log(z) if z > 0 else -np.inf
        self.next_index = 1
        self._last = None

    def take(self, m):
        i = np.arange(self.next_index, self.next_index + m)
        if self.log_z == -np.inf:
            out = np.full(m, -np.inf)
        else:
            steps = self.model.log_db_step(i[:-1] if self._last is None else i - 1)
            steps = steps + self.log_z
            if self._last is None:
                out = np.concatenate([[self.log_z], self.log_z + np.cumsum(steps)])
            else:
                out = self._last + np.cumsum(steps)
            self._last = out[-1]
        self.next_index += m
        return i, out


# -- critical quantities ----------------------------------------------------

def ratio_diagnostics(model, window):
    """Finite-window view of ``Q_i / Q_{i+1}`` and ``a_{i+1} / a_i``.

    Returns a dict with the (min, max) of each ratio over ``window``.
    """
    i = np.arange(window[0], window[1] + 1)
    q_ratio = np.exp(-model.log_db_step(i))
    a_ratio = np.exp(model.log_a(i + 1) - model.log_a(i))
    return {"q_ratio": (float(q_ratio.min()), float(q_ratio.max())),
            "a_ratio": (float(a_ratio.min()), float(a_ratio.max()))}


def critical_monomer_density(model, rtol=1e-3, probe=64):
    """Critical monomer density ``zs``.

    The parametric families return their ``zs`` parameter.  For tables the
    limit of ``Q_i / Q_{i+1}`` is read off the last quarter of the table
    plus ``probe`` continuation indices; a spread larger than ``rtol``
    raises :class:`EstimationError`.
    """
    if model.parametric:
        return model.zs
    last = max(len(model.table_a), len(model.table_b))
    lo = max(1, (3 * last) // 4)
    diag = ratio_diagnostics(model, (lo, last + probe))
    rmin, rmax = diag["q_ratio"]
    if rmax - rmin > rtol * rmax:
        raise EstimationError(
            f"Q_i/Q_(i+1) does not settle over [{lo}, {last + probe}]: "
            f"range [{rmin:.6g}, {rmax:.6g}]", observed=(rmin, rmax))
    return float(np.exp(-model.log_db_step(np.array([last + probe]))[0]))


def series_mass(model, z, tol, **kw):
    """``sum_i i Q_i z**i`` with a certified tail (no domain checks)."""
    stream = LogProfileStream(model, z)

    def terms(m):
        i, lq = stream.take(m)
        return np.log(i) + lq

    return _series.sum_log_series(terms, tol, **kw)


def critical_mass(model, tol=1e-12, **kw):
    """Critical mass ``rho_s = sum_i i Q_i zs**i``; may be ``inf``.

    Raises :class:`~bdgap.errors.IndeterminateError` when the series
    neither certifies nor diverges within the term budget.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    return series_mass(model, critical_monomer_density(model), tol, **kw).value


#: log-log slope below which delta_k sqrt(a_k) is read as decaying to 0
DELTA_DECAY_SLOPE = 1e-2


def delta_condition(model, window, threshold=1e-6):
    """``delta_k sqrt(a_k)`` at ``z = zs`` over ``window`` and its verdict.

    ``delta_k = b_k / (a_k zs) - 1``.  The verdict is true when the minimum
    over the second half of the window exceeds ``threshold`` and the
    log-log slope there is not below ``-DELTA_DECAY_SLOPE``; a finite
    window cannot see a liminf, but a power-law decay to 0 shows as a
    negative slope long before the values cross any fixed threshold.
    """
    zs = critical_monomer_density(model)
    if not np.isfinite(zs):
        raise DomainError("delta condition needs a finite zs")
    k = np.arange(max(window[0], 2), window[1] + 1)
    if k.size == 0:
        raise DomainError("window must contain some k >= 2")
    log_ratio = model.log_b(k) - model.log_a(k) - math.log(zs)
    values = np.expm1(log_ratio) * np.exp(0.5 * model.log_a(k))
    half = k.size // 2
    tail = values[half:]
    ok = bool(np.min(tail) > threshold)
    if ok and tail.size >= 2:
        slope = np.polyfit(np.log(k[half:]), np.log(tail), 1)[0]
        ok = bool(slope >= -DELTA_DECAY_SLOPE)
    return values, ok
