"""Time evolution of the truncated Becker-Doring system.

Sizes ``1..n`` exchange monomers through the fluxes

    W_i = a_i c_1 c_i - b_{i+1} c_{i+1},    W_n = 0,

with ``dc_i/dt = W_{i-1} - W_i`` for ``i >= 2`` and
``dc_1/dt = -W_1 - sum_k W_k``.  Closing the chain with ``W_n = 0``
keeps ``sum_i i c_i`` exactly conserved.  Writing ``c_i = Q_i (1 + h_i)``
around an equilibrium splits the right-hand side into ``L h`` plus a
quadratic remainder ``Gamma(h, h)``.

Time stepping uses the Dormand-Prince 5(4) pair from scipy, driven one
step at a time so that small negative undershoots can be clamped and
step-size collapse reported as stiffness.
"""
import io
import csv
import math
import warnings
from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse
from scipy.integrate import RK45
from scipy.stats import linregress

from . import _series
from .equilibrium import equilibrium_profile, z_of_mass
from .errors import (DomainError, InsufficientDataError, MomentOverflowError,
                     PositivityError, StiffnessError)

MASS_DRIFT_TOL = 1e-8
CSV_HEADER = ("t", "mass", "H", "Fz", "D", "exp_moment", "l1_dist")


class StateVector:
    """Cluster densities ``c_1..c_n`` with a cached mass ``sum_i i c_i``."""

    def __init__(self, c):
        self.c = c

    @property
    def c(self):
        return self._c

    @c.setter
    def c(self, values):
        arr = np.array(values, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise DomainError("a state needs at least two sizes")
        if not np.all(np.isfinite(arr)):
            raise DomainError("densities must be finite")
        if np.any(arr < 0):
            raise DomainError("densities must be nonnegative")
        arr.flags.writeable = False
        self._c = arr
        self._mass = float(np.dot(np.arange(1, arr.size + 1), arr))

    @property
    def n(self):
        return self._c.size

    @property
    def mass(self):
        return self._mass

    def __repr__(self):
        return f"StateVector(n={self.n}, mass={self.mass:.6g})"


def _rates(model, n):
    i = np.arange(1, n + 1)
    return model.a(i), model.b(i)


def fluxes(model, c, rates=None):
    """All ``W_1..W_n`` (the last one is the closure zero)."""
    c = np.asarray(c, dtype=float)
    a, b = rates if rates is not None else _rates(model, c.size)
    w = np.zeros(c.size)
    w[:-1] = a[:-1] * c[0] * c[:-1] - b[1:] * c[1:]
    return w


def flux(model, state, i):
    """``W_i = a_i c_1 c_i - b_{i+1} c_{i+1}``; zero at ``i = n``."""
    if not 1 <= i <= state.n:
        raise DomainError(f"flux index {i} outside 1..{state.n}")
    if i == state.n:
        return 0.0
    a, b = _rates(model, i + 1)
    c = state.c
    return float(a[i - 1] * c[0] * c[i - 1] - b[i] * c[i])


def _rhs_from_fluxes(w):
    out = np.empty_like(w)
    out[0] = -w[0] - np.sum(w)
    out[1:] = w[:-1] - w[1:]
    return out


def bd_rhs(model, state):
    """``dc/dt`` of the truncated system."""
    c = state.c if isinstance(state, StateVector) else np.asarray(state, float)
    if c.size < 2:
        raise DomainError("n must be at least 2")
    return _rhs_from_fluxes(fluxes(model, c))


# -- functionals --------------------------------------------------------------

def free_energy(state, profile):
    """``(H, F_z)`` of a state relative to the equilibrium ``profile``.

    ``H = sum_i c_i (log(c_i / Q_i) - 1)`` with ``Q_i`` the detailed-balance
    coefficients, and ``F_z = H - log(z) sum_i i c_i + sum_i Q_i z**i``.
    ``F_z`` is accumulated term by term as
    ``Q_i z**i ((1 + h_i) log(1 + h_i) - h_i)`` so it is nonnegative and
    accurate near equilibrium; sizes past ``n`` add ``Q_i z**i``.
    """
    c = state.c
    n = state.n
    if n > profile.n:
        raise DomainError(f"profile holds {profile.n} sizes, state has {n}")
    lq = profile.log_scriptQ[:n]
    z = profile.z
    log_Q = lq - np.arange(1, n + 1) * math.log(z)
    pos = c > 0
    h_val = float(np.sum(c[pos] * (np.log(c[pos]) - log_Q[pos] - 1.0)))

    q = np.exp(lq)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(pos, np.expm1(np.log(np.where(pos, c, 1.0)) - lq), -1.0)
        xlogx = np.where(pos, (1.0 + h) * np.log1p(h), 0.0)
    fz_terms = q * (xlogx - h)
    beyond = max(profile.total - float(np.sum(q)), 0.0)
    return h_val, float(np.sum(fz_terms)) + beyond


def dissipation(state, model):
    """``D = sum_i W_i log(a_i c_1 c_i / (b_{i+1} c_{i+1}))``, always ``>= 0``.

    A pair with exactly one zero argument gives ``inf``; both zero gives 0.
    """
    c = state.c
    n = state.n
    i = np.arange(1, n)
    with np.errstate(divide="ignore"):
        u = model.log_a(i) + np.log(c[0]) + np.log(c[:-1])
        v = model.log_b(i + 1) + np.log(c[1:])
    both_zero = np.isneginf(u) & np.isneginf(v)
    one_zero = np.isneginf(u) ^ np.isneginf(v)
    if np.any(one_zero):
        return np.inf
    ok = ~both_zero
    d = u[ok] - v[ok]
    # W (u - v) = e^v expm1(u - v) (u - v), nonnegative termwise
    terms = np.exp(v[ok]) * np.expm1(d) * d
    return float(np.sum(terms))


def exp_moment(state, nu):
    """``sum_i exp(nu i) c_i``.  ``nu = 0`` counts clusters."""
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    c = state.c
    pos = c > 0
    if not np.any(pos):
        return 0.0
    logs = nu * np.arange(1, state.n + 1)[pos] + np.log(c[pos])
    top = float(np.max(logs))
    if top > 700.0:
        raise MomentOverflowError(
            f"exp({nu} i) c_i overflows at the truncation edge; use a smaller nu")
    return float(np.sum(np.exp(logs)))


def admissible_eta(profile):
    """Upper limit ``log(zs / z) / 2`` for the exponential weight."""
    if not np.isfinite(profile.zs):
        raise DomainError("profile does not record zs")
    return 0.5 * math.log(profile.zs / profile.z)


def weighted_l1_distance(state, profile, eta):
    """``sum_i exp(eta i) |c_i - Q_i z**i|`` plus a bound on the neglected tail.

    Needs ``0 < eta < log(zs / z) / 2`` so the weighted equilibrium tail
    is summable with room to spare.
    """
    limit = admissible_eta(profile)
    if not 0 < eta < limit:
        raise DomainError(
            f"eta = {eta} must satisfy 0 < eta < log(zs/z)/2 = {limit:.6g}")
    n = state.n
    if n > profile.n:
        raise DomainError(f"profile holds {profile.n} sizes, state has {n}")
    sizes = np.arange(1, profile.n + 1)
    lw = eta * sizes + profile.log_scriptQ            # log(e^{eta i} Q_i)
    diff = np.abs(state.c - np.exp(profile.log_scriptQ[:n]))
    head = float(np.sum(np.exp(eta * sizes[:n]) * diff))
    between = float(np.sum(np.exp(lw[n:])))
    log_tail, _ = _series.log_geometric_tail(lw)
    return head + between + float(np.exp(log_tail))


def fluctuation_split(state, profile):
    """``h_i = c_i / (Q_i z**i) - 1``.

    Sizes whose equilibrium weight underflows are dropped with a warning,
    so the result may be shorter than the state.
    """
    n = state.n
    if n > profile.n:
        raise DomainError(f"profile holds {profile.n} sizes, state has {n}")
    lq = profile.log_scriptQ[:n]
    usable = np.flatnonzero(lq > -700.0)
    m = int(usable[-1]) + 1 if usable.size else 0
    if m < n:
        warnings.warn(f"equilibrium weight underflows past size {m}; "
                      f"fluctuation clipped to {m} entries", RuntimeWarning)
    return state.c[:m] / np.exp(lq[:m]) - 1.0


def gamma_term(profile, model, f, g):
    """Quadratic part ``Gamma(f, g)`` of the equation for ``h``.

    With ``V_i = a_i Q_i Q_1 (f_i g_1 + f_1 g_i) / 2`` (``V_n = 0``):

        Gamma_1 = -(V_1 + sum_k V_k) / Q_1,   Gamma_i = (V_{i-1} - V_i) / Q_i.

    Beyond the truncation ``f`` and ``g`` vanish, so the sum in the first
    component has no tail.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n = f.size
    if g.size != n or n > profile.n:
        raise DomainError("f and g must share a length not exceeding the profile")
    lq = profile.log_scriptQ[:n]
    la = model.log_a(np.arange(1, n + 1))
    sym = 0.5 * (f[:-1] * g[0] + f[0] * g[:-1])        # i = 1..n-1
    out = np.empty(n)
    v_over_q1 = np.exp(la[:-1] + lq[:-1]) * sym
    out[0] = -(v_over_q1[0] + np.sum(v_over_q1))
    out[1:] = np.exp(la[:-1] + lq[:-1] + lq[0] - lq[1:]) * sym
    out[1:-1] -= np.exp(la[1:-1] + lq[0]) * sym[1:]
    return out


# -- initial data ---------------------------------------------------------------

def perturbation_pattern(n, seed=0):
    """Fixed pseudo-random sequence in ``[-1, 1]`` for perturbed initial data."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, n)


def mass_matched_fluctuation(profile, g, eps):
    """``eps g`` with its first entry adjusted so ``sum_i i Q_i h_i = 0``."""
    g = np.asarray(g, dtype=float)
    n = g.size
    q = np.exp(profile.log_scriptQ[:n])
    h = eps * g
    h[0] -= np.dot(np.arange(1, n + 1) * q, h) / q[0]
    return h


def perturbed_equilibrium(profile, n, eps, seed=0):
    """``c_i = Q_i z**i (1 + h_i)`` with a seeded, mass-matched ``h``."""
    h = mass_matched_fluctuation(profile, perturbation_pattern(n, seed), eps)
    if np.any(h <= -1.0):
        raise DomainError("perturbation too large: a density would be negative")
    return StateVector(np.exp(profile.log_scriptQ[:n]) * (1.0 + h))


# -- integration ----------------------------------------------------------------

@dataclass
class Controls:
    """Step control and snapshot cadence for :func:`integrate`.

    ``eta`` and ``nu`` default to a quarter and a half of ``log(zs/z)``.
    """

    rtol: float = 1e-10
    atol: float = 1e-14
    max_steps: int = 1_000_000
    snapshot_every: float = 0.1
    keep_states: bool = True
    eta: float = None
    nu: float = None
    profile: object = None

    @classmethod
    def coerce(cls, controls):
        if controls is None:
            return cls()
        if isinstance(controls, cls):
            return controls
        known = {f.name for f in fields(cls)}
        extra = set(controls) - known
        if extra:
            raise DomainError(f"unknown controls: {sorted(extra)}")
        return cls(**controls)

    def validate(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise DomainError("tolerances must be positive")
        if not self.snapshot_every > 0:
            raise DomainError("snapshot_every must be positive")


def _snapshot_times(t_end, every):
    k = int(math.floor(t_end / every + 1e-9))
    ts = every * np.arange(0, k + 1)
    if t_end - ts[-1] > 1e-9 * max(1.0, t_end):
        ts = np.append(ts, t_end)
    else:
        ts[-1] = t_end
    return ts


def _drive(fun, y0, t_end, ctl, on_snapshot, clamp, atol=None):
    """Step ``fun`` with RK45 from 0 to ``t_end``, calling ``on_snapshot``
    at each snapshot time with interpolated values.

    Returns the number of clamped components.  The error estimate is an
    RMS over components, so a single component may carry up to
    ``sqrt(n) atol``; that is the undershoot clamped before aborting.
    """
    ts = _snapshot_times(t_end, ctl.snapshot_every)
    atol = ctl.atol if atol is None else atol
    solver = RK45(fun, 0.0, np.array(y0, dtype=float), t_end,
                  rtol=ctl.rtol, atol=atol)
    on_snapshot(0.0, solver.y.copy())
    floor = -np.asarray(atol) * math.sqrt(len(y0))
    nxt = 1
    steps = clamped = 0
    while nxt < ts.size:
        if steps >= ctl.max_steps:
            raise StiffnessError(
                f"{steps} steps reached t={solver.t:.6g} of {t_end}; the system "
                "is likely stiff: reduce n or use an implicit method")
        msg = solver.step()
        steps += 1
        if solver.status == "failed":
            raise StiffnessError(
                f"step size collapsed at t={solver.t:.6g} ({msg}); the system "
                "is likely stiff: reduce n or use an implicit method")
        if clamp:
            bad = solver.y < 0
            if np.any(bad):
                if np.any(solver.y < floor):
                    worst = int(np.argmin(solver.y - floor))
                    raise PositivityError(
                        f"density {solver.y[worst]:.3g} at size {worst + 1} is "
                        f"below its floor at t={solver.t:.6g}",
                        residual=float(-np.min(solver.y)))
                clamped += int(np.count_nonzero(bad))
                solver.y[bad] = 0.0
                solver.f = fun(solver.t, solver.y)
        if nxt < ts.size and ts[nxt] <= solver.t:
            dense = solver.dense_output()
            while nxt < ts.size and ts[nxt] <= solver.t:
                y = solver.y.copy() if ts[nxt] == solver.t else dense(ts[nxt])
                if clamp:
                    y = np.where((y < 0) & (y >= floor), 0.0, y)
                on_snapshot(float(ts[nxt]), y)
                nxt += 1
    return clamped


@dataclass
class Trajectory:
    """Snapshots of a nonlinear run and their observables.

    ``observables`` has one row ``(mass, H, Fz, D, exp_moment, l1_dist)``
    per entry of ``times``.
    """

    times: np.ndarray
    states: list
    observables: np.ndarray
    eta: float
    nu: float
    mass_drift: float
    flagged: bool
    clamped: int = 0

    def column(self, name):
        return self.observables[:, CSV_HEADER.index(name) - 1]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t, row in zip(self.times, self.observables):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()


def integrate(model, state0, t_end, controls=None):
    """Integrate the truncated system from ``state0`` up to ``t_end``.

    The absolute tolerance of size ``i`` is ``atol`` times the
    equilibrium weight of ``i`` relative to its largest value, so the
    exponentially small tail is resolved to relative accuracy; without
    this, exponentially weighted observables would measure integration
    noise.  Observables are computed only at snapshot times.  ``controls.profile``
    is the reference equilibrium; by default it is the one with the mass
    of ``state0``.  A relative mass drift above ``1e-8`` sets ``flagged``.

    Raises
    ------
    StiffnessError
        when the step size collapses or ``max_steps`` is exhausted.
    PositivityError
        when a density drops below ``-sqrt(n)`` times its absolute tolerance.
    """
    if not t_end > 0:
        raise DomainError("t_end must be positive")
    ctl = Controls.coerce(controls)
    ctl.validate()
    n = state0.n
    profile = ctl.profile
    if profile is None:
        profile = equilibrium_profile(model, z_of_mass(model, state0.mass), n)
    limit = admissible_eta(profile)
    eta = 0.5 * limit if ctl.eta is None else ctl.eta
    nu = limit if ctl.nu is None else ctl.nu
    rates = _rates(model, n)

    def fun(_t, c):
        return _rhs_from_fluxes(fluxes(model, c, rates))

    times, states, rows = [], [], []

    def on_snapshot(t, y):
        s = StateVector(np.maximum(y, 0.0))
        h_val, fz = free_energy(s, profile)
        rows.append((s.mass, h_val, fz, dissipation(s, model),
                     exp_moment(s, nu), weighted_l1_distance(s, profile, eta)))
        times.append(t)
        if ctl.keep_states:
            states.append(s)

    lq = profile.log_scriptQ[:n]
    atol = ctl.atol * np.exp(lq - np.max(lq))
    clamped = _drive(fun, state0.c, t_end, ctl, on_snapshot, clamp=True,
                     atol=np.maximum(atol, np.finfo(float).tiny))
    obs = np.array(rows)
    drift = float(np.max(np.abs(obs[:, 0] - state0.mass)) / state0.mass)
    return Trajectory(times=np.array(times), states=states, observables=obs,
                      eta=eta, nu=nu, mass_drift=drift,
                      flagged=drift > MASS_DRIFT_TOL, clamped=clamped)


def closure_matrix(matrix):
    """Sparse matrix of :func:`~bdgap.spectral.apply_linearized`."""
    n = matrix.n
    lq, la = matrix.log_weight, matrix.log_a
    i = np.arange(n - 1)
    # column structure of the bracket h_i + h_1 - h_{i+1} for i = 1..n-1
    brows = np.concatenate([i, i, i])
    bcols = np.concatenate([i, np.zeros(n - 1, int), i + 1])
    bvals = np.concatenate([np.ones(n - 1), np.ones(n - 1), -np.ones(n - 1)])
    bracket = scipy.sparse.csr_matrix((bvals, (brows, bcols)), shape=(n - 1, n))
    w1 = np.exp(la[:-1] + lq[:-1])
    first = -(bracket[0] * w1[0] + scipy.sparse.csr_matrix(w1) @ bracket)
    inflow = scipy.sparse.diags(np.exp(la[:-1] + lq[:-1] + lq[0] - lq[1:])) @ bracket
    out_coef = np.append(np.exp(la[1:-1] + lq[0]), 0.0)
    outflow = scipy.sparse.diags(out_coef) @ scipy.sparse.vstack(
        [bracket[1:], scipy.sparse.csr_matrix((1, n))])
    return scipy.sparse.vstack([first, inflow - outflow]).tocsr()


@dataclass
class LinearTrajectory:
    """Snapshots ``(t, h, |h|_H, |h|_X)`` of a linearized run."""

    times: np.ndarray
    h: list
    norm_h: np.ndarray
    norm_x: np.ndarray
    eta: float


def integrate_linearized(matrix, h0, t_end, controls=None):
    """Integrate ``dh/dt = L h`` (closure form) from ``h0``.

    ``h0`` is projected onto ``sum_i i Q_i h_i = 0`` with a warning when
    it is off by more than ``1e-10`` relative.  ``|h|_H`` is the
    ``Q``-weighted l2 norm and ``|h|_X = sum_i exp(eta i) Q_i |h_i|`` with
    ``eta = controls.eta`` (0 when unset).
    """
    ctl = Controls.coerce(controls)
    ctl.validate()
    if not t_end > 0:
        raise DomainError("t_end must be positive")
    h0 = np.asarray(h0, dtype=float)
    if h0.shape != (matrix.n,):
        raise DomainError(f"h0 must have length {matrix.n}")
    q = matrix.weight
    sizes = np.arange(1, matrix.n + 1)
    moment = float(np.dot(sizes * q, h0))
    scale = float(np.dot(sizes * q, np.abs(h0))) or 1.0
    if abs(moment) > 1e-10 * scale:
        warnings.warn("h0 is not mass-orthogonal; projecting it", RuntimeWarning)
        h0 = h0 - moment / float(np.dot(sizes ** 2, q)) * sizes
    eta = 0.0 if ctl.eta is None else ctl.eta
    weight_x = np.exp(eta * sizes + matrix.log_weight)
    op = closure_matrix(matrix)

    times, hs, nh, nx = [], [], [], []

    def on_snapshot(t, y):
        times.append(t)
        hs.append(y)
        nh.append(math.sqrt(float(np.dot(q, y * y))))
        nx.append(float(np.dot(weight_x, np.abs(y))))

    _drive(lambda _t, y: op @ y, h0, t_end, ctl, on_snapshot, clamp=False)
    return LinearTrajectory(np.array(times), hs, np.array(nh), np.array(nx), eta)


# -- rate fitting ---------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    r2: float
    window: tuple


def fit_decay_rate(series, window=None):
    """Least-squares fit of ``log(value)`` against ``t``.

    ``series`` is a sequence of ``(t, value)`` rows.  The default window
    is ``[t_end / 2, t_end]``; values below ``100 * tiny`` are dropped.

    Returns
    -------
    DecayFit
        ``rate`` is the negated slope.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError("series must be rows of (t, value)")
    t, v = arr[:, 0], arr[:, 1]
    t_end = float(np.max(t))
    lo, hi = (0.5 * t_end, t_end) if window is None else window
    use = (t >= lo) & (t <= hi) & (v > 100 * np.finfo(float).tiny)
    if np.count_nonzero(use) < 8:
        raise InsufficientDataError(
            f"only {np.count_nonzero(use)} usable rows in [{lo}, {hi}]; need 8")
    x, y = t[use], np.log(v[use])
    if np.ptp(y) == 0.0:
        return DecayFit(0.0, float(y[0]), 1.0, (lo, hi))
    res = linregress(x, y)
    return DecayFit(float(-res.slope), float(res.intercept),
                    float(res.rvalue ** 2), (lo, hi))
