"""Linearized operator around an equilibrium and its spectral gap.

Around ``c_i = Q_i (1 + h_i)`` (``Q_i`` meaning ``Q_i z**i`` here) the
Becker-Doring equations linearize to ``dh/dt = L h`` with

    L_i(h) = -sigma_i h_i + sum_j xi_ij h_j,

an arrowhead-plus-tridiagonal operator that is symmetric in the inner
product ``<f, g> = sum_i Q_i f_i g_i``.  Its Dirichlet form is

    E(h, h) = sum_i a_i Q_i Q_1 (h_{i+1} - h_i - h_1)**2,

and the gap ``lambda_0`` on ``{sum_i i Q_i h_i = 0}`` is bracketed by
the quantity

    B = sup_k (sum_{j > k} Q_j) (sum_{j <= k} 1 / (a_j Q_j)).
"""
import concurrent.futures
import json
import math
import os
from dataclasses import dataclass, asdict

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import _bquantity, _series
from .coeffs import Kind, critical_monomer_density
from .equilibrium import equilibrium_profile
from .errors import BudgetError, DomainError, SolverError

#: largest truncation solved with a dense symmetric eigensolver
DENSE_MAX = 2000
#: required decay of the weight at the truncation edge
EDGE_DECAY = 1e-10
SYMMETRY_TOL = 1e-10
DEFAULT_W_GRID = tuple(np.logspace(-3, -1, 16))


@dataclass(frozen=True)
class LinearizedMatrix:
    """Entries of ``L`` on sizes ``1..n``.

    ``xi_sub[m]`` is ``xi_{i,i-1}`` and ``xi_super[m]`` is ``xi_{i-1,i}``
    for ``i = m + 3``; the pair ``(1, 2)`` lives in the first row/column.
    ``log_a`` is kept so the strong form can be evaluated without the
    table.
    """

    n: int
    log_weight: np.ndarray
    sigma: np.ndarray
    xi_first_row: np.ndarray
    xi_first_col: np.ndarray
    xi_sub: np.ndarray
    xi_super: np.ndarray
    log_a: np.ndarray

    @property
    def weight(self):
        return np.exp(self.log_weight)

    def to_sparse(self):
        """The matrix ``M`` with ``(M h)_i = L_i(h)`` as CSR."""
        n = self.n
        rows = [np.arange(n), np.zeros(n - 1, int), np.arange(1, n),
                np.arange(2, n), np.arange(1, n - 1)]
        cols = [np.arange(n), np.arange(1, n), np.zeros(n - 1, int),
                np.arange(1, n - 1), np.arange(2, n)]
        vals = [-self.sigma, self.xi_first_row, self.xi_first_col,
                self.xi_sub, self.xi_super]
        return scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n))

    def to_dense(self):
        return self.to_sparse().toarray()

    def matvec(self, h):
        """``L h`` through the coefficient table (Galerkin form)."""
        h = np.asarray(h, dtype=float)
        if h.shape != (self.n,):
            raise DomainError(f"expected a vector of length {self.n}")
        return self.to_sparse() @ h

    def symmetrized(self):
        """``S = D^(1/2) M D^(-1/2)`` with ``D = diag(Q)`` as CSR.

        Entries are formed from the column/subdiagonal values and half
        log-weight differences, so they stay finite where ``Q`` underflows.
        """
        n, lq = self.n, self.log_weight
        first = self.xi_first_col * np.exp(0.5 * (lq[1:] - lq[0]))
        tri = self.xi_sub * np.exp(0.5 * (lq[2:] - lq[1:-1]))
        rows = [np.arange(n), np.zeros(n - 1, int), np.arange(1, n),
                np.arange(2, n), np.arange(1, n - 1)]
        cols = [np.arange(n), np.arange(1, n), np.zeros(n - 1, int),
                np.arange(1, n - 1), np.arange(2, n)]
        vals = [-self.sigma, first, first, tri, tri]
        return scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n))

    def symmetry_defect(self):
        """Largest relative mismatch of ``Q_i xi_ij`` against ``Q_j xi_ji``.

        Compared in logs over the stored pairs; subnormal entries carry too
        few digits for a relative comparison and are skipped.
        """
        floor = np.finfo(float).tiny * 2.0 ** 53
        lq = self.log_weight
        pairs = [(self.xi_first_row, lq[0], self.xi_first_col, lq[1:]),
                 (self.xi_super, lq[1:-1], self.xi_sub, lq[2:])]
        worst = 0.0
        for upper, lq_up, lower, lq_low in pairs:
            ok = (np.abs(upper) > floor) & (np.abs(lower) > floor)
            if np.any(np.sign(upper[ok]) != np.sign(lower[ok])):
                return np.inf
            diff = (np.log(np.abs(upper[ok])) + (lq_up if np.ndim(lq_up) == 0 else lq_up[ok])
                    - np.log(np.abs(lower[ok])) - lq_low[ok])
            if diff.size:
                worst = max(worst, float(np.max(np.abs(np.expm1(diff)))))
        return worst


def build_linearized(profile, model, n):
    """Assemble ``sigma`` and ``xi`` for sizes ``1..n``.

    ``sigma_1 = 3 a_1 Q_1 + sum_i a_i Q_i`` uses the full certified sum
    stored on the profile, so the first row is exact and not truncated.
    """
    if n < 3:
        raise DomainError("n must be at least 3")
    if n > profile.n:
        raise DomainError(f"profile holds {profile.n} sizes, {n} requested")
    if not np.isfinite(profile.a_weighted):
        raise BudgetError("sum a_i Q_i is not finite", partial=profile.a_weighted)
    i = np.arange(1, n + 1)
    lq = np.asarray(profile.log_scriptQ[:n], dtype=float)
    la = model.log_a(i)
    b = model.b(i)
    a_q1 = np.exp(la + lq[0])  # a_i Q_1

    sigma = a_q1 + b
    sigma[0] = 3.0 * a_q1[0] + profile.a_weighted

    # first row and column; the pair (1, 2) carries the doubled b_2 term
    col = b[1:] - a_q1[1:]
    col[0] = 2.0 * b[1] - a_q1[1]
    row = col * np.exp(lq[1:] - lq[0])

    # interior tridiagonal part, i = 3..n
    sub = b[2:]
    sup = b[2:] * np.exp(lq[2:] - lq[1:-1])
    for arr in (lq, sigma, row, col, sub, sup, la):
        arr.flags.writeable = False
    return LinearizedMatrix(n=int(n), log_weight=lq, sigma=sigma,
                            xi_first_row=row, xi_first_col=col,
                            xi_sub=sub, xi_super=sup, log_a=la)


def apply_linearized(matrix, h):
    """``L h`` from the flux form with the closure ``W_n = 0``.

    ``W_i = a_i Q_i Q_1 (h_i + h_1 - h_{i+1})`` and

        L_1 = -(W_1 + sum_k W_k) / Q_1,   L_i = (W_{i-1} - W_i) / Q_i.

    Coefficients are combined in log space before division by ``Q_i``.
    """
    h = np.asarray(h, dtype=float)
    n = matrix.n
    if h.shape != (n,):
        raise DomainError(f"expected a vector of length {n}, got shape {h.shape}")
    lq, la = matrix.log_weight, matrix.log_a
    bracket = h[:-1] + h[0] - h[1:]          # i = 1..n-1
    out = np.empty(n)
    # sum_k W_k / Q_1 = sum_k a_k Q_k bracket_k
    w_over_q1 = np.exp(la[:-1] + lq[:-1]) * bracket
    out[0] = -(w_over_q1[0] + np.sum(w_over_q1))
    # W_{i-1} / Q_i and W_i / Q_i for i = 2..n
    in_coef = np.exp(la[:-1] + lq[:-1] + lq[0] - lq[1:])
    out_coef = np.exp(la[1:-1] + lq[0])
    out[1:] = in_coef * bracket
    out[1:-1] -= out_coef * bracket[1:]
    return out


def weighted_inner(weight, f, g):
    return float(np.sum(weight * f * g))


def dirichlet_form(profile, model, h):
    """``E(h, h)`` with ``h`` extended by zero beyond its length.

    Terms past ``len(h)`` only see ``h_1`` and use the certified sum
    ``sum_i a_i Q_i`` from the profile.
    """
    h = np.asarray(h, dtype=float)
    m = h.size
    if m > profile.n:
        raise DomainError(f"profile holds {profile.n} sizes, h has {m}")
    i = np.arange(1, m + 1)
    lq = profile.log_scriptQ[:m]
    coef = np.exp(model.log_a(i) + lq + lq[0])
    nxt = np.append(h[1:], 0.0)
    head = float(np.sum(coef * (nxt - h - h[0]) ** 2))
    beyond = profile.a_weighted - float(np.sum(np.exp(model.log_a(i) + lq)))
    return head + max(beyond, 0.0) * math.exp(lq[0]) * h[0] ** 2


# -- the quantity B ---------------------------------------------------------

def _b_of_z(model, z, tol):
    search = _bquantity.SupSearch(model, z, rtol=tol).run()
    if search.divergent:
        return np.inf, search
    if not search.converged:
        raise BudgetError(
            f"sup search for B at z={z} reached k={search.k_budget} undecided",
            partial=math.exp(search.best))
    return math.exp(search.best), search


def quantity_B(profile, model, tol=1e-12):
    """``B = sup_k (sum_{j>k} Q_j)(sum_{j<=k} 1/(a_j Q_j))``.

    The search runs over every ``k`` up to 65536 and then over a grid
    growing by 4% per step, stopping once 64 consecutive points fail to
    raise the running maximum by a relative ``tol``; the maximum found on
    the grid is refined by integer golden-section search.  Each factor is
    summed from increments near ``k`` with a geometric certificate.

    Returns ``inf`` when the product grows without bound.

    Raises
    ------
    BudgetError
        when neither convergence nor divergence is established by
        ``k = 1e12``; ``partial`` holds the largest product seen.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    return _b_of_z(model, profile.z, tol)[0]


def gap_bounds(profile, b, m2, m3):
    """Bracket ``(lambda_lo, lambda_hi)`` for the spectral gap.

    ``lambda_lo = Q_1 / (4 b)`` and ``lambda_hi = 1 / (b / Q_1 - m3 / m2)``
    when ``m3`` is finite and the denominator is positive, else ``inf``.
    ``Q_1 = z`` is the weight carried by the Dirichlet form; at ``z = 1``
    the bracket reads ``1/(4b)``, ``1/(b - m3/m2)``.  ``b = inf`` gives
    ``(0, 0)``: there is no gap.
    """
    if b == np.inf:
        return 0.0, 0.0
    if not b > 0:
        raise DomainError("b must be positive")
    q1 = math.exp(profile.log_scriptQ[0])
    lo = q1 / (4.0 * b)
    if np.isfinite(m3) and b / q1 > m3 / m2:
        return lo, 1.0 / (b / q1 - m3 / m2)
    return lo, np.inf


def lambda1_bracket(profile, b):
    """``[Q_1/(4b), Q_1/b]``, the range of the best Hardy-form constant."""
    if b == np.inf:
        return 0.0, 0.0
    q1 = math.exp(profile.log_scriptQ[0])
    return q1 / (4.0 * b), q1 / b


def lambda_m_estimate(profile, model, delta=0.0):
    """``inf_i sigma_i (1 - 2 sqrt(l)/(1 + l)) - delta`` with ``l = zs/z``.

    The infimum covers ``sigma_1..sigma_n`` of the profile and a lower
    bound for ``a_i z + b_i`` beyond ``n``.
    """
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    zs = critical_monomer_density(model)
    z = profile.z
    if z >= zs:
        raise DomainError("the estimate needs z < zs")
    n = profile.n
    i = np.arange(1, n + 1)
    q1 = math.exp(profile.log_scriptQ[0])
    sig = model.a(i) * q1 + model.b(i)
    sig[0] = 3.0 * model.a(np.array([1]))[0] * q1 + profile.a_weighted
    low = min(float(np.min(sig)), model.sigma_tail_lower(z, n))
    ell = zs / z
    return low * (1.0 - 2.0 * math.sqrt(ell) / (1.0 + ell)) - delta


# -- numerical gap ----------------------------------------------------------

def _constraint_direction(matrix):
    i = np.arange(1, matrix.n + 1)
    d = i * np.exp(0.5 * matrix.log_weight)
    return d / np.linalg.norm(d)


def _check_edge(matrix):
    lq = matrix.log_weight
    if lq[-1] - np.max(lq) <= math.log(EDGE_DECAY):
        return
    raise DomainError(
        f"weight at n={matrix.n} is {math.exp(lq[-1] - np.max(lq)):.3g} of "
        f"its maximum; increase n until it is below {EDGE_DECAY}")


def numerical_gap(matrix, tol=1e-10, return_vector=False):
    """Smallest eigenvalue of ``-L`` on ``{sum_i i Q_i h_i = 0}``.

    The operator is symmetrized with ``sqrt(Q)``; the constraint becomes
    orthogonality to ``d_i = i sqrt(Q_i)``.  Dense for ``n <= 2000``
    (orthonormal complement of ``d``), LOBPCG with ``d`` as a hard
    constraint above.

    With ``return_vector`` the eigenvector ``h`` (in the original, not
    the symmetrized, coordinates) is returned as well.
    """
    _check_edge(matrix)
    asym = matrix.symmetry_defect()
    if asym > SYMMETRY_TOL:
        raise SolverError(f"weighted symmetry violated by {asym:.3g} (relative)",
                          residual=float(asym))
    s = matrix.symmetrized()
    scale = float(np.max(np.abs(matrix.sigma)))
    d = _constraint_direction(matrix)
    neg = (-s).tocsr()
    if matrix.n <= DENSE_MAX:
        basis = scipy.linalg.null_space(d[None, :])
        proj = basis.T @ (neg @ basis)
        vals, vecs = scipy.linalg.eigh(0.5 * (proj + proj.T), subset_by_index=[0, 0])
        lam, u = float(vals[0]), basis @ vecs[:, 0]
    else:
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal((matrix.n, 1))
        precond = scipy.sparse.diags(1.0 / np.abs(neg.diagonal()))
        vals, vecs = scipy.sparse.linalg.lobpcg(
            neg, x0, M=precond, Y=d[:, None], tol=tol, maxiter=20000,
            largest=False)
        lam, u = float(vals[0]), vecs[:, 0]
    u = u / np.linalg.norm(u)
    residual = float(np.linalg.norm(neg @ u - lam * u))
    if residual > max(tol, 1e-8) * max(1.0, scale) * 1e2:
        raise SolverError(f"eigenpair residual {residual:.3g}", residual=residual)
    if return_vector:
        return lam, u * np.exp(-0.5 * matrix.log_weight)
    return lam


def hardy_lambda1(matrix):
    """``min E(h,h) / sum_i Q_i (h_i - i h_1)**2`` on the truncated space.

    With ``g_i = h_i - i h_1`` (so ``g_1 = 0``) the numerator becomes
    ``sum_i a_i Q_i Q_1 (g_{i+1} - g_i)**2``: a tridiagonal generalized
    eigenproblem on ``g_2..g_n`` with zero extension past ``n``.
    """
    lq, la = matrix.log_weight, matrix.log_a
    log_c = la + lq + lq[0]           # log(a_i Q_i Q_1), bonds i = 1..n
    # bond i couples g_i and g_{i+1}; g_1 = g_{n+1} = 0.  Scaling by
    # sqrt(Q) gives a standard symmetric tridiagonal problem on g_2..g_n.
    diag = np.exp(log_c[:-1] - lq[1:]) + np.exp(log_c[1:] - lq[1:])
    off = -np.exp(log_c[1:-1] - 0.5 * (lq[1:-1] + lq[2:]))
    vals = scipy.linalg.eigh_tridiagonal(
        diag, off, select="i", select_range=(0, 0), eigvals_only=True)
    return float(vals[0])


# -- Hardy inequality -------------------------------------------------------

def hardy_bracket(mu_seq, nu_seq, kmax=None):
    """Constant ``B`` of the discrete Hardy inequality and its witness.

    ``B = max_{k <= kmax} (sum_{j >= k} mu_j)(sum_{i <= k} 1 / nu_i)``;
    the tail of ``mu`` past its last entry is bounded geometrically.  The
    witness ``f_i = 1/nu_i`` for ``i <= k`` realizes
    ``sum_i mu_i (sum_{j<=i} f_j)**2 / sum_i nu_i f_i**2 >= B``.

    Returns
    -------
    (b_hardy, witness_k, witness_ratio)
    """
    mu = np.asarray(mu_seq, dtype=float)
    nu = np.asarray(nu_seq, dtype=float)
    if np.any(mu <= 0) or np.any(nu <= 0):
        raise DomainError("Hardy weights must be positive")
    kmax = min(len(mu), len(nu)) if kmax is None else int(kmax)
    if kmax < 1 or kmax > min(len(mu), len(nu)):
        raise DomainError("kmax must lie in [1, len(weights)]")
    log_tail, _ = _series.log_geometric_tail(np.log(mu))
    if log_tail == np.inf:
        raise BudgetError("tail of mu is not certifiably summable",
                          partial=float(np.sum(mu)))
    mu_tail = math.exp(log_tail)
    suffix = np.cumsum(mu[::-1])[::-1] + mu_tail  # sum_{j >= k} mu_j
    prefix = np.cumsum(1.0 / nu)                  # sum_{i <= k} 1/nu_i
    prod = suffix[:kmax] * prefix[:kmax]
    k = int(np.argmax(prod))
    b = float(prod[k])
    # witness: partial sums F_i = prefix_i for i <= k, then frozen at F_k
    f_cum = np.minimum(prefix, prefix[k])
    lhs = float(np.sum(mu[:k] * f_cum[:k] ** 2)) + prefix[k] ** 2 * suffix[k]
    ratio = lhs / prefix[k]
    return b, k + 1, float(ratio)


def hardy_ratio(mu, nu, f):
    """``sum_i mu_i (sum_{j<=i} f_j)**2 / sum_i nu_i f_i**2`` on finite arrays."""
    f = np.asarray(f, dtype=float)
    return float(np.sum(mu * np.cumsum(f) ** 2) / np.sum(nu * f ** 2))


# -- near-critical sweep ----------------------------------------------------

@dataclass
class SweepRow:
    w: float
    z: float
    b: float
    ratio_min: float = math.nan
    ratio_max: float = math.nan
    error: str = ""


def _tail_ratio_range(model, z, w, kmax):
    """Range over ``k`` of ``(sum_{j>=k} Q_j) (w + k**(mu-1)) / Q_k``."""
    ks = np.unique(np.geomspace(1, kmax, 48).astype(np.int64))
    log_z = math.log(z)
    vals = [math.exp(np.logaddexp(0.0, _bquantity._log_tail_factor(
        model, log_z, int(k), _bquantity.LOCAL_RTOL)))
        * (w + k ** (model.mu - 1.0)) for k in ks]
    return min(vals), max(vals)


def _sweep_row(model, zs, w, tol):
    z = zs * math.exp(-w)
    try:
        b, search = _b_of_z(model, z, tol)
    except BudgetError as exc:
        return SweepRow(w, z, exc.partial, error=f"budget: {exc}")
    kmax = max(16, int(10 * w ** (-1.0 / (1.0 - model.mu))))
    rmin, rmax = _tail_ratio_range(model, z, w, kmax)
    return SweepRow(w, z, b, rmin, rmax)


def _workers():
    cap = os.environ.get("BD_THREADS")
    if cap:
        return max(1, int(cap))
    return min(8, os.cpu_count() or 1)


def critical_sweep(model, w_grid=DEFAULT_W_GRID, tol=1e-12):
    """``B`` at ``z = zs exp(-w)`` over ``w_grid`` and the slope of
    ``log B`` against ``log w``.

    Rows keep the order of ``w_grid`` and carry the min/max over ``k`` of
    ``(sum_{j>=k} Q_j)(w + k**(mu-1))/Q_k``.  A row whose search fails
    keeps its partial supremum and an ``error`` marker; it is left out of
    the fit.  Grid points run on up to ``BD_THREADS`` threads.
    """
    if model.kind not in (Kind.PT, Kind.CF):
        raise DomainError("critical sweep needs a parametric model")
    w_grid = [float(w) for w in w_grid]
    if not w_grid or min(w_grid) <= 0:
        raise DomainError("w values must be positive")
    zs = critical_monomer_density(model)
    with concurrent.futures.ThreadPoolExecutor(_workers()) as pool:
        rows = list(pool.map(lambda w: _sweep_row(model, zs, w, tol), w_grid))
    ok = [r for r in rows if not r.error and np.isfinite(r.b)]
    slope = math.nan
    if len(ok) >= 2:
        slope = float(np.polyfit(np.log([r.w for r in ok]),
                                 np.log([r.b for r in ok]), 1)[0])
    return rows, slope


def sweep_csv(rows, lambdas=False):
    """CSV text with header ``w,z,B`` (plus the lambda columns)."""
    head = ["w", "z", "B"]
    if lambdas:
        head += ["lambda_lo", "lambda_hi", "lambda_numeric"]
    lines = [",".join(head)]
    for r in rows:
        vals = [r.w, r.z, r.b]
        if lambdas:
            lo = 1.0 / (4.0 * r.b) if r.b > 0 else math.nan
            vals += [lo, getattr(r, "lambda_hi", math.nan),
                     getattr(r, "lambda_numeric", math.nan)]
        lines.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


# -- report -----------------------------------------------------------------

def _num(x):
    if isinstance(x, float) and not np.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


@dataclass
class SpectralReport:
    """Spectral summary of the linearization at one equilibrium."""

    b_quantity: float
    lambda_lo: float
    lambda_hi: float
    lambda_numeric: float
    lambda_m: float
    hardy_b: float
    lambda1_bracket: tuple
    lambda1_numeric: float = math.nan
    gap_drift: float = math.nan
    sweep_exponent: float = math.nan
    z: float = math.nan
    n: int = 0

    def to_dict(self):
        d = asdict(self)
        d["lambda1_bracket"] = list(d["lambda1_bracket"])
        return {k: ([_num(float(v)) for v in val] if isinstance(val, list)
                    else _num(val)) for k, val in d.items()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, str):
                d[k] = float(v)
        d["lambda1_bracket"] = tuple(float(v) for v in d["lambda1_bracket"])
        return cls(**d)


def spectral_report(model, z, n, delta=0.0, tol=1e-12, drift=True):
    """Everything the spectral module knows about the equilibrium at ``z``.

    With ``drift`` the numerical gap is also computed at ``n // 2`` and
    the difference reported as ``gap_drift``.
    """
    profile = equilibrium_profile(model, z, n, tol=tol)
    matrix = build_linearized(profile, model, n)
    b = quantity_B(profile, model, tol)
    lo, hi = gap_bounds(profile, b, profile.m2, profile.m3)
    lam = numerical_gap(matrix)
    gap_drift = math.nan
    if drift:
        half = build_linearized(profile, model, n // 2)
        try:
            gap_drift = abs(lam - numerical_gap(half))
        except DomainError:
            pass
    lq = profile.log_scriptQ
    hb, _, _ = hardy_bracket(np.exp(lq[1:]), np.exp(model.log_a(np.arange(1, n)) + lq[:-1]))
    zs = critical_monomer_density(model)
    lam_m = lambda_m_estimate(profile, model, delta) if z < zs else -delta
    bracket = lambda1_bracket(profile, b)
    return SpectralReport(
        b_quantity=b, lambda_lo=lo, lambda_hi=hi, lambda_numeric=lam,
        lambda_m=lam_m, hardy_b=hb, lambda1_bracket=bracket,
        lambda1_numeric=hardy_lambda1(matrix), gap_drift=gap_drift,
        z=float(z), n=int(n))
