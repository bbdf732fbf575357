"""Evaluation of the tail/head product whose supremum is the quantity ``B``.

For an equilibrium ``Q_j = Q_j z**j`` (written ``q_j`` here) and rates
``a_j`` the product at ``k`` is

    P(k) = (sum_{j > k} q_j) * (sum_{j <= k} 1 / (a_j q_j)).

Both factors are dominated by indices near ``k`` when ``q`` decays, so
``log P(k)`` is computed from the increments ``log q_{j+1} - log q_j``
around ``k`` only.  Small ``k`` are handled in bulk with prefix sums.
"""
import math

import numpy as np

from .coeffs import LogProfileStream
from .errors import BudgetError

PATIENCE = 64
DENSE_LIMIT = 1 << 16
GRID_GROWTH = 1.04
K_BUDGET = 10**12
#: log-log slope of the product over the final patience window above which
#: a search that reached the budget is reported as divergent
DIVERGENT_SLOPE = 0.05
#: relative accuracy asked of each factor of the local product
LOCAL_RTOL = 1e-14
_CHUNK = 8192
_MAX_LOCAL = 1 << 25


def _increments(model, log_z, i):
    return model.log_db_step(i) + log_z


def _log_sum_certified(log_terms_chunks, rtol):
    """Log of a positive sum fed chunk by chunk, stopped on a geometric bound.

    ``log_terms_chunks`` yields ``(log_terms, exhausted)``.  The ratio bound
    uses the largest consecutive ratio over the most recent chunk.
    """
    acc = -np.inf
    total = 0
    for log_terms, exhausted in log_terms_chunks:
        total += log_terms.size
        acc = np.logaddexp(acc, np.logaddexp.reduce(log_terms))
        if exhausted:
            return float(acc), 0.0
        if log_terms.size > 1:
            log_r = float(np.max(np.diff(log_terms)))
            if log_r < 0:
                log_tail = log_terms[-1] + log_r - math.log(-math.expm1(log_r))
                if log_tail - acc < math.log(rtol):
                    return float(np.logaddexp(acc, log_tail)), float(np.exp(log_tail - acc))
        if total > _MAX_LOCAL:
            raise BudgetError("local sum for B did not certify", partial=float(acc))
    raise AssertionError("chunk generator ended without exhaustion flag")


def _log_tail_factor(model, log_z, k, rtol):
    """``log sum_{j>k} q_j / q_k``."""
    def chunks():
        start, offset, size = k, 0.0, _CHUNK
        while True:
            d = _increments(model, log_z, np.arange(start, start + size))
            if np.all(d >= 0):
                # summands no longer decrease: the tail is infinite
                yield np.array([np.inf]), True
                return
            c = offset + np.cumsum(d)
            yield c, False
            offset, start = c[-1], start + size
            size = min(2 * size, 1 << 20)
    return _log_sum_certified(chunks(), rtol)[0]


def _log_head_factor(model, log_z, k, rtol):
    """``log sum_{j<=k} q_k / (a_j q_j)``."""
    def chunks():
        top, offset, size = k, 0.0, _CHUNK
        # term at j=k
        yield np.array([-float(model.log_a(np.array([k]))[0])]), k == 1
        while top > 1:
            lo = max(1, top - size)
            j = np.arange(top - 1, lo - 1, -1)
            # log(q_k / q_j) = offset + sum_{i=j}^{top-1} (log q_{i+1} - log q_i)
            c = offset + np.cumsum(_increments(model, log_z, j))
            yield c - model.log_a(j), lo == 1
            offset, top = c[-1], lo
            size = min(2 * size, 1 << 20)
    return _log_sum_certified(chunks(), rtol)[0]


def log_product(model, z, k, rtol=LOCAL_RTOL):
    """``log P(k)`` from increments near ``k``."""
    log_z = math.log(z)
    return (_log_tail_factor(model, log_z, int(k), rtol)
            + _log_head_factor(model, log_z, int(k), rtol))


def dense_log_products(model, z, kmax, tol=1e-300):
    """``log P(k)`` for ``k = 1..kmax`` via prefix/suffix log-sums."""
    stream = LogProfileStream(model, z)
    idx, lq = stream.take(kmax + _CHUNK)
    # extend until the tail beyond the array is negligible relative to q_kmax
    while lq[-1] - lq[kmax - 1] > math.log(LOCAL_RTOL) - 40.0:
        i_new, lq_new = stream.take(idx.size)
        d = np.diff(lq_new)
        idx = np.concatenate([idx, i_new])
        lq = np.concatenate([lq, lq_new])
        if idx.size > 64 * (kmax + _CHUNK) or (d.size and np.max(d) >= 0):
            return None
    rev = np.logaddexp.accumulate(lq[::-1])[::-1]
    log_tail = rev[1:kmax + 1]
    log_head = np.logaddexp.accumulate(-lq[:kmax] - model.log_a(idx[:kmax]))
    return log_tail + log_head


class SupSearch:
    """Patience-driven supremum search of ``P(k)`` over ``k >= 1``."""

    def __init__(self, model, z, patience=PATIENCE, rtol=1e-12,
                 k_budget=K_BUDGET):
        self.model, self.z = model, z
        self.patience, self.rtol, self.k_budget = patience, rtol, k_budget
        self.best = -np.inf
        self.best_k = None
        self.evaluated = []

    def _offer(self, k, lp):
        self.evaluated.append((int(k), float(lp)))
        if lp > self.best + math.log1p(self.rtol):
            self.best, self.best_k = float(lp), int(k)
            return True
        if lp > self.best:
            self.best, self.best_k = float(lp), int(k)
        return False

    def run(self):
        dense_n = DENSE_LIMIT
        lp = dense_log_products(self.model, self.z, dense_n)
        if lp is None:
            # summands stop decreasing: evaluate on the sparse grid only
            dense_n, lp = 0, np.empty(0)
        stale = 0
        for k, v in enumerate(lp, start=1):
            stale = 0 if self._offer(k, v) else stale + 1
            if stale >= self.patience:
                return self._finish(converged=True)
        k = dense_n
        grid = []
        while True:
            k = max(k + 1, int(k * GRID_GROWTH))
            if k > self.k_budget:
                return self._finish(converged=False)
            v = log_product(self.model, self.z, k)
            if v == np.inf:
                self._offer(k, v)
                return self._finish(converged=True)
            grid.append(k)
            stale = 0 if self._offer(k, v) else stale + 1
            if stale >= self.patience:
                self._refine(grid)
                return self._finish(converged=True)

    def _refine(self, grid):
        """Integer golden-section search around the best grid point."""
        pos = grid.index(self.best_k) if self.best_k in grid else None
        if pos is None:
            return
        lo = grid[pos - 1] if pos > 0 else max(1, grid[0] - 1)
        hi = grid[pos + 1]
        f = lambda k: log_product(self.model, self.z, k)
        invphi = (math.sqrt(5) - 1) / 2
        c = int(round(hi - invphi * (hi - lo)))
        d = int(round(lo + invphi * (hi - lo)))
        fc, fd = f(c), f(d)
        self._offer(c, fc)
        self._offer(d, fd)
        while hi - lo > 3:
            if fc > fd:
                hi, d, fd = d, c, fc
                c = int(round(hi - invphi * (hi - lo)))
                fc = f(c)
                self._offer(c, fc)
            else:
                lo, c, fc = c, d, fd
                d = int(round(lo + invphi * (hi - lo)))
                fd = f(d)
                self._offer(d, fd)
        for k in range(lo, hi + 1):
            self._offer(k, f(k))

    def _finish(self, converged):
        self.converged = converged
        self.divergent = self.best == np.inf
        if not converged:
            tail = np.array(self.evaluated[-self.patience:], dtype=float)
            slope = np.polyfit(np.log(tail[:, 0]), tail[:, 1], 1)[0]
            self.divergent = bool(slope > DIVERGENT_SLOPE)
            self.slope = float(slope)
        return self
