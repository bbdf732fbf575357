"""Series summation with a geometric tail certificate.

Summands are handled as logarithms so that terms spanning hundreds of
orders of magnitude can be produced without overflow.  A partial sum is
accepted once the largest ratio of consecutive terms over the trailing
window is some ``r < 1`` and the geometric bound ``t_N r / (1 - r)`` on
everything beyond the last term ``t_N`` is below the tolerance.
"""
from dataclasses import dataclass

import numpy as np

from .errors import IndeterminateError

#: number of trailing terms whose consecutive ratios feed the tail bound
RATIO_WINDOW = 256
#: partial sums above this with non-decreasing summands are declared divergent
DIVERGENCE_THRESHOLD = 1e12
DIVERGENCE_RUN = 100
CHUNK = 4096
MAX_TERMS = 10**7


@dataclass(frozen=True)
class SeriesResult:
    value: float
    tail_bound: float
    n_terms: int


def log_geometric_tail(log_terms, window=RATIO_WINDOW):
    """Log of a certified bound on the sum of all terms after the last one.

    Returns ``(log_bound, ratio)``; ``log_bound`` is ``inf`` when the
    measured ratio supremum over the trailing window is not below one and
    ``-inf`` when the trailing terms are all exact zeros.
    """
    tail = np.asarray(log_terms[-(window + 1):], dtype=float)
    if tail.size == 0 or np.all(np.isneginf(tail)):
        return -np.inf, 0.0
    if tail.size < 2 or np.any(np.isneginf(tail)):
        return np.inf, np.inf
    log_r = float(np.max(np.diff(tail)))
    if log_r >= 0.0:
        return np.inf, float(np.exp(min(log_r, 700.0)))
    return float(tail[-1] + log_r - np.log(-np.expm1(log_r))), float(np.exp(log_r))


def geometric_tail(log_terms, window=RATIO_WINDOW):
    """Linear-scale version of :func:`log_geometric_tail`."""
    log_bound, r = log_geometric_tail(log_terms, window)
    return float(np.exp(log_bound)), r


def is_divergent(terms, partial, threshold=DIVERGENCE_THRESHOLD,
                 run=DIVERGENCE_RUN):
    if not partial > threshold or len(terms) < run:
        return False
    return bool(np.all(np.diff(np.asarray(terms[-run:])) >= 0.0))


def sum_log_series(next_log_terms, tol, *, chunk=CHUNK, max_terms=MAX_TERMS,
                   window=RATIO_WINDOW):
    """Sum a positive series from a generator of log-summands.

    Parameters
    ----------
    next_log_terms : callable
        ``next_log_terms(m)`` returns the logarithms of the next ``m``
        summands (``-inf`` for exact zeros).
    tol : float
        Absolute bound required on the neglected tail.

    Returns
    -------
    SeriesResult
        ``value`` is ``inf`` when the series is certifiably divergent.

    Raises
    ------
    IndeterminateError
        When ``max_terms`` summands neither certify nor diverge.
    """
    keep = max(window, DIVERGENCE_RUN) + 1
    recent = np.empty(0)
    total = 0.0
    count = 0
    while count < max_terms:
        new = np.asarray(next_log_terms(chunk), dtype=float)
        count += new.size
        total += float(np.sum(np.exp(new)))
        recent = np.concatenate([recent, new])[-keep:]
        bound, _ = geometric_tail(recent, window)
        if bound <= tol:
            return SeriesResult(total, bound, count)
        if is_divergent(np.exp(recent), total):
            return SeriesResult(np.inf, np.inf, count)
    raise IndeterminateError(
        f"series not certified after {count} terms (partial sum {total:.6g})",
        partial=total)
