"""One-sided two-sample tests used to rank features.

Both tests return the p-value together with its natural log, because
strongly discriminative features underflow to p = 0 at panel scale and
must still be ordered.
"""

from __future__ import annotations

import math
from itertools import combinations
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln, logsumexp, log_ndtr
from scipy.stats import rankdata

from .errors import StatTestError

EXACT_MAX_TOTAL = 12


class TestResult(NamedTuple):
    p: float
    log_p: float


# --------------------------------------------------------------------------
# Wilcoxon rank-sum


def _exact_lower_tail(doubled_ranks: np.ndarray, n1: int, observed: int) -> float:
    N = doubled_ranks.size
    combos = np.array(list(combinations(range(N), n1)), dtype=np.int64)
    sums = doubled_ranks[combos].sum(axis=1)
    return np.count_nonzero(sums <= observed) / combos.shape[0]


def wilcoxon_ranksum(x, y, method: str = "auto") -> TestResult:
    """Rank-sum test that ``x`` is stochastically smaller than ``y``.

    Exact by enumerating every assignment of the pooled (average) ranks when
    ``len(x) + len(y) <= 12``; otherwise the normal approximation with tie
    corrected variance and a continuity correction.  ``method`` may force
    ``"exact"`` or ``"normal"``.
    """
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n1, n2 = x.size, y.size
    if n1 < 1 or n2 < 1:
        raise StatTestError("both samples must be non-empty")
    N = n1 + n2
    ranks = rankdata(np.concatenate([x, y]), method="average")
    # doubled average ranks are integers, so comparisons below are exact
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    w2 = int(doubled[:n1].sum())
    if method == "exact" or (method == "auto" and N <= EXACT_MAX_TOTAL):
        p = _exact_lower_tail(doubled, n1, w2)
        return TestResult(p, math.log(p))
    _, counts = np.unique(ranks, return_counts=True)
    ties = float(np.sum(counts.astype(np.float64) ** 3 - counts))
    var = n1 * n2 / 12.0 * ((N + 1) - ties / (N * (N - 1)))
    if var <= 0:
        return TestResult(1.0, 0.0)
    z = (0.5 * w2 - n1 * (N + 1) / 2.0 + 0.5) / math.sqrt(var)
    log_p = float(log_ndtr(z))
    return TestResult(math.exp(log_p), log_p)


def wilcoxon_ranksum_p(x, y, method: str = "auto") -> float:
    return wilcoxon_ranksum(x, y, method).p


# --------------------------------------------------------------------------
# Fisher's exact test
#
# Terms are evaluated with Loader's saddle-point expansion of the binomial
# density, which avoids the cancellation of plain log-gamma differences
# when the counts reach 1e5 and beyond.

_SFERR_SMALL = None


def _stirlerr(n: float) -> float:
    """log(n!) - log(sqrt(2 pi n) (n/e)^n)."""
    global _SFERR_SMALL
    if n <= 15.0:
        if _SFERR_SMALL is None:
            _SFERR_SMALL = {k: float(gammaln(k + 1.0) - (k + 0.5) * math.log(k) + k
                                     - 0.5 * math.log(2 * math.pi)) for k in range(1, 16)}
        if n == int(n) and n >= 1:
            return _SFERR_SMALL[int(n)]
        return float(gammaln(n + 1.0) - (n + 0.5) * math.log(n) + n - 0.5 * math.log(2 * math.pi))
    nn = n * n
    s0, s1, s2, s3, s4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188
    if n > 500:
        return (s0 - s1 / nn) / n
    if n > 80:
        return (s0 - (s1 - s2 / nn) / nn) / n
    if n > 35:
        return (s0 - (s1 - (s2 - s3 / nn) / nn) / nn) / n
    return (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / n


def _bd0(x: float, np_: float) -> float:
    """Deviance term x log(x/np) + np - x, stable near x == np."""
    if abs(x - np_) < 0.1 * (x + np_):
        v = (x - np_) / (x + np_)
        s = (x - np_) * v
        ej = 2.0 * x * v
        v2 = v * v
        for j in range(1, 1000):
            ej *= v2
            s1 = s + ej / (2 * j + 1)
            if s1 == s:
                return s1
            s = s1
        return s
    return x * math.log(x / np_) + np_ - x


def _log_dbinom(x: float, n: float, p: float) -> float:
    q = 1.0 - p
    if x == 0:
        return n * math.log1p(-p) if n > 0 else 0.0
    if x == n:
        return n * math.log(p)
    lc = _stirlerr(n) - _stirlerr(x) - _stirlerr(n - x) - _bd0(x, n * p) - _bd0(n - x, n * q)
    lf = math.log(2 * math.pi) + math.log(x) + math.log1p(-x / n)
    return lc - 0.5 * lf


def log_hypergeom_pmf(k: int, good: int, bad: int, draws: int) -> float:
    """log P(X = k), X ~ draws taken without replacement from good + bad items."""
    if k < max(0, draws - bad) or k > min(draws, good):
        return -math.inf
    total = good + bad
    if draws == 0 or draws == total:
        return 0.0
    p = draws / total
    return (_log_dbinom(k, good, p) + _log_dbinom(draws - k, bad, p)
            - _log_dbinom(draws, total, p))


# tables with at most this many pairs are summed exactly
EXACT_FISHER_MAX = 1000


def fisher_exact(table) -> TestResult:
    """One-sided Fisher test on a 2x2 table ``[[a, b], [c, d]]``.

    Rows are (H_ss, H_ds) pairs and columns are (difference 0, difference 1).
    The alternative is that H_ss pairs have fewer unit differences, i.e. an
    unusually large ``a``: the p-value is P(X >= a) under the hypergeometric
    null with the table's margins.
    """
    try:
        (a, b), (c, d) = table
        cells = [int(v) for v in (a, b, c, d)]
        valid = all(v >= 0 and v == w for v, w in zip(cells, (a, b, c, d)))
    except (TypeError, ValueError):
        raise StatTestError(f"expected a 2x2 table of counts, got {table!r}") from None
    if not valid:
        raise StatTestError("table cells must be non-negative integers")
    a, b, c, d = cells
    row0, col0 = a + b, a + c
    total = a + b + c + d
    if min(row0, c + d, col0, b + d) == 0:
        return TestResult(1.0, 0.0)
    good, bad = col0, total - col0
    hi = min(row0, good)
    if total <= EXACT_FISHER_MAX:
        # exact integer tail; int / int division rounds correctly
        num = sum(math.comb(good, k) * math.comb(bad, row0 - k) for k in range(a, hi + 1))
        den = math.comb(total, row0)
        return TestResult(min(num / den, 1.0), min(math.log(num) - math.log(den), 0.0))
    anchor = log_hypergeom_pmf(a, good, bad, row0)
    if hi > a:
        k = np.arange(a, hi, dtype=np.float64)
        # pmf(k+1) / pmf(k)
        step = (np.log(good - k) + np.log(row0 - k)
                - np.log(k + 1.0) - np.log(bad - row0 + k + 1.0))
        terms = anchor + np.concatenate([[0.0], np.cumsum(step)])
        log_p = float(logsumexp(terms))
    else:
        log_p = anchor
    log_p = min(log_p, 0.0)
    return TestResult(math.exp(log_p), log_p)


def fisher_exact_p(table) -> float:
    return fisher_exact(table).p
