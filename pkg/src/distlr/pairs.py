"""Same-source / different-source pair enumeration and trace distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DimensionError,
    MemoryBudgetError,
    PairingError,
    StalePairSetError,
    UndefinedCorrelationError,
)
from .traces import TraceMatrix

SCALAR_KINDS = ("euclidean", "pearson", "spearman")
DISTANCE_KINDS = SCALAR_KINDS + ("vectorial",)

DEFAULT_BATCH = 16384
DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes


@dataclass(frozen=True, eq=False)
class PairSet:
    """All unordered trace pairs ``i < j`` of one matrix, in row-major order.

    ``same[k]`` is True for a same-source (H_ss) pair.
    """

    i: np.ndarray
    j: np.ndarray
    same: np.ndarray
    source_fingerprint: str

    @property
    def n_pairs(self) -> int:
        return int(self.i.size)

    @property
    def n_ss(self) -> int:
        return int(np.count_nonzero(self.same))

    @property
    def n_ds(self) -> int:
        return self.n_pairs - self.n_ss

    def labels(self) -> np.ndarray:
        """1 for H_ss, 0 for H_ds."""
        return self.same.astype(np.float64)

    def subset(self, mask: np.ndarray) -> "PairSet":
        return PairSet(self.i[mask], self.j[mask], self.same[mask], self.source_fingerprint)


def enumerate_pairs(m: TraceMatrix) -> PairSet:
    N = m.n_traces
    if N < 2:
        raise PairingError(f"need at least 2 traces to form pairs, got {N}")
    i, j = np.triu_indices(N, k=1)
    codes = m.subject_codes()
    return PairSet(i.astype(np.int64), j.astype(np.int64), codes[i] == codes[j], m.fingerprint())


# --------------------------------------------------------------------------
# Single-pair distances


def _pair(x, y, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DimensionError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise DimensionError(f"need vectors of length >= {min_len}, got {x.size}")
    return x, y


def euclidean(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sqrt(np.sum((x - y) ** 2)))


def pearson_distance(x, y) -> float:
    """``1 - r`` with r the Pearson correlation; lies in [0, 2]."""
    x, y = _pair(x, y, min_len=2)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.sum(xc * xc)
    syy = np.sum(yc * yc)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    r = np.sum(xc * yc) / np.sqrt(sxx * syy)
    return float(np.clip(1.0 - r, 0.0, 2.0))


def rank_transform(x) -> np.ndarray:
    """Ranks 1..n, ties sharing the average of their positions."""
    return rankdata(np.asarray(x, dtype=np.float64), method="average")


def spearman_distance(x, y) -> float:
    x, y = _pair(x, y, min_len=2)
    return pearson_distance(rank_transform(x), rank_transform(y))


def vectorial_distance(x, y) -> np.ndarray:
    """Per-feature absolute differences."""
    x, y = _pair(x, y)
    return np.abs(x - y)


# --------------------------------------------------------------------------
# Batched distances over a pair set


def check_pairs(m: TraceMatrix, p: PairSet) -> None:
    if p.source_fingerprint != m.fingerprint():
        raise StalePairSetError("pair set was not built from this matrix")


def _columns(m: TraceMatrix, features: Sequence[int] | None) -> np.ndarray:
    if features is None:
        return m.X
    return m.X[:, np.asarray(features, dtype=np.int64)]


def _standardized_rows(X: np.ndarray, rows: np.ndarray, m: TraceMatrix) -> np.ndarray:
    """Centered, unit-norm rows; correlation becomes a dot product."""
    if X.shape[1] < 2:
        raise UndefinedCorrelationError("correlation distance needs at least 2 features")
    Z = X - X.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(Z * Z, axis=1))
    bad = np.flatnonzero(norms[rows] == 0)
    if bad.size:
        t = int(rows[bad[0]])
        raise UndefinedCorrelationError(
            f"trace {t} (subject {m.subject_ids[t]!r}, replicate {m.replicate_ids[t]!r}) "
            "is constant over the selected features")
    norms[norms == 0] = 1.0
    return Z / norms[:, None]


def scalar_distances(m: TraceMatrix, p: PairSet, kind: str = "spearman",
                     features: Sequence[int] | None = None,
                     batch_size: int = DEFAULT_BATCH) -> np.ndarray:
    """One scalar distance per pair, in pair order."""
    check_pairs(m, p)
    if kind not in SCALAR_KINDS:
        raise ValueError(f"unknown scalar distance {kind!r}")
    X = _columns(m, features)
    out = np.empty(p.n_pairs)
    if kind == "euclidean":
        for s in range(0, p.n_pairs, batch_size):
            i, j = p.i[s:s + batch_size], p.j[s:s + batch_size]
            diff = X[i] - X[j]
            out[s:s + batch_size] = np.sqrt(np.sum(diff * diff, axis=1))
        return out
    used = np.union1d(p.i, p.j)
    R = rankdata(X, method="average", axis=1) if kind == "spearman" else X
    Z = _standardized_rows(R, used, m)
    for s in range(0, p.n_pairs, batch_size):
        i, j = p.i[s:s + batch_size], p.j[s:s + batch_size]
        out[s:s + batch_size] = 1.0 - np.einsum("ij,ij->i", Z[i], Z[j])
    return np.clip(out, 0.0, 2.0, out=out)


def vectorial_batches(m: TraceMatrix, p: PairSet, features: Sequence[int] | None = None,
                      batch_size: int = DEFAULT_BATCH) -> Iterator[tuple[slice, np.ndarray]]:
    """Yield ``(pair_slice, |x_i - x_j|)`` blocks without materializing all pairs."""
    check_pairs(m, p)
    X = _columns(m, features)
    for s in range(0, p.n_pairs, batch_size):
        sl = slice(s, min(s + batch_size, p.n_pairs))
        yield sl, np.abs(X[p.i[sl]] - X[p.j[sl]])


def compute_distances(m: TraceMatrix, p: PairSet, kind: str,
                      features: Sequence[int] | None = None,
                      memory_budget: int = DEFAULT_MEMORY_BUDGET) -> np.ndarray:
    """Distances for every pair of ``p``: shape ``(n_pairs,)`` for scalar kinds,
    ``(n_pairs, n)`` for the vectorial kind.

    Materializing vectorial distances is refused above ``memory_budget`` bytes;
    use :func:`vectorial_batches` to stream instead.
    """
    if kind not in DISTANCE_KINDS:
        raise ValueError(f"unknown distance kind {kind!r}")
    if kind != "vectorial":
        return scalar_distances(m, p, kind, features)
    check_pairs(m, p)
    width = m.n_features if features is None else len(features)
    need = p.n_pairs * width * 8
    if need > memory_budget:
        raise MemoryBudgetError(
            f"vectorial distances need {need / 2**20:.0f} MiB, budget is "
            f"{memory_budget / 2**20:.0f} MiB; stream with vectorial_batches()")
    out = np.empty((p.n_pairs, width))
    for sl, block in vectorial_batches(m, p, features):
        out[sl] = block
    return out
