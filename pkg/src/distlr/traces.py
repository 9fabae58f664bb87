"""Trace panels: loading, validation, preprocessing and calibration/test split.

A panel is stored column-wise (one feature matrix plus per-trace metadata
arrays) because every downstream step works on whole matrices.  ``Trace``
is a row view for callers that want one item at a time.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DiagnosticError,
    DuplicateTraceError,
    ModeError,
    NormalizationError,
    ParseError,
    SchemaError,
    SplitError,
)

MODES = ("raw", "normalized_log", "dichotomized")
GENDERS = ("M", "F", "unknown")

_GENDER_ALIASES = {
    "m": "M", "male": "M", "man": "M",
    "f": "F", "female": "F", "woman": "F",
    "": "unknown", "unknown": "unknown", "u": "unknown", "na": "unknown",
}


@dataclass(frozen=True)
class Trace:
    subject_id: str
    replicate_id: str
    gender: str
    age: int | None
    features: np.ndarray


@dataclass(frozen=True, eq=False)
class TraceMatrix:
    """An immutable panel of traces sharing one feature space.

    ``X`` has one row per trace.  Metadata tuples are aligned with its rows.
    """

    X: np.ndarray
    subject_ids: tuple[str, ...]
    replicate_ids: tuple[str, ...]
    genders: tuple[str, ...] = ()
    ages: tuple[int | None, ...] = ()
    feature_names: tuple[str, ...] | None = None
    mode: str = "raw"
    comments: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise SchemaError(f"feature matrix must be 2-D, got shape {X.shape}")
        N, n = X.shape
        if n < 1:
            raise SchemaError("panel needs at least one feature")
        if self.mode not in MODES:
            raise ModeError(f"unknown mode {self.mode!r}")
        if len(self.subject_ids) != N or len(self.replicate_ids) != N:
            raise SchemaError("subject/replicate id count does not match row count")
        genders = tuple(self.genders) or ("unknown",) * N
        ages = tuple(self.ages) or (None,) * N
        if len(genders) != N or len(ages) != N:
            raise SchemaError("gender/age count does not match row count")
        bad = [g for g in genders if g not in GENDERS]
        if bad:
            raise SchemaError(f"invalid gender value {bad[0]!r}")
        if self.feature_names is not None and len(self.feature_names) != n:
            raise SchemaError("feature_names length does not match feature count")
        if not np.all(np.isfinite(X)):
            raise ParseError("non-finite feature value")
        if np.any(X < 0):
            raise ParseError("negative feature value")
        if self.mode == "dichotomized" and not np.all((X == 0) | (X == 1)):
            raise ModeError("dichotomized matrix must contain only 0/1")
        if self.mode == "normalized_log":
            sums = X.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise ModeError("normalized_log rows must sum to 1")
        seen = set()
        for key in zip(self.subject_ids, self.replicate_ids):
            if key in seen:
                raise DuplicateTraceError(f"duplicate trace (subject, replicate) = {key}")
            seen.add(key)
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "replicate_ids", tuple(str(r) for r in self.replicate_ids))
        object.__setattr__(self, "genders", genders)
        object.__setattr__(self, "ages", ages)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_traces(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n_traces

    def trace(self, i: int) -> Trace:
        return Trace(self.subject_ids[i], self.replicate_ids[i], self.genders[i],
                     self.ages[i], self.X[i])

    def __iter__(self) -> Iterator[Trace]:
        for i in range(self.n_traces):
            yield self.trace(i)

    def subjects(self) -> list[str]:
        """Distinct subject ids in sorted order."""
        return sorted(set(self.subject_ids))

    def subject_codes(self) -> np.ndarray:
        """Integer code per trace; equal codes mean same subject."""
        lookup = {s: k for k, s in enumerate(self.subjects())}
        return np.fromiter((lookup[s] for s in self.subject_ids), dtype=np.int64,
                           count=self.n_traces)

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"f_{k + 1}" for k in range(self.n_features))

    def take(self, rows: Sequence[int] | np.ndarray) -> "TraceMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return TraceMatrix(
            X=self.X[rows],
            subject_ids=tuple(self.subject_ids[i] for i in rows),
            replicate_ids=tuple(self.replicate_ids[i] for i in rows),
            genders=tuple(self.genders[i] for i in rows),
            ages=tuple(self.ages[i] for i in rows),
            feature_names=self.feature_names,
            mode=self.mode,
            comments=self.comments,
        )

    def with_subjects(self, subjects) -> "TraceMatrix":
        keep = set(subjects)
        return self.take([i for i, s in enumerate(self.subject_ids) if s in keep])

    def select_features(self, features: Sequence[int]) -> "TraceMatrix":
        """Column subset.  Rows are *not* renormalized, so the mode becomes raw
        for normalized_log input (the unit-sum invariant no longer holds)."""
        features = np.asarray(features, dtype=np.int64)
        names = None if self.feature_names is None else tuple(self.feature_names[k] for k in features)
        mode = "raw" if self.mode == "normalized_log" else self.mode
        return TraceMatrix(self.X[:, features], self.subject_ids, self.replicate_ids,
                           self.genders, self.ages, names, mode)

    def fingerprint(self) -> str:
        """64-bit hex digest of (N, n, mode, content)."""
        h = hashlib.blake2b(digest_size=8)
        h.update(f"{self.n_traces}|{self.n_features}|{self.mode}|".encode())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update("\x1f".join(self.subject_ids).encode())
        h.update(b"\x1e")
        h.update("\x1f".join(self.replicate_ids).encode())
        return h.hexdigest()


# --------------------------------------------------------------------------
# CSV I/O


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`ingest_csv`.

    ``feature_columns=None`` takes every column not claimed by metadata.
    """

    subject: str = "subject_id"
    replicate: str = "replicate_id"
    gender: str | None = "gender"
    age: str | None = "age"
    feature_columns: tuple[str, ...] | None = None


def _parse_gender(value: str, row: int) -> str:
    g = _GENDER_ALIASES.get(value.strip().lower())
    if g is None:
        raise ParseError(f"invalid gender {value!r}", row)
    return g


def _parse_age(value: str, row: int) -> int | None:
    value = value.strip()
    if value == "":
        return None
    try:
        age = int(value)
    except ValueError:
        raise ParseError(f"invalid age {value!r}", row) from None
    if age < 0:
        raise ParseError(f"negative age {age}", row)
    return age


def read_csv_text(text: str, schema: CsvSchema | None = None) -> TraceMatrix:
    schema = schema or CsvSchema()
    lines = text.splitlines()
    comments = []
    mode = "raw"
    body = []
    for line in lines:
        if line.startswith("#"):
            comment = line[1:].strip()
            if comment.startswith("mode:"):
                mode = comment.split(":", 1)[1].strip()
                if mode not in MODES:
                    raise SchemaError(f"unknown mode {mode!r} in header comment")
            else:
                comments.append(comment)
        elif line.strip():
            body.append(line)
    if not body:
        raise SchemaError("empty file: no header row")
    reader = csv.reader(io.StringIO("\n".join(body)))
    header = [h.strip() for h in next(reader)]
    for required in (schema.subject, schema.replicate):
        if required not in header:
            raise SchemaError(f"missing required column {required!r}")
    col = {name: k for k, name in enumerate(header)}
    gender_col = col.get(schema.gender) if schema.gender else None
    age_col = col.get(schema.age) if schema.age else None
    if schema.feature_columns is not None:
        missing = [c for c in schema.feature_columns if c not in col]
        if missing:
            raise SchemaError(f"missing feature columns {missing}")
        feature_names = list(schema.feature_columns)
    else:
        claimed = {schema.subject, schema.replicate, schema.gender, schema.age}
        feature_names = [h for h in header if h not in claimed]
    if not feature_names:
        raise SchemaError("no feature columns")
    feature_idx = [col[c] for c in feature_names]

    subjects, replicates, genders, ages, rows = [], [], [], [], []
    seen = set()
    for r, record in enumerate(reader, start=1):
        if len(record) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(record)}", r)
        sid = record[col[schema.subject]].strip()
        rid = record[col[schema.replicate]].strip()
        if (sid, rid) in seen:
            raise DuplicateTraceError(f"row {r}: duplicate trace (subject, replicate) = {(sid, rid)}")
        seen.add((sid, rid))
        values = []
        for k in feature_idx:
            try:
                v = float(record[k])
            except ValueError:
                raise ParseError(f"non-numeric value {record[k]!r} in column {header[k]!r}", r) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value in column {header[k]!r}", r)
            if v < 0:
                raise ParseError(f"negative value {record[k]} in column {header[k]!r}", r)
            values.append(v)
        subjects.append(sid)
        replicates.append(rid)
        genders.append(_parse_gender(record[gender_col], r) if gender_col is not None else "unknown")
        ages.append(_parse_age(record[age_col], r) if age_col is not None else None)
        rows.append(values)
    if not rows:
        raise SchemaError("file has a header but no traces")
    return TraceMatrix(np.array(rows, dtype=np.float64), tuple(subjects), tuple(replicates),
                       tuple(genders), tuple(ages), tuple(feature_names), mode, tuple(comments))


def ingest_csv(path: str | os.PathLike, schema: CsvSchema | None = None) -> TraceMatrix:
    """Load a trace panel from CSV.

    Lines starting with ``#`` are comments; ``#mode: <mode>`` restores the
    preprocessing state written by :func:`write_csv` (default ``raw``).
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such file: {path}")
    return read_csv_text(path.read_text(encoding="utf-8"), schema)


def to_csv_text(m: TraceMatrix, extra_comments: Sequence[str] = ()) -> str:
    out = io.StringIO()
    out.write(f"#mode: {m.mode}\n")
    for c in (*m.comments, *extra_comments):
        out.write(f"#{c}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["subject_id", "replicate_id", "gender", "age", *m.names()])
    for i in range(m.n_traces):
        age = "" if m.ages[i] is None else str(m.ages[i])
        # repr() is the shortest string that round-trips a float exactly.
        writer.writerow([m.subject_ids[i], m.replicate_ids[i], m.genders[i], age,
                         *(repr(float(v)) for v in m.X[i])])
    return out.getvalue()


def write_csv(m: TraceMatrix, path: str | os.PathLike, extra_comments: Sequence[str] = ()) -> None:
    from .persistence import atomic_write_text

    atomic_write_text(path, to_csv_text(m, extra_comments))


# --------------------------------------------------------------------------
# Preprocessing


def _require_mode(m: TraceMatrix, mode: str, op: str) -> None:
    if m.mode != mode:
        raise ModeError(f"{op} requires a {mode} matrix, got {m.mode}")


def normalize_log(m: TraceMatrix) -> TraceMatrix:
    """Map each trace to ``ln(1 + a_k) / sum_j ln(1 + a_j)``.

    The +1 keeps absent compounds (area 0) at 0 instead of -inf.
    """
    _require_mode(m, "raw", "normalize_log")
    T = np.log1p(m.X)
    totals = T.sum(axis=1)
    empty = np.flatnonzero(totals <= 0)
    if empty.size:
        i = int(empty[0])
        raise NormalizationError(
            f"trace {i} (subject {m.subject_ids[i]!r}, replicate {m.replicate_ids[i]!r}) "
            "has no positive feature")
    return TraceMatrix(T / totals[:, None], m.subject_ids, m.replicate_ids, m.genders,
                       m.ages, m.feature_names, "normalized_log")


def dichotomize(m: TraceMatrix, threshold: float = 0.0) -> TraceMatrix:
    """Presence/absence coding: 1 where the raw area exceeds ``threshold``."""
    _require_mode(m, "raw", "dichotomize")
    return TraceMatrix((m.X > threshold).astype(np.float64), m.subject_ids, m.replicate_ids,
                       m.genders, m.ages, m.feature_names, "dichotomized")


# --------------------------------------------------------------------------
# Calibration / test split


@dataclass(frozen=True)
class SplitConfig:
    calibration_fraction: float
    stratify_gender: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.calibration_fraction < 1.0:
            raise SplitError("calibration_fraction must lie strictly between 0 and 1")
        if not 0 <= int(self.seed) < 2**64:
            raise SplitError("seed must be a 64-bit unsigned integer")


def _apportion(fraction: float, counts: list[int]) -> list[int]:
    """Largest-remainder allocation of round(fraction * total) over groups.

    Every group gets floor or ceil of its exact share, and the grand total is
    the rounded overall share, so 412/534 of 534 subjects gives exactly 412.
    """
    total = sum(counts)
    target = int(math.floor(fraction * total + 0.5))
    exact = [fraction * c for c in counts]
    alloc = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(counts)), key=lambda g: (-(exact[g] - alloc[g]), g))
    for g in order[: max(0, target - sum(alloc))]:
        alloc[g] += 1
    return alloc


def split_calibration_test(m: TraceMatrix, cfg: SplitConfig) -> tuple[TraceMatrix, TraceMatrix]:
    """Subject-disjoint split; all traces of a subject land on the same side."""
    subjects = m.subjects()
    if len(subjects) < 2:
        raise SplitError("need at least 2 subjects to split")
    gender_of = {}
    for s, g in zip(m.subject_ids, m.genders):
        gender_of.setdefault(s, g)
    if cfg.stratify_gender:
        groups = [[s for s in subjects if gender_of[s] == g] for g in GENDERS]
        groups = [g for g in groups if g]
    else:
        groups = [subjects]
    rng = np.random.default_rng(int(cfg.seed))
    alloc = _apportion(cfg.calibration_fraction, [len(g) for g in groups])
    cal = []
    for group, k in zip(groups, alloc):
        if len(group) >= 2:
            k = min(max(k, 1), len(group) - 1)
        order = rng.permutation(len(group))
        cal.extend(group[i] for i in order[:k])
    if not cal or len(cal) == len(subjects):
        # single-subject groups can leave one side empty; move one subject over
        rest = [s for s in subjects if s not in set(cal)]
        cal = cal[:-1] if not rest else cal + rest[:1]
    cal_set = set(cal)
    return (m.with_subjects(cal_set), m.with_subjects(set(subjects) - cal_set))


# --------------------------------------------------------------------------
# Repeatability


@dataclass(frozen=True)
class RepeatabilityReport:
    per_feature_rsd: np.ndarray
    median_rsd: float
    iqi: tuple[float, float]
    n_subjects: int

    def format(self) -> str:
        return f"{self.median_rsd:.1f} [{self.iqi[0]:.1f} ; {self.iqi[1]:.1f}]"


def repeatability(m: TraceMatrix) -> RepeatabilityReport:
    """Median relative standard deviation (%) of each feature across replicates.

    For every feature, RSD = 100 * sd / mean is computed within each subject
    having at least two replicates (sample sd; subjects with zero mean are
    skipped for that feature), then the median over subjects is taken.
    The report summarizes these per-feature medians by median and IQI.
    """
    codes = m.subject_codes()
    counts = np.bincount(codes)
    multi = np.flatnonzero(counts >= 2)
    if multi.size == 0:
        raise DiagnosticError("no subject has two or more replicates")
    rsd = np.full((multi.size, m.n_features), np.nan)
    for r, s in enumerate(multi):
        block = m.X[codes == s]
        mean = block.mean(axis=0)
        sd = block.std(axis=0, ddof=1)
        ok = mean > 0
        rsd[r, ok] = 100.0 * sd[ok] / mean[ok]
    with np.errstate(all="ignore"):
        valid = ~np.all(np.isnan(rsd), axis=0)
        per_feature = np.full(m.n_features, np.nan)
        per_feature[valid] = np.nanmedian(rsd[:, valid], axis=0)
    finite = per_feature[valid]
    if finite.size == 0:
        raise DiagnosticError("no feature has a positive mean in any replicated subject")
    lo, med, hi = np.percentile(finite, [25, 50, 75])
    return RepeatabilityReport(per_feature, float(med), (float(lo), float(hi)), int(multi.size))
