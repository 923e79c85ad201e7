"""Group-level statistics: correlation, VIF, effect sizes, feature pruning, call-count bins."""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

VIF_FLAG = 10.0


@dataclasses.dataclass(frozen=True)
class GroupLabel:
    source_id: str
    chick_id: str
    condition: str


@dataclasses.dataclass(frozen=True)
class CorrelationReport:
    columns: tuple[str, ...]
    pearson: np.ndarray
    vif: dict[str, float]
    flagged_pairs: list[tuple[str, str, float]]
    undefined: list[str]


def pearson_matrix(X: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Pearson r for every column pair, plus the indices of constant columns.

    Pairs involving a constant column are NaN (the diagonal stays 1).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("need a 2-D matrix with at least 3 rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("missing values in feature matrix")
    dev = X - X.mean(axis=0)
    norm = np.sqrt(np.sum(dev ** 2, axis=0))
    constant = [int(j) for j in np.flatnonzero(norm == 0)]
    safe = np.where(norm > 0, norm, 1.0)
    z = dev / safe
    r = z.T @ z
    r = np.clip((r + r.T) / 2, -1.0, 1.0)
    r[constant, :] = np.nan
    r[:, constant] = np.nan
    np.fill_diagonal(r, 1.0)
    return r, constant


def vif_scores(X: np.ndarray, columns: Sequence[str] | None = None) -> dict[str, float]:
    """VIF_j = 1 / (1 - R^2_j), R^2_j from OLS (with intercept) of column j on the others.

    Exact collinearity gives ``inf``.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    columns = list(columns) if columns is not None else [f"x{j}" for j in range(p)]
    if n <= p:
        raise ValueError("VIF needs more rows than features")
    out = {}
    for j in range(p):
        y = X[:, j]
        A = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        beta, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ beta
        sst = float(np.sum((y - y.mean()) ** 2))
        if sst == 0:
            out[columns[j]] = math.nan
            continue
        r2 = 1.0 - float(resid @ resid) / sst
        out[columns[j]] = math.inf if r2 >= 1.0 - 1e-12 else 1.0 / (1.0 - r2)
    for name, v in out.items():
        if v > VIF_FLAG:
            log.info("feature %s has VIF %.2f > %g", name, v, VIF_FLAG)
    return out


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """(mean_a - mean_b) / pooled SD, pooled with N-1 group variances."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least 2 values")
    pooled = math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
    if pooled == 0:
        raise ZeroDivisionError("pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / pooled)


def correlation_report(X: np.ndarray, columns: Sequence[str], r_threshold: float = 0.8) -> CorrelationReport:
    r, constant = pearson_matrix(X)
    columns = tuple(columns)
    flagged = []
    for i in range(len(columns)):
        for j in range(i + 1, len(columns)):
            if np.isfinite(r[i, j]) and abs(r[i, j]) >= r_threshold:
                flagged.append((columns[i], columns[j], float(r[i, j])))
    try:
        vif = vif_scores(X, columns)
    except ValueError:
        vif = {}
    return CorrelationReport(columns, r, vif, flagged, [columns[j] for j in constant])


def _pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def prune_multicollinear(X: np.ndarray, columns: Sequence[str], groups: Sequence[str],
                         r_threshold: float = 0.8,
                         overrides: Mapping[tuple[str, str], str] | None = None):
    """Drop one member of every |r| >= threshold pair, keeping the larger |Cohen's d|.

    Pairs are visited by descending |r| (ties by feature names). ``overrides``
    maps an unordered feature pair to the feature to keep regardless of d.
    ``groups`` holds one condition label per row and must name exactly two
    conditions; d is taken as first-sorted condition minus second.

    Returns ``(retained, audit)``; every flagged pair gets one audit entry.
    """
    X = np.asarray(X, dtype=np.float64)
    columns = list(columns)
    groups = np.asarray(groups)
    conds = sorted(set(groups.tolist()))
    if len(conds) != 2:
        raise ValueError(f"need exactly two conditions, got {conds}")
    overrides = {_pair_key(*k): v for k, v in (overrides or {}).items()}
    r, _ = pearson_matrix(X)
    idx = {c: i for i, c in enumerate(columns)}

    d = {}
    for c in columns:
        col = X[:, idx[c]]
        try:
            d[c] = cohens_d(col[groups == conds[0]], col[groups == conds[1]])
        except (ValueError, ZeroDivisionError):
            d[c] = 0.0

    pairs = []
    for i in range(len(columns)):
        for j in range(i + 1, len(columns)):
            if np.isfinite(r[i, j]) and abs(r[i, j]) >= r_threshold:
                a, b = _pair_key(columns[i], columns[j])
                pairs.append((a, b, float(r[i, j])))
    pairs.sort(key=lambda p: (-abs(p[2]), p[0], p[1]))

    dropped: set[str] = set()
    audit = []
    for a, b, rv in pairs:
        entry = {"feature_a": a, "feature_b": b, "r": rv, "d_a": d[a], "d_b": d[b]}
        if a in dropped or b in dropped:
            entry.update(kept=None, dropped=None, reason="already_resolved")
        else:
            if (a, b) in overrides:
                keep = overrides[(a, b)]
                if keep not in (a, b):
                    raise ValueError(f"override for ({a}, {b}) names {keep!r}")
                reason = "override"
            else:
                # larger |d| survives; ties keep the lexicographically first name
                keep = a if abs(d[a]) >= abs(d[b]) else b
                reason = "cohens_d"
            drop = b if keep == a else a
            dropped.add(drop)
            entry.update(kept=keep, dropped=drop, reason=reason)
            log.info("pair (%s, %s) r=%.3f: keep %s (%s)", a, b, rv, keep, reason)
        audit.append(entry)
    retained = [c for c in columns if c not in dropped]
    return retained, audit


@dataclasses.dataclass(frozen=True)
class BinnedCounts:
    """Tidy call counts: ``per_chick`` rows (condition, chick, cluster, bin, count) and
    ``summary`` rows (condition, cluster, bin, n_chicks, mean, sem)."""

    per_chick: list[dict]
    summary: list[dict]
    out_of_session: list[dict]


def bin_call_counts(calls: Sequence[tuple[str, float, int]], groups: Sequence[GroupLabel],
                    session_len_s: float, bin_len_s: float = 60.0,
                    clusters: Sequence[int] | None = None) -> BinnedCounts:
    """Per-chick call counts per time bin and cluster, then mean and SEM across chicks.

    ``calls`` are ``(source_id, onset_s, cluster)`` triples. Bins are numbered
    from 1. Chicks without calls in a cell count as zero. Calls outside
    ``[0, session_len_s)`` are reported in ``out_of_session`` and not counted.
    """
    n_bins = session_len_s / bin_len_s
    if n_bins < 1 or abs(n_bins - round(n_bins)) > 1e-9:
        raise ValueError("session length must be a positive multiple of the bin length")
    n_bins = int(round(n_bins))
    by_source = {g.source_id: g for g in groups}
    chicks = sorted({(g.condition, g.chick_id) for g in groups})
    if clusters is None:
        clusters = sorted({c for _, _, c in calls})
    counts = {(cond, chick, cl): np.zeros(n_bins, dtype=int)
              for cond, chick in chicks for cl in clusters}
    outside = []
    for sid, onset, cl in calls:
        g = by_source.get(sid)
        if g is None:
            raise KeyError(f"no group label for source {sid!r}")
        if not 0 <= onset < session_len_s:
            outside.append({"source_id": sid, "onset_s": onset, "cluster": cl})
            continue
        counts[(g.condition, g.chick_id, cl)][int(onset // bin_len_s)] += 1
    if outside:
        log.warning("%d calls outside the %.0f s session", len(outside), session_len_s)

    per_chick = [
        {"condition": cond, "chick_id": chick, "cluster": cl, "bin": b + 1, "count": int(v[b])}
        for (cond, chick, cl), v in sorted(counts.items()) for b in range(n_bins)
    ]
    summary = []
    for cond in sorted({c for c, _ in chicks}):
        members = [chick for c, chick in chicks if c == cond]
        for cl in clusters:
            mat = np.array([counts[(cond, chick, cl)] for chick in members], dtype=np.float64)
            n = mat.shape[0]
            mean = mat.mean(axis=0)
            sem = mat.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(n_bins)
            for b in range(n_bins):
                summary.append({"condition": cond, "cluster": cl, "bin": b + 1, "n_chicks": n,
                                "mean": float(mean[b]), "sem": float(sem[b])})
    return BinnedCounts(per_chick, summary, outside)


def cluster_summary(X_raw: np.ndarray, columns: Sequence[str], labels: Sequence[int],
                    groups: Sequence[str] | None = None) -> list[dict]:
    """Mean and SD (N-1) of every raw descriptor per (group, cluster).

    SD is ``None`` for single-member cells. Noise rows (label -1) are skipped.
    """
    X_raw = np.asarray(X_raw, dtype=np.float64)
    labels = np.asarray(labels)
    groups = np.asarray(groups) if groups is not None else np.full(labels.size, "all")
    rows = []
    for g in sorted(set(groups.tolist())):
        for cl in sorted(set(labels[labels >= 0].tolist())):
            mask = (groups == g) & (labels == cl)
            if not mask.any():
                continue
            sub = X_raw[mask]
            for j, name in enumerate(columns):
                rows.append({"group": g, "cluster": int(cl), "feature": name, "n": int(mask.sum()),
                             "mean": float(sub[:, j].mean()),
                             "sd": float(sub[:, j].std(ddof=1)) if mask.sum() > 1 else None})
    return rows
