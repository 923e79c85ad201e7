"""Event-based scoring of detected onsets and offsets against annotations."""

from __future__ import annotations

import dataclasses
from collections.abc import Mapping, Sequence

import numpy as np

from .detection import CallSegment

ONSET_TOL_S = 0.05
OFFSET_BASE_TOL_S = 0.1
# absorbs float error in time differences; times are stored to 1e-6 s
_EPS = 1e-9


@dataclasses.dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn_: int
    matched_pairs: list[tuple[float, float]]


@dataclasses.dataclass(frozen=True)
class PrfScores:
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class FileScores:
    onset: PrfScores
    offset: PrfScores
    n_ref_calls: int


@dataclasses.dataclass(frozen=True)
class EvalReport:
    per_file: dict[str, FileScores]
    weighted: dict[str, PrfScores]

    def to_dict(self) -> dict:
        return {
            "per_file": {
                sid: {"onset": fs.onset.as_dict(), "offset": fs.offset.as_dict(),
                      "n_ref_calls": fs.n_ref_calls}
                for sid, fs in self.per_file.items()
            },
            "weighted": {task: s.as_dict() for task, s in self.weighted.items()},
        }


def _check_sorted(times: np.ndarray, name: str) -> None:
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise ValueError(f"{name} times must be sorted ascending")


def _match_indices(pred: np.ndarray, ref: np.ndarray, tol_s: float) -> list[tuple[int, int]]:
    """One-to-one matching of sorted event times within ``tol_s``.

    Two-pointer sweep: an in-tolerance pair is matched immediately, otherwise
    the earlier event is discarded. With a common symmetric tolerance the
    compatibility graph is an interval graph, where matching earliest-first
    is maximum.
    """
    pairs = []
    i = j = 0
    while i < ref.size and j < pred.size:
        if abs(pred[j] - ref[i]) <= tol_s + _EPS:
            pairs.append((i, j))
            i += 1
            j += 1
        elif pred[j] < ref[i]:
            j += 1
        else:
            i += 1
    return pairs


def match_onsets(pred: Sequence[float], ref: Sequence[float], tol_s: float = ONSET_TOL_S) -> MatchResult:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_sorted(pred, "predicted")
    _check_sorted(ref, "reference")
    pairs = _match_indices(pred, ref, tol_s)
    tp = len(pairs)
    return MatchResult(tp, pred.size - tp, ref.size - tp,
                       [(float(ref[i]), float(pred[j])) for i, j in pairs])


def offset_tolerance(ref: CallSegment, base_tol_s: float = OFFSET_BASE_TOL_S) -> float:
    """Fixed tolerance, widened to half the call duration for long calls."""
    return max(base_tol_s, ref.duration_s / 2)


def match_offsets(pred_segments: Sequence[CallSegment], ref_segments: Sequence[CallSegment],
                  base_tol_s: float = OFFSET_BASE_TOL_S,
                  onset_tol_s: float = ONSET_TOL_S) -> MatchResult:
    """Offsets are compared only for calls whose onsets matched.

    An onset-matched pair with an out-of-tolerance offset counts as one FP and one FN.
    """
    pred_segments = sorted(pred_segments, key=lambda s: s.onset_s)
    ref_segments = sorted(ref_segments, key=lambda s: s.onset_s)
    pred_on = np.array([s.onset_s for s in pred_segments])
    ref_on = np.array([s.onset_s for s in ref_segments])
    pairs = []
    for i, j in _match_indices(pred_on, ref_on, onset_tol_s):
        r, p = ref_segments[i], pred_segments[j]
        if abs(p.offset_s - r.offset_s) <= offset_tolerance(r, base_tol_s) + _EPS:
            pairs.append((r.offset_s, p.offset_s))
    tp = len(pairs)
    return MatchResult(tp, len(pred_segments) - tp, len(ref_segments) - tp, pairs)


def prf(m: MatchResult) -> PrfScores:
    precision = m.tp / (m.tp + m.fp) if m.tp + m.fp else 0.0
    recall = m.tp / (m.tp + m.fn_) if m.tp + m.fn_ else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PrfScores(precision, recall, f1)


def weighted_aggregate(per_file: Mapping[str, PrfScores], weights: Mapping[str, float]) -> PrfScores:
    keys = list(per_file)
    w = np.array([float(weights[k]) for k in keys])
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not w.sum() > 0:
        raise ValueError("at least one weight must be positive")
    w = w / w.sum()
    return PrfScores(*(float(sum(wi * getattr(per_file[k], f) for wi, k in zip(w, keys)))
                       for f in ("precision", "recall", "f1")))


def evaluate_file(pred: Sequence[CallSegment], ref: Sequence[CallSegment],
                  onset_tol_s: float = ONSET_TOL_S,
                  offset_base_tol_s: float = OFFSET_BASE_TOL_S) -> FileScores:
    pred = sorted(pred, key=lambda s: s.onset_s)
    ref = sorted(ref, key=lambda s: s.onset_s)
    on = match_onsets([s.onset_s for s in pred], [s.onset_s for s in ref], onset_tol_s)
    off = match_offsets(pred, ref, offset_base_tol_s, onset_tol_s)
    return FileScores(prf(on), prf(off), len(ref))


def evaluate(pred_by_file: Mapping[str, Sequence[CallSegment]],
             ref_by_file: Mapping[str, Sequence[CallSegment]],
             onset_tol_s: float = ONSET_TOL_S,
             offset_base_tol_s: float = OFFSET_BASE_TOL_S) -> EvalReport:
    """Score every annotated file; files are weighted by their reference call count.

    A file present in the annotations but absent from ``pred_by_file`` is
    scored against an empty prediction list.
    """
    per_file = {sid: evaluate_file(pred_by_file.get(sid, []), ref, onset_tol_s, offset_base_tol_s)
                for sid, ref in sorted(ref_by_file.items())}
    weights = {sid: fs.n_ref_calls for sid, fs in per_file.items()}
    if not per_file or not any(weights.values()):
        zero = PrfScores(0.0, 0.0, 0.0)
        return EvalReport(per_file, {"onset": zero, "offset": zero})
    weighted = {task: weighted_aggregate({s: getattr(fs, task) for s, fs in per_file.items()}, weights)
                for task in ("onset", "offset")}
    return EvalReport(per_file, weighted)
