"""Stage runners behind the command line: detect, extract, cluster, evaluate, select.

Each stage reads and writes flat files under the output directory and
records what it wrote in ``manifest.json``; timings and per-file accounting
go to ``run_report.json``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, clustering, selection, tables
from .audio_io import AudioError, bandpass, load_wav, normalize_max_loudness
from .config import PipelineConfig
from .detection import CallSegment, DetectionError, segment_calls
from .evaluation import evaluate
from .features import FEATURE_NAMES, extract_call_features
from .pitch import FeatureError

log = logging.getLogger(__name__)

SEGMENTS_CSV = "segments.csv"
FEATURES_CSV = "features.csv"
ASSIGNMENTS_CSV = "assignments.csv"
GRID_CSV = "validity_grid.csv"
DENDROGRAM_JSON = "dendrogram.json"
RECOMMENDED_JSON = "recommended_k.json"
REPRESENTATIVES_CSV = "representatives.csv"
EVAL_JSON = "evaluation.json"
EVAL_CSV = "evaluation_summary.csv"
CORRELATION_CSV = "correlation.csv"
VIF_CSV = "vif.csv"
PRUNE_JSON = "pruning_audit.json"
BINNED_CSV = "binned_counts.csv"
PER_CHICK_CSV = "per_chick_counts.csv"
SUMMARY_CSV = "cluster_summary.csv"
MANIFEST_JSON = "manifest.json"
REPORT_JSON = "run_report.json"


class StageError(Exception):
    pass


class NoInputError(StageError):
    pass


@dataclasses.dataclass
class RunReport:
    config: dict
    version: str = __version__
    timings_s: dict = dataclasses.field(default_factory=dict)
    calls_per_file: dict = dataclasses.field(default_factory=dict)
    failed_files: list = dataclasses.field(default_factory=list)
    dropped_calls: list = dataclasses.field(default_factory=list)
    input_hash: str | None = None
    notes: list = dataclasses.field(default_factory=list)

    def drop(self, source_id: str, onset_s: float, stage: str, reason: str) -> None:
        self.dropped_calls.append({"source_id": source_id, "onset_s": round(onset_s, 6),
                                   "stage": stage, "reason": reason})


@dataclasses.dataclass
class Manifest:
    outputs: list = dataclasses.field(default_factory=list)
    stages: list = dataclasses.field(default_factory=list)
    complete: bool = False

    def add(self, out_dir: Path, name: str, columns=None) -> None:
        path = out_dir / name
        self.outputs = [o for o in self.outputs if o["path"] != name]
        self.outputs.append({"path": name, "columns": list(columns) if columns else None,
                             "sha256": tables.sha256(path)})

    def write(self, out_dir: Path) -> None:
        tables.write_json(out_dir / MANIFEST_JSON, {
            "version": __version__, "stages": self.stages, "complete": self.complete,
            "outputs": sorted(self.outputs, key=lambda o: o["path"])})


class Run:
    """Shared state of one invocation: config, output directory, report and manifest."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.report = RunReport(config=cfg.to_dict())
        self.manifest = Manifest()
        prior = self.out / MANIFEST_JSON
        if prior.exists():
            import json
            old = json.loads(prior.read_text())
            self.manifest.outputs = old.get("outputs", [])
            self.manifest.stages = old.get("stages", [])

    def finish_stage(self, stage: str, started: float) -> None:
        self.report.timings_s[stage] = round(time.perf_counter() - started, 3)
        if stage not in self.manifest.stages:
            self.manifest.stages.append(stage)
        self.manifest.write(self.out)
        self.write_report()

    def write_report(self) -> None:
        tables.write_json(self.out / REPORT_JSON, dataclasses.asdict(self.report))

    def input_path(self, name: str, explicit=None) -> Path:
        path = Path(explicit) if explicit else self.out / name
        if not path.exists():
            raise StageError(f"required input not found: {path}")
        return path


def list_wavs(input_dir) -> list[Path]:
    if input_dir is None:
        raise NoInputError("no input_dir configured")
    d = Path(input_dir)
    if not d.is_dir():
        raise NoInputError(f"input directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() == ".wav")


def preprocess(path: Path, cfg: PipelineConfig, for_detection: bool):
    clip = normalize_max_loudness(load_wav(path))
    if not for_detection or cfg.bandpass_before_detection:
        clip = bandpass(clip, cfg.band)
    return clip


def _detect_one(args):
    path, cfg = args
    try:
        clip = preprocess(path, cfg, for_detection=True)
        return path.stem, segment_calls(clip, cfg.detection), None
    except (AudioError, DetectionError, ValueError) as exc:
        return path.stem, [], f"{type(exc).__name__}: {exc}"


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def hash_inputs(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).name.encode())
        h.update(tables.sha256(p).encode())
    return h.hexdigest()


def run_detect(run: Run) -> dict[str, list[CallSegment]]:
    t0 = time.perf_counter()
    wavs = list_wavs(run.cfg.input_dir)
    if not wavs:
        raise NoInputError(f"no WAV files in {run.cfg.input_dir}")
    run.report.input_hash = hash_inputs(wavs)
    results = _map(_detect_one, [(p, run.cfg) for p in wavs], run.cfg.workers)
    segments = {}
    for sid, segs, err in results:
        if err:
            log.error("%s: %s", sid, err)
            run.report.failed_files.append({"source_id": sid, "stage": "detect", "reason": err})
            continue
        segments[sid] = segs
        run.report.calls_per_file[sid] = len(segs)
    if not segments:
        raise StageError("every input file failed detection")
    tables.write_segments(run.out / SEGMENTS_CSV, (s for sid in sorted(segments) for s in segments[sid]))
    run.manifest.add(run.out, SEGMENTS_CSV, tables.SEGMENT_COLUMNS)
    run.finish_stage("detect", t0)
    return segments


def _extract_one(args):
    path, segs, cfg = args
    rows, drops = [], []
    try:
        clip = preprocess(path, cfg, for_detection=False)
    except (AudioError, ValueError) as exc:
        return rows, [(s.source_id, s.onset_s, f"file_unreadable: {exc}") for s in segs]
    for seg in segs:
        try:
            fv = extract_call_features(clip, seg, cfg.features)
        except (FeatureError, AudioError, ValueError) as exc:
            drops.append((seg.source_id, seg.onset_s, getattr(exc, "reason", type(exc).__name__)))
            continue
        rows.append({"source_id": seg.source_id, "onset_s": seg.onset_s,
                     "offset_s": seg.offset_s, **fv.as_dict()})
    return rows, drops


def run_extract(run: Run, segments_csv=None) -> list[dict]:
    t0 = time.perf_counter()
    segments = tables.read_segments(run.input_path(SEGMENTS_CSV, segments_csv))
    wavs = {p.stem: p for p in list_wavs(run.cfg.input_dir)}
    jobs = []
    for sid, segs in segments.items():
        if sid not in wavs:
            run.report.failed_files.append({"source_id": sid, "stage": "extract",
                                            "reason": "recording not found"})
            for s in segs:
                run.report.drop(sid, s.onset_s, "extract", "recording_missing")
            continue
        jobs.append((wavs[sid], segs, run.cfg))
    rows = []
    for file_rows, drops in _map(_extract_one, jobs, run.cfg.workers):
        rows.extend(file_rows)
        for sid, onset, reason in drops:
            run.report.drop(sid, onset, "extract", reason)
    tables.write_csv(run.out / FEATURES_CSV, tables.FEATURE_COLUMNS, rows)
    run.manifest.add(run.out, FEATURES_CSV, tables.FEATURE_COLUMNS)
    run.finish_stage("extract", t0)
    return rows


def load_feature_table(path, columns=FEATURE_NAMES):
    """Complete rows of the feature CSV: (keys, matrix, n_incomplete)."""
    rows = tables.read_csv(path, tables.FEATURE_COLUMNS)
    keys, values, incomplete = [], [], 0
    for row in rows:
        vals = [tables.parse_float(row[c]) for c in columns]
        if any(v is None or not math.isfinite(v) for v in vals):
            incomplete += 1
            continue
        keys.append((row["source_id"], float(row["onset_s"]), float(row["offset_s"])))
        values.append(vals)
    return keys, np.array(values, dtype=np.float64).reshape(len(values), len(columns)), incomplete


def run_cluster(run: Run, features_csv=None) -> clustering.ClusterModel:
    t0 = time.perf_counter()
    cl = run.cfg.clustering
    keys, raw, incomplete = load_feature_table(run.input_path(FEATURES_CSV, features_csv))
    if incomplete:
        log.warning("%d calls with missing descriptors excluded from clustering", incomplete)
        run.report.notes.append(f"cluster: {incomplete} calls with missing descriptors excluded")
    if raw.shape[0] < 3:
        raise StageError(f"only {raw.shape[0]} complete calls; clustering needs at least 3")
    fm = clustering.zscore_fit_transform(raw, FEATURE_NAMES)
    X = fm.values
    methods = tuple(m for m in cl.methods)
    dbscan = ({"eps": cl.dbscan_eps, "min_pts": cl.dbscan_min_pts} if "dbscan" in methods else None)
    grid = selection.grid_search(X, methods, range(cl.k_min, cl.k_max + 1), seed=cl.seed or 0,
                                 dbscan=dbscan, workers=run.cfg.workers)
    tables.write_csv(run.out / GRID_CSV, selection.GRID_COLUMNS, grid.rows())
    tables.write_json(run.out / RECOMMENDED_JSON, grid.recommended)

    k = cl.final_k
    if k is None and cl.final_method != "dbscan":
        k = grid.recommended.get(cl.final_method, {}).get("silhouette") or 2
    if cl.final_method == "dbscan":
        model = clustering.fit_dbscan(X, cl.dbscan_eps, cl.dbscan_min_pts)
    else:
        k = min(k, X.shape[0] - 1)
        model = grid.models.get((cl.final_method, k)) or clustering.fit(cl.final_method, X, k, cl.seed)
    rows = [{"source_id": s, "onset_s": on, "offset_s": off, "cluster": int(lab)}
            for (s, on, off), lab in zip(keys, model.labels)]
    tables.write_csv(run.out / ASSIGNMENTS_CSV, tables.ASSIGNMENT_COLUMNS, rows)

    reps = clustering.representative_calls(X, model, cl.representative_percentile)
    rep_rows = [{"method": model.method, "k": model.k, "cluster": c, "rank": rank + 1,
                 "source_id": keys[r][0], "onset_s": keys[r][1], "offset_s": keys[r][2], "distance": d}
                for c, items in sorted(reps.items()) for rank, (r, d) in enumerate(items)]
    tables.write_csv(run.out / REPRESENTATIVES_CSV, tables.REPRESENTATIVE_COLUMNS, rep_rows)

    for name, cols in ((GRID_CSV, selection.GRID_COLUMNS), (ASSIGNMENTS_CSV, tables.ASSIGNMENT_COLUMNS),
                       (REPRESENTATIVES_CSV, tables.REPRESENTATIVE_COLUMNS), (RECOMMENDED_JSON, None)):
        run.manifest.add(run.out, name, cols)
    if "hac_ward" in methods or cl.final_method == "hac_ward":
        tables.write_json(run.out / DENDROGRAM_JSON, clustering.fit_hac_ward(X).to_json())
        run.manifest.add(run.out, DENDROGRAM_JSON)
    run.finish_stage("cluster", t0)
    return model


def run_evaluate(run: Run, predictions_csv=None, annotations_csv=None):
    """Score predictions against annotations.

    Predicted files without annotations are listed and excluded; annotated
    files without any prediction are scored as empty predictions.
    """
    t0 = time.perf_counter()
    ann_path = annotations_csv or run.cfg.annotation_csv
    if not ann_path:
        raise StageError("evaluate needs annotation_csv")
    ref = tables.read_segments(run.input_path("", ann_path))
    pred = tables.read_segments(run.input_path(SEGMENTS_CSV, predictions_csv))
    unannotated = sorted(set(pred) - set(ref))
    unpredicted = sorted(set(ref) - set(pred))
    if unannotated:
        log.warning("predictions without annotations excluded: %s", unannotated)
    ev = run.cfg.evaluation
    report = evaluate({k: v for k, v in pred.items() if k in ref}, ref,
                      ev.onset_tol_s, ev.offset_base_tol_s)
    payload = report.to_dict()
    payload["excluded_unannotated"] = unannotated
    payload["annotated_without_predictions"] = unpredicted
    tables.write_json(run.out / EVAL_JSON, payload)
    method = {"local_min": "local minimum of energy", "first_diff": "1st-order difference",
              "second_diff": "2nd-order difference"}[run.cfg.detection.offset_method]
    rows = [{"Task": task, "Method": "HFC" if task == "onset" else method, "Weighted F1-measure": s.f1,
             "Weighted Precision": s.precision, "Weighted Recall": s.recall}
            for task, s in report.weighted.items()]
    tables.write_csv(run.out / EVAL_CSV, tables.EVAL_SUMMARY_COLUMNS, rows)
    run.manifest.add(run.out, EVAL_JSON)
    run.manifest.add(run.out, EVAL_CSV, tables.EVAL_SUMMARY_COLUMNS)
    run.finish_stage("evaluate", t0)
    return report


def run_select(run: Run, features_csv=None, metadata_csv=None, assignments_csv=None) -> list[str]:
    t0 = time.perf_counter()
    meta_path = metadata_csv or run.cfg.metadata_csv
    if not meta_path:
        raise StageError("select needs metadata_csv (source_id,chick_id,condition)")
    if not Path(meta_path).exists():
        raise StageError(f"metadata file not found: {meta_path}")
    groups = [analysis.GroupLabel(r["source_id"], r["chick_id"], r["condition"])
              for r in tables.read_metadata(meta_path)]
    by_source = {g.source_id: g for g in groups}
    keys, raw, _ = load_feature_table(run.input_path(FEATURES_CSV, features_csv))
    joined = [i for i, k in enumerate(keys) if k[0] in by_source]
    if len(joined) < len(keys):
        run.report.notes.append(f"select: {len(keys) - len(joined)} calls without metadata ignored")
    keys = [keys[i] for i in joined]
    raw = raw[joined]
    a = run.cfg.analysis
    cols = list(FEATURE_NAMES)

    r, _ = analysis.pearson_matrix(raw)
    tables.write_csv(run.out / CORRELATION_CSV, ["feature", *cols],
                     ({"feature": c, **{c2: (None if np.isnan(v) else float(v)) for c2, v in zip(cols, r[i])}}
                      for i, c in enumerate(cols)))
    try:
        vif = analysis.vif_scores(raw, cols)
    except ValueError as exc:
        vif = {}
        run.report.notes.append(f"select: VIF skipped ({exc})")
    tables.write_csv(run.out / VIF_CSV, tables.VIF_COLUMNS,
                     ({"feature": c, "vif": v, "flagged": bool(v > analysis.VIF_FLAG)} for c, v in vif.items()))
    conditions = [by_source[k[0]].condition for k in keys]
    overrides = {(o["keep"], o["over"]): o["keep"] for o in a.overrides}
    retained, audit = analysis.prune_multicollinear(raw, cols, conditions, a.r_threshold, overrides)
    tables.write_json(run.out / PRUNE_JSON, {"r_threshold": a.r_threshold, "retained": retained,
                                             "decisions": audit})
    outputs = [(CORRELATION_CSV, ["feature", *cols]), (VIF_CSV, tables.VIF_COLUMNS), (PRUNE_JSON, None)]

    assign_path = Path(assignments_csv) if assignments_csv else run.out / ASSIGNMENTS_CSV
    if assign_path.exists():
        assigned = {(row["source_id"], round(float(row["onset_s"]), 6)): int(row["cluster"])
                    for row in tables.read_csv(assign_path, tables.ASSIGNMENT_COLUMNS)}
        labels = np.array([assigned.get((k[0], round(k[1], 6)), -1) for k in keys])
        calls = [(k[0], k[1], int(l)) for k, l in zip(keys, labels) if l >= 0]
        session = a.session_len_s
        if session is None:
            latest = max((c[1] for c in calls), default=0.0)
            session = a.bin_len_s * max(1, math.ceil((latest + 1e-9) / a.bin_len_s))
        binned = analysis.bin_call_counts(calls, groups, session, a.bin_len_s)
        tables.write_csv(run.out / BINNED_CSV, tables.BINNED_COLUMNS, binned.summary)
        tables.write_csv(run.out / PER_CHICK_CSV, tables.PER_CHICK_COLUMNS, binned.per_chick)
        summary = analysis.cluster_summary(raw, cols, labels, conditions)
        tables.write_csv(run.out / SUMMARY_CSV, tables.SUMMARY_COLUMNS, summary)
        outputs += [(BINNED_CSV, tables.BINNED_COLUMNS), (PER_CHICK_CSV, tables.PER_CHICK_COLUMNS),
                    (SUMMARY_CSV, tables.SUMMARY_COLUMNS)]
    for name, c in outputs:
        run.manifest.add(run.out, name, c)
    run.finish_stage("select", t0)
    return retained


def run_pipeline(run: Run) -> None:
    """detect -> extract -> cluster, then evaluate / select when their inputs are configured."""
    run_detect(run)
    run_extract(run)
    run_cluster(run)
    if run.cfg.annotation_csv:
        run_evaluate(run)
    if run.cfg.metadata_csv:
        run_select(run)
    run.manifest.complete = True
    run.manifest.write(run.out)
