"""Batch evaluation, ablation variants, and report files.

``run_eval`` tracks every sequence under one ablation variant and collects
per-frame IoU / center error plus the usual success-AUC and precision@20
summaries.  Reports are written as ``summary.csv``/``summary.json`` with one
row per sequence plus an unweighted aggregate row, and one
``per_frame_<name>.csv`` per sequence.  Wall-clock throughput goes to a
separate ``timing.csv`` so that repeated runs with the same seed produce
byte-identical summaries.
"""

import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import geometry
from .tracker import VARIANTS, CascadeTracker, TrackerConfig

THREADS_ENV = "CASCADE_TRACK_THREADS"


@dataclasses.dataclass
class SequenceReport:
    name: str
    n_frames: int
    ious: list
    center_errors: list
    results: list          # FrameResult per frame
    mean_iou: float
    auc: float
    precision20: float
    fps: float


@dataclasses.dataclass
class Report:
    variant: str
    config: dict
    sequences: list
    aggregate: dict        # unweighted means over sequences
    fps: float


def _track_one(seq, cfg):
    if not seq.full_ground_truth():
        raise ValueError(f"sequence {seq.name!r} lacks per-frame ground truth")
    tracker = CascadeTracker(cfg)
    t0 = time.perf_counter()
    results = [tracker.init(seq.frames[0], seq.ground_truth[0])]
    for frame in seq.frames[1:]:
        results.append(tracker.track(frame))
    elapsed = time.perf_counter() - t0
    ious = [geometry.iou(r.box, gt) for r, gt in zip(results, seq.ground_truth)]
    errs = [geometry.center_error(r.box, gt) for r, gt in zip(results, seq.ground_truth)]
    return SequenceReport(
        name=seq.name, n_frames=len(seq.frames), ious=ious, center_errors=errs,
        results=results, mean_iou=float(np.mean(ious)),
        auc=geometry.success_auc(ious), precision20=geometry.precision_at(errs),
        fps=len(seq.frames) / max(elapsed, 1e-9))


def run_eval(sequences, tracker_cfg: TrackerConfig = None, variant="full") -> Report:
    """Track all sequences under one ablation variant.

    Per-sequence tracker seeds derive from (config seed, sequence index), so
    reports depend only on inputs and the seed, never on scheduling.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("no sequences to evaluate")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    base = tracker_cfg or TrackerConfig()
    cfgs = [
        dataclasses.replace(
            base, variant=variant,
            seed=int(np.random.SeedSequence([base.seed, i]).generate_state(1)[0]))
        for i in range(len(sequences))
    ]
    workers = int(os.environ.get(THREADS_ENV, os.cpu_count() or 1))
    workers = max(1, min(workers, len(sequences)))
    if workers == 1:
        seq_reports = [_track_one(s, c) for s, c in zip(sequences, cfgs)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            seq_reports = list(pool.map(_track_one, sequences, cfgs))
    aggregate = {
        "mean_iou": float(np.mean([r.mean_iou for r in seq_reports])),
        "auc": float(np.mean([r.auc for r in seq_reports])),
        "precision20": float(np.mean([r.precision20 for r in seq_reports])),
    }
    return Report(variant=variant, config=base.as_dict(), sequences=seq_reports,
                  aggregate=aggregate,
                  fps=float(np.mean([r.fps for r in seq_reports])))


def _num(v):
    return repr(float(v))


SUMMARY_COLUMNS = ("name", "frames", "mean_iou", "auc", "precision20")
PER_FRAME_COLUMNS = ("frame", "iou", "center_error", "stage1", "stage2",
                     "fused", "reliable", "redetected")


def write_report(report: Report, out_dir, formats=("csv", "json")):
    """Write summary.{csv,json}, per_frame_<seq>.csv, and timing.csv."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    try:
        if "csv" in formats:
            path = os.path.join(out_dir, "summary.csv")
            with open(path, "w", newline="\n") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("variant", report.variant))
                w.writerow(SUMMARY_COLUMNS)
                for r in report.sequences:
                    w.writerow((r.name, r.n_frames, _num(r.mean_iou),
                                _num(r.auc), _num(r.precision20)))
                a = report.aggregate
                w.writerow(("aggregate", sum(r.n_frames for r in report.sequences),
                            _num(a["mean_iou"]), _num(a["auc"]),
                            _num(a["precision20"])))
            written.append(path)
        if "json" in formats:
            path = os.path.join(out_dir, "summary.json")
            payload = {
                "variant": report.variant,
                "config": report.config,
                "sequences": [
                    {"name": r.name, "frames": r.n_frames, "mean_iou": r.mean_iou,
                     "auc": r.auc, "precision20": r.precision20}
                    for r in report.sequences
                ],
                "aggregate": report.aggregate,
            }
            with open(path, "w", newline="\n") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
            written.append(path)
        for r in report.sequences:
            path = os.path.join(out_dir, f"per_frame_{r.name}.csv")
            with open(path, "w", newline="\n") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(PER_FRAME_COLUMNS)
                for i, (iou_v, err, res) in enumerate(
                        zip(r.ious, r.center_errors, r.results), start=1):
                    w.writerow((i, _num(iou_v), _num(err), _num(res.stage1_score),
                                _num(res.stage2_score), _num(res.fused_score),
                                int(res.reliable), int(res.redetected)))
            written.append(path)
        path = os.path.join(out_dir, "timing.csv")
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("name", "fps"))
            for r in report.sequences:
                w.writerow((r.name, _num(r.fps)))
            w.writerow(("aggregate", _num(report.fps)))
        written.append(path)
    except OSError as e:
        raise IOError(f"failed writing report under {out_dir}: {e}") from e
    return written


def read_summary_csv(path):
    """Parse a summary.csv back into (variant, rows); inverse of write_report."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    variant = rows[0][1]
    header = rows[1]
    out = []
    for row in rows[2:]:
        rec = dict(zip(header, row))
        for k in ("mean_iou", "auc", "precision20"):
            rec[k] = float(rec[k])
        rec["frames"] = int(rec["frames"])
        out.append(rec)
    return variant, out
