"""Center-distance detection metrics, PR curves and the ray-duplicate rate.

Matching follows the nuScenes convention: detections of one class, in
descending score order, claim the nearest unclaimed ground truth of the same
scene within a ground-plane (x, y) distance threshold.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import svg
from .geometry import angle_between, ray_through, GeometryError

RECALL_POINTS = 101
DUPLICATE_THRESHOLD = 2.0


@dataclass(frozen=True, eq=False)
class Detection:
    scene_id: str
    class_id: int
    center: np.ndarray
    size: tuple[float, float, float]
    yaw: float
    score: float

    def __post_init__(self):
        if not (0.0 <= float(self.score) <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        size = tuple(float(s) for s in self.size)
        if any(s <= 0.0 for s in size):
            raise ValueError("detection sizes must be > 0")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "yaw", float(self.yaw))

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "class_id": self.class_id,
            "center": [float(x) for x in self.center],
            "size": list(self.size),
            "yaw": self.yaw,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(d["scene_id"], d["class_id"], d["center"], tuple(d["size"]), d.get("yaw", 0.0), d["score"])


def save_detections(dets: Sequence[Detection], path) -> None:
    with open(path, "w") as fh:
        json.dump({"schema_version": 1, "detections": [d.to_dict() for d in dets]}, fh, indent=1)
        fh.write("\n")


def load_detections(path) -> list[Detection]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != 1:
        raise ValueError(f"unsupported detections schema {doc.get('schema_version')!r}")
    return [Detection.from_dict(d) for d in doc["detections"]]


@dataclass(frozen=True)
class EvalConfig:
    distance_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    ray_angle_eps: float = 0.01
    recall_points: int = RECALL_POINTS

    def __post_init__(self):
        th = tuple(float(t) for t in self.distance_thresholds)
        if not th or th[0] <= 0.0 or any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("distance thresholds must be positive and strictly increasing")
        object.__setattr__(self, "distance_thresholds", th)
        if self.recall_points < 2:
            raise ValueError("recall grid needs at least 2 points")


def score_order(dets: Sequence[Detection]) -> list[int]:
    """Indices by descending score, ties broken by center (x, y, z) ascending."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, *map(float, dets[i].center)))


@dataclass
class MatchOutcome:
    order: list[int]  # detection indices in processing order
    tp: np.ndarray  # bool per processed detection
    matched_gt: np.ndarray  # gt index per processed detection, -1 for FP
    unmatched_gts: list[int]


def _ground_dist(a, b) -> float:
    return math.hypot(float(a[0]) - float(b[0]), float(a[1]) - float(b[1]))


def greedy_match(dets: Sequence[Detection], gts: Sequence, threshold: float) -> MatchOutcome:
    """Greedy matching of one class within one scene. ``gts`` carry ``.center``."""
    order = score_order(dets)
    claimed = [False] * len(gts)
    tp = np.zeros(len(order), dtype=bool)
    matched = np.full(len(order), -1, dtype=np.int64)
    for k, i in enumerate(order):
        best, best_d = -1, math.inf
        for j, g in enumerate(gts):
            if claimed[j]:
                continue
            dist = _ground_dist(dets[i].center, g.center)
            if dist < best_d:
                best, best_d = j, dist
        if best >= 0 and best_d <= threshold:
            claimed[best] = True
            tp[k] = True
            matched[k] = best
    return MatchOutcome(order, tp, matched, [j for j, c in enumerate(claimed) if not c])


def average_precision(tp_in_score_order, n_gt: int, recall_points: int = RECALL_POINTS) -> float | None:
    """Mean interpolated precision over an evenly spaced recall grid on [0, 1].

    The envelope at recall r is the best precision reached at recall >= r
    (0 where r is never reached). Returns None when n_gt == 0.
    """
    if n_gt <= 0:
        return None
    tp = np.asarray(tp_in_score_order, dtype=bool)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    grid = np.linspace(0.0, 1.0, recall_points)
    # first prefix reaching each grid recall (recall is nondecreasing)
    first = np.searchsorted(recall, grid - 1e-12, side="left")
    vals = np.where(first < len(tp), envelope[np.minimum(first, len(tp) - 1)], 0.0)
    return float(vals.mean())


def pr_points(tp_in_score_order, n_gt: int):
    tp = np.asarray(tp_in_score_order, dtype=bool)
    if tp.size == 0 or n_gt <= 0:
        return np.array([0.0]), np.array([0.0])
    ctp = np.cumsum(tp)
    return ctp / n_gt, ctp / np.arange(1, len(tp) + 1)


@dataclass
class _SceneResult:
    # per (class, threshold): list of (score, center tuple, tp)
    ranked: dict
    n_gt: dict  # class -> count
    dup_fp: int
    fp_2m: int


@dataclass
class EvalReport:
    classes: list[int] = field(default_factory=list)
    thresholds: tuple[float, ...] = ()
    ap: dict = field(default_factory=dict)  # (class, threshold) -> float | None
    counts: dict = field(default_factory=dict)  # (class, threshold) -> dict(n_gt, n_det, tp, fp, fn)
    curves: dict = field(default_factory=dict)  # (class | "all", threshold) -> (recall, precision)
    ray_duplicate_rate: float = 0.0
    n_fp_dup_threshold: int = 0
    n_ray_duplicates: int = 0

    @property
    def mean_ap(self) -> float:
        vals = [v for v in self.ap.values() if v is not None]
        return float(np.mean(vals)) if vals else 0.0

    def per_class_ap(self) -> dict:
        out = {}
        for c in self.classes:
            vals = [self.ap[(c, t)] for t in self.thresholds if self.ap.get((c, t)) is not None]
            out[c] = float(np.mean(vals)) if vals else None
        return out


def _group_by_class(items, key=lambda x: x.class_id):
    out: dict[int, list] = {}
    for it in items:
        out.setdefault(key(it), []).append(it)
    return out


def _is_ray_duplicate(fp: Detection, tps: Iterable[Detection], rig, eps: float) -> bool:
    for t in tps:
        for cam in rig:
            try:
                a = ray_through(cam, fp.center)
                b = ray_through(cam, t.center)
            except GeometryError:
                continue
            if angle_between(a, b) < eps:
                return True
    return False


def _evaluate_scene(dets, gts, rig, classes, cfg: EvalConfig) -> _SceneResult:
    det_by_c = _group_by_class(dets)
    gt_by_c = _group_by_class(gts)
    ranked = {}
    dup = fp2 = 0
    for c in classes:
        cd = det_by_c.get(c, [])
        cg = gt_by_c.get(c, [])
        for t in cfg.distance_thresholds:
            m = greedy_match(cd, cg, t)
            ranked[(c, t)] = [
                (cd[i].score, tuple(float(x) for x in cd[i].center), bool(m.tp[k])) for k, i in enumerate(m.order)
            ]
        if rig is not None:
            m = greedy_match(cd, cg, DUPLICATE_THRESHOLD)
            tps = [cd[i] for k, i in enumerate(m.order) if m.tp[k]]
            for k, i in enumerate(m.order):
                if m.tp[k]:
                    continue
                fp2 += 1
                if _is_ray_duplicate(cd[i], tps, rig, cfg.ray_angle_eps):
                    dup += 1
    return _SceneResult(ranked, {c: len(gt_by_c.get(c, [])) for c in classes}, dup, fp2)


def ray_duplicate_rate(dets: Sequence[Detection], gts: Sequence, rig, cfg: EvalConfig = EvalConfig()) -> float:
    """Fraction of false positives (2 m matching) lying, as seen from some camera,
    within ``ray_angle_eps`` of a same-class true positive's viewing ray.

    ``dets``/``gts`` belong to a single scene; see :func:`evaluate` for sets.
    """
    classes = sorted({d.class_id for d in dets} | {g.class_id for g in gts})
    r = _evaluate_scene(list(dets), list(gts), rig, classes, cfg)
    return r.dup_fp / r.fp_2m if r.fp_2m else 0.0


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RAYDN_THREADS", "1")))
    except ValueError:
        return 1


def evaluate(
    dets: Sequence[Detection],
    scenes: Sequence,
    cfg: EvalConfig = EvalConfig(),
    classes: Sequence[int] | None = None,
    gt_filter=None,
) -> EvalReport:
    """Evaluate detections against scenes (objects with ``scene_id``, ``rig``, ``boxes``).

    Scenes are processed independently (optionally in parallel, capped by
    RAYDN_THREADS) and reduced in scene_id order.
    """
    scenes = sorted(scenes, key=lambda s: s.scene_id)
    det_by_scene: dict[str, list] = {}
    for d in dets:
        det_by_scene.setdefault(d.scene_id, []).append(d)
    known = {s.scene_id for s in scenes}
    unknown = set(det_by_scene) - known
    if unknown:
        raise ValueError(f"detections reference unknown scenes: {sorted(unknown)[:3]}")

    def gts_of(s):
        return gt_filter(s) if gt_filter is not None else list(s.boxes)

    if classes is None:
        classes = sorted({d.class_id for d in dets} | {b.class_id for s in scenes for b in gts_of(s)})
    classes = list(classes)

    def run(s):
        return _evaluate_scene(det_by_scene.get(s.scene_id, []), gts_of(s), s.rig, classes, cfg)

    workers = worker_count()
    if workers > 1 and len(scenes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, scenes))
    else:
        results = [run(s) for s in scenes]

    report = EvalReport(classes=classes, thresholds=cfg.distance_thresholds)
    for t in cfg.distance_thresholds:
        pooled = []
        n_gt_all = 0
        for c in classes:
            rows = [row for r in results for row in r.ranked[(c, t)]]
            rows.sort(key=lambda row: (-row[0], *row[1]))
            tp = [row[2] for row in rows]
            n_gt = sum(r.n_gt[c] for r in results)
            report.ap[(c, t)] = average_precision(tp, n_gt, cfg.recall_points)
            report.curves[(c, t)] = pr_points(tp, n_gt)
            n_tp = int(sum(tp))
            report.counts[(c, t)] = {
                "n_gt": n_gt,
                "n_det": len(tp),
                "tp": n_tp,
                "fp": len(tp) - n_tp,
                "fn": n_gt - n_tp,
            }
            pooled.extend(rows)
            n_gt_all += n_gt
        pooled.sort(key=lambda row: (-row[0], *row[1]))
        report.curves[("all", t)] = pr_points([row[2] for row in pooled], n_gt_all)
    report.n_fp_dup_threshold = sum(r.fp_2m for r in results)
    report.n_ray_duplicates = sum(r.dup_fp for r in results)
    report.ray_duplicate_rate = (
        report.n_ray_duplicates / report.n_fp_dup_threshold if report.n_fp_dup_threshold else 0.0
    )
    return report


def _f(x) -> str:
    return "nan" if x is None else f"{x:.6f}"


METRIC_COLUMNS = ["class_id", "threshold", "ap", "n_gt", "n_det", "tp", "fp", "fn"]
SUMMARY_COLUMNS = ["metric", "value"]
CURVE_COLUMNS = ["class_id", "threshold", "recall", "precision"]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path, text):
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_report(report: EvalReport, path) -> list[str]:
    """Write metrics.csv, summary.csv, pr_curves.csv, pr_curves.svg and class_ap.svg into ``path``."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {path}: {exc.strerror or exc}") from exc
    metric_rows = []
    for c in report.classes:
        for t in report.thresholds:
            cnt = report.counts.get((c, t), {})
            metric_rows.append(
                [c, _f(t), _f(report.ap.get((c, t)))]
                + [cnt.get(k, 0) for k in ("n_gt", "n_det", "tp", "fp", "fn")]
            )
    summary_rows = []
    if report.classes:
        summary_rows = [
            ["mAP", _f(report.mean_ap)],
            ["ray_duplicate_rate", _f(report.ray_duplicate_rate)],
            ["fp_at_2m", report.n_fp_dup_threshold],
            ["ray_duplicates", report.n_ray_duplicates],
        ]
        for c, v in report.per_class_ap().items():
            summary_rows.append([f"ap_class_{c}", _f(v)])
    curve_rows = []
    for c in list(report.classes) + (["all"] if report.classes else []):
        for t in report.thresholds:
            rec, prec = report.curves.get((c, t), (np.array([]), np.array([])))
            curve_rows.extend([c, _f(t), _f(r), _f(p)] for r, p in zip(rec, prec))
    files = {
        "metrics.csv": _csv_text(METRIC_COLUMNS, metric_rows),
        "summary.csv": _csv_text(SUMMARY_COLUMNS, summary_rows),
        "pr_curves.csv": _csv_text(CURVE_COLUMNS, curve_rows),
        "pr_curves.svg": svg.line_plot(
            [
                (f"d={t:g} m", *report.curves[("all", t)])
                for t in report.thresholds
                if ("all", t) in report.curves
            ],
            title="Precision-recall (all classes)",
            xlabel="recall",
            ylabel="precision",
        ),
        "class_ap.svg": svg.bar_chart(
            [(f"class {c}", v or 0.0) for c, v in report.per_class_ap().items()],
            title="Per-class AP",
        ),
    }
    written = []
    for name, text in files.items():
        p = os.path.join(path, name)
        _write(p, text)
        written.append(p)
    return written
