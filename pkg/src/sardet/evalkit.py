"""Centre-distance matching, F1 at 30 px, per-class scoring and ROC sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .sarsim.types import TargetClass

RADIUS = 30.0


@dataclass
class MatchResult:
    pairs: list  # (detection index, label index, distance)
    unmatched_detections: list
    unmatched_labels: list

    @property
    def tp(self):
        return len(self.pairs)

    @property
    def fp(self):
        return len(self.unmatched_detections)

    @property
    def fn(self):
        return len(self.unmatched_labels)


def _xy(items):
    if len(items) == 0:
        return np.zeros((0, 2))
    return np.array([(float(o.x), float(o.y)) for o in items])


def candidate_pairs(det_xy, lab_xy, radius=RADIUS):
    """All (distance, det, label) pairs within ``radius``, sorted by
    distance, then detection index, then label index."""
    det_xy = np.asarray(det_xy, dtype=np.float64).reshape(-1, 2)
    lab_xy = np.asarray(lab_xy, dtype=np.float64).reshape(-1, 2)
    if not len(det_xy) or not len(lab_xy):
        return np.zeros(0), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    d = np.hypot(det_xy[:, None, 0] - lab_xy[None, :, 0], det_xy[:, None, 1] - lab_xy[None, :, 1])
    i, j = np.nonzero(d <= radius)
    dist = d[i, j]
    order = np.lexsort((j, i, dist))
    return dist[order], i[order], j[order]


def _greedy(dist, di, lj, n_det, n_lab, det_ok=None):
    used_d = np.zeros(n_det, dtype=bool)
    used_l = np.zeros(n_lab, dtype=bool)
    pairs = []
    for d, i, j in zip(dist, di, lj):
        if used_d[i] or used_l[j] or (det_ok is not None and not det_ok[i]):
            continue
        used_d[i] = used_l[j] = True
        pairs.append((int(i), int(j), float(d)))
    return pairs, used_d, used_l


def match(detections, labels, radius=RADIUS) -> MatchResult:
    """Greedy nearest-first assignment of detections to labels."""
    if radius <= 0:
        raise ParameterError(f"radius must be > 0, got {radius}")
    dist, di, lj = candidate_pairs(_xy(detections), _xy(labels), radius)
    pairs, used_d, used_l = _greedy(dist, di, lj, len(detections), len(labels))
    return MatchResult(pairs, [int(i) for i in np.nonzero(~used_d)[0]],
                       [int(j) for j in np.nonzero(~used_l)[0]])


@dataclass
class ScoreReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1_30: float
    undefined: bool = False
    per_class: dict = field(default_factory=dict)  # class name -> ScoreReport

    def as_dict(self):
        out = {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
               "recall": self.recall, "f1_30": self.f1_30, "undefined": self.undefined}
        for name, rep in self.per_class.items():
            out[f"{name}_f1"] = rep.f1_30
        return out


def score_counts(tp, fp, fn) -> ScoreReport:
    if tp + fp + fn == 0:
        # nothing to find and nothing claimed: perfect by convention, flagged
        return ScoreReport(0, 0, 0, 1.0, 1.0, 1.0, undefined=True)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return ScoreReport(tp, fp, fn, p, r, f1)


def score(result: MatchResult) -> ScoreReport:
    return score_counts(result.tp, result.fp, result.fn)


def per_class_score(detections, labels, cls, radius=RADIUS) -> ScoreReport:
    """Score with both sides restricted to one class."""
    cls = int(TargetClass.parse(cls))
    dets = [d for d in detections if int(d.cls) == cls]
    labs = [lab for lab in labels if int(lab.cls) == cls]
    return score(match(dets, labs, radius))


def evaluate(detections, labels, n_classes=0, radius=RADIUS) -> ScoreReport:
    """Overall report plus per-class reports when ``n_classes`` is 2."""
    report = score(match(detections, labels, radius))
    if n_classes:
        report.per_class = {c.label: per_class_score(detections, labels, c, radius)
                            for c in TargetClass}
    return report


def exclude_near_shore(detections, labels, radius=RADIUS):
    """Drop labels flagged near-shore together with any detection within
    ``radius`` of one, so excluded targets count neither as misses nor as
    false alarms."""
    shore = [lab for lab in labels if getattr(lab, "near_shore", False)]
    if not shore:
        return list(detections), list(labels)
    sxy = _xy(shore)
    keep = [d for d in detections
            if np.min(np.hypot(sxy[:, 0] - d.x, sxy[:, 1] - d.y)) > radius]
    return keep, [lab for lab in labels if not getattr(lab, "near_shore", False)]


def pool(reports) -> ScoreReport:
    """Micro-average: sum counts across scenes, then score."""
    reports = list(reports)
    out = score_counts(sum(r.tp for r in reports), sum(r.fp for r in reports),
                       sum(r.fn for r in reports))
    names = sorted({n for r in reports for n in r.per_class})
    out.per_class = {n: pool([r.per_class[n] for r in reports if n in r.per_class])
                     for n in names}
    return out


def tn_proxy(n_crops, grid, n_labels):
    """Non-object grid cells across the evaluated crops."""
    return max(int(n_crops) * grid * grid - int(n_labels), 0)


def roc(scenes, radius=RADIUS, tn=None, thresholds=None):
    """ROC over one or more scenes.

    ``scenes`` is a list of (detections, labels) pairs; a single pair may
    also be passed. ``tn`` is the true-negative proxy (non-object grid
    cells); it defaults to zero, which makes FPR the false-discovery share.
    Candidates are the distinct observed scores plus 0 and 1. Returns
    (threshold, TPR, FPR) tuples in ascending threshold order.
    """
    if isinstance(scenes, tuple) and len(scenes) == 2 and not isinstance(scenes[0], tuple):
        scenes = [scenes]
    n_labels = sum(len(labs) for _, labs in scenes)
    if n_labels == 0:
        raise ParameterError("ROC is undefined without labels")
    tn = 0 if tn is None else int(tn)
    all_scores = np.array([d.score for dets, _ in scenes for d in dets], dtype=np.float64)
    if thresholds is None:
        thresholds = np.unique(np.concatenate([all_scores, [0.0, 1.0]]))
    thresholds = np.asarray(thresholds, dtype=np.float64)
    tp = np.zeros(len(thresholds), dtype=np.int64)
    fp = np.zeros(len(thresholds), dtype=np.int64)
    for dets, labs in scenes:
        scores = np.array([d.score for d in dets], dtype=np.float64)
        dist, di, lj = candidate_pairs(_xy(dets), _xy(labs), radius)
        for k, t in enumerate(thresholds):
            keep = scores >= t
            pairs, _, _ = _greedy(dist, di, lj, len(dets), len(labs), keep)
            tp[k] += len(pairs)
            fp[k] += int(keep.sum()) - len(pairs)
    out = []
    for t, a, b in zip(thresholds, tp, fp):
        denom = b + tn
        out.append((float(t), a / n_labels, b / denom if denom else 0.0))
    return out


REPORT_FIELDS = ("scene_id", "tp", "fp", "fn", "precision", "recall", "f1_30",
                 "ship_f1", "windmill_f1")


def format_report(report: ScoreReport, extra=None) -> str:
    lines = []
    for key, value in {**(extra or {}), **report.as_dict()}.items():
        if isinstance(value, float):
            value = f"{value:.6f}"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_scene_csv(rows, path):
    """``rows`` is a list of (scene_id, ScoreReport)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for scene_id, rep in rows:
            ship = rep.per_class.get("ship")
            wind = rep.per_class.get("windmill")
            w.writerow([scene_id, rep.tp, rep.fp, rep.fn, f"{rep.precision:.6f}",
                        f"{rep.recall:.6f}", f"{rep.f1_30:.6f}",
                        "" if ship is None else f"{ship.f1_30:.6f}",
                        "" if wind is None else f"{wind.f1_30:.6f}"])
