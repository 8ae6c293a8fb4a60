"""Grid targets, the coordinate/objectness/class loss, decoding, fixed-box
NMS and acceptance-threshold selection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .sarsim.types import TargetClass

CELL = 32
BOX_SIZE = 50.0
CLASS_NAMES = tuple(c.label for c in TargetClass)


def sigmoid(z):
    # split by sign so large |z| never overflows exp
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit(p, eps=1e-7):
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    return np.log(p / (1 - p))


@dataclass
class GridTarget:
    """Per-cell training targets; arrays are indexed [row, col]."""

    obj: np.ndarray
    tx: np.ndarray
    ty: np.ndarray
    cls: np.ndarray  # (n_classes, S, S) one-hot, empty first axis when n_classes == 0
    collisions: int = 0

    @property
    def grid(self):
        return self.obj.shape[0]


def encode_targets(labels, crop: int, n_classes: int = 0) -> GridTarget:
    """Assign each label to the 32-px cell holding its centre.

    Two labels in one cell: the larger amplitude wins; without amplitudes
    (NaN) the first in list order wins.
    """
    if crop % CELL:
        raise ParameterError(f"crop must be a multiple of {CELL}, got {crop}")
    s = crop // CELL
    obj = np.zeros((s, s), dtype=np.float32)
    tx = np.zeros((s, s), dtype=np.float32)
    ty = np.zeros((s, s), dtype=np.float32)
    cls = np.zeros((n_classes, s, s), dtype=np.float32)
    best = {}
    collisions = 0
    for lab in labels:
        if not (0 <= lab.x < crop and 0 <= lab.y < crop):
            raise ParameterError(f"label ({lab.x}, {lab.y}) outside a {crop}-px crop")
        col, row = int(lab.x // CELL), int(lab.y // CELL)
        amp = getattr(lab, "amplitude", math.nan)
        if (row, col) in best:
            collisions += 1
            prev = best[(row, col)]
            if not (amp > prev):  # NaN compares False: keep the earlier label
                continue
        best[(row, col)] = amp
        obj[row, col] = 1.0
        tx[row, col] = lab.x / CELL - col
        ty[row, col] = lab.y / CELL - row
        if n_classes:
            cls[:, row, col] = 0.0
            cls[int(lab.cls), row, col] = 1.0
    return GridTarget(obj, tx, ty, cls, collisions)


def stack_targets(targets):
    """Batch a list of GridTargets into arrays with a leading N axis."""
    return GridTarget(np.stack([t.obj for t in targets]), np.stack([t.tx for t in targets]),
                      np.stack([t.ty for t in targets]), np.stack([t.cls for t in targets]),
                      sum(t.collisions for t in targets))


@dataclass(frozen=True)
class LossWeights:
    lambda_coord: float = 5.0
    lambda_noobj: float = 0.5
    lambda_class: float = 1.0

    def __post_init__(self):
        if min(self.lambda_coord, self.lambda_noobj, self.lambda_class) <= 0:
            raise ParameterError("loss weights must be > 0")


def detection_loss(logits, target: GridTarget, weights: LossWeights = LossWeights(),
                   reduction="sum"):
    """Grid loss and its gradient with respect to ``logits``.

    ``logits`` is (3 + n_classes, S, S) or (N, 3 + n_classes, S, S) with
    channels (tx, ty, objectness, class...). Every prediction is squashed
    by a logistic before squared error; there is no box-size term.
    ``reduction="mean"`` divides loss and gradient by the batch size.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 3
    if single:
        z = z[None]
    obj = np.asarray(target.obj, dtype=np.float64)
    if obj.ndim == 2:
        obj = obj[None]
    tx = np.asarray(target.tx, dtype=np.float64).reshape(obj.shape)
    ty = np.asarray(target.ty, dtype=np.float64).reshape(obj.shape)
    n_classes = z.shape[1] - 3
    cls = np.asarray(target.cls, dtype=np.float64).reshape((obj.shape[0], -1) + obj.shape[1:])
    if z.shape[0] != obj.shape[0] or z.shape[2:] != obj.shape[1:] or cls.shape[1] != n_classes:
        raise ShapeError(f"logits {np.shape(logits)} do not match target grid {obj.shape} "
                         f"with {cls.shape[1]} classes")
    p = sigmoid(z)
    dp = p * (1.0 - p)
    noobj = 1.0 - obj
    grad = np.zeros_like(z)

    ex, ey = p[:, 0] - tx, p[:, 1] - ty
    loss = weights.lambda_coord * np.sum(obj * (ex * ex + ey * ey))
    grad[:, 0] = weights.lambda_coord * obj * 2 * ex * dp[:, 0]
    grad[:, 1] = weights.lambda_coord * obj * 2 * ey * dp[:, 1]

    pc = p[:, 2]
    loss += np.sum(obj * (pc - 1.0) ** 2) + weights.lambda_noobj * np.sum(noobj * pc * pc)
    grad[:, 2] = (obj * 2 * (pc - 1.0) + weights.lambda_noobj * noobj * 2 * pc) * dp[:, 2]

    if n_classes:
        ek = p[:, 3:] - cls
        loss += weights.lambda_class * np.sum(obj[:, None] * ek * ek)
        grad[:, 3:] = weights.lambda_class * obj[:, None] * 2 * ek * dp[:, 3:]

    if reduction == "mean":
        loss /= z.shape[0]
        grad /= z.shape[0]
    elif reduction != "sum":
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    return float(loss), (grad[0] if single else grad)


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    score: float
    cls: int = 0

    @property
    def box(self):
        h = BOX_SIZE / 2
        return (self.x - h, self.y - h, self.x + h, self.y + h)

    @property
    def class_name(self):
        return CLASS_NAMES[self.cls]


def decode(logits, crop_origin=(0, 0), threshold=0.5):
    """Detections for every cell with objectness >= ``threshold``.

    ``logits`` is (3 + n_classes, S, S) for a single crop; positions come
    back in scene pixels given the crop origin (row, col).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold}")
    z = np.asarray(logits, dtype=np.float64)
    p = sigmoid(z[:3])
    rows, cols = np.nonzero(p[2] >= threshold)
    r0, c0 = crop_origin
    classes = (np.argmax(z[3:, rows, cols], axis=0) if z.shape[0] > 3
               else np.zeros(rows.size, dtype=int))
    return [Detection(float(c0 + (c + p[0, r, c]) * CELL), float(r0 + (r + p[1, r, c]) * CELL),
                      float(p[2, r, c]), int(k))
            for r, c, k in zip(rows, cols, classes)]


def box_iou(a: Detection, b: Detection) -> float:
    w = max(0.0, BOX_SIZE - abs(a.x - b.x))
    h = max(0.0, BOX_SIZE - abs(a.y - b.y))
    inter = w * h
    return inter / (2 * BOX_SIZE * BOX_SIZE - inter)


def nms_order(detections):
    return sorted(range(len(detections)),
                  key=lambda i: (-detections[i].score, detections[i].x, detections[i].y))


def nms(detections, iou_threshold=0.5):
    """Greedy suppression on the fixed 50-px boxes.

    Visits detections by (score desc, x asc, y asc) and drops any whose IoU
    with an already kept box exceeds ``iou_threshold``.
    """
    if not detections:
        return []
    order = nms_order(detections)
    xs = np.array([detections[i].x for i in order])
    ys = np.array([detections[i].y for i in order])
    alive = np.ones(len(order), dtype=bool)
    keep = []
    area2 = 2 * BOX_SIZE * BOX_SIZE
    for k in range(len(order)):
        if not alive[k]:
            continue
        keep.append(detections[order[k]])
        rest = slice(k + 1, None)
        w = np.maximum(0.0, BOX_SIZE - np.abs(xs[rest] - xs[k]))
        h = np.maximum(0.0, BOX_SIZE - np.abs(ys[rest] - ys[k]))
        inter = w * h
        alive[rest] &= ~(inter / (area2 - inter) > iou_threshold)
    return keep


def _pick_threshold(thresholds, tpr, fpr):
    """Lower of the Youden-J and min-distance thresholds, floored to 0.01.
    Ties go to the higher threshold."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    fpr = np.asarray(fpr, dtype=np.float64)
    order = np.argsort(-thresholds, kind="stable")
    t, tp, fp = thresholds[order], tpr[order], fpr[order]
    j = tp - fp
    t_j = t[int(np.argmax(j))]
    dist = np.hypot(1.0 - tp, fp)
    t_d = t[int(np.argmin(dist))]
    # 1e-9 absorbs representation error such as 0.8 * 100 = 80.00000000000001
    return math.floor(min(t_j, t_d) * 100 + 1e-9) / 100


def select_threshold(scores, is_match, n_pos=None, n_neg=None):
    """Acceptance threshold from scored validation detections.

    ``is_match`` flags each detection as a true positive. The positive and
    negative totals default to the flag counts; pass ``n_pos`` (number of
    labels) and ``n_neg`` to include missed labels and true-negative proxies.
    Candidates are the observed scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(is_match, dtype=bool)
    if scores.shape != flags.shape:
        raise ShapeError("scores and match flags differ in length")
    n_pos = int(flags.sum()) if n_pos is None else n_pos
    n_neg = int((~flags).sum()) if n_neg is None else n_neg
    if n_pos <= 0 or n_neg <= 0 or scores.size == 0:
        warnings.warn("threshold selection needs positive and negative samples; using 0.5",
                      stacklevel=2)
        return 0.5
    cands = np.unique(scores)
    # counts of scores >= t for every candidate t
    tp_sorted = np.sort(scores[flags])
    fp_sorted = np.sort(scores[~flags])
    tp = tp_sorted.size - np.searchsorted(tp_sorted, cands, side="left")
    fp = fp_sorted.size - np.searchsorted(fp_sorted, cands, side="left")
    return _pick_threshold(cands, tp / n_pos, fp / n_neg)


def threshold_from_roc(points):
    """Same selection rule applied to ``evalkit.roc`` output."""
    if not points:
        warnings.warn("empty ROC; using threshold 0.5", stacklevel=2)
        return 0.5
    t, tpr, fpr = zip(*points)
    return _pick_threshold(t, tpr, fpr)


def format_detections(detections) -> str:
    return "".join(f"{d.x:.3f} {d.y:.3f} {d.score:.6f} {d.class_name}\n" for d in detections)


def write_detections(detections, path):
    Path(path).write_text(format_detections(detections))


def read_detections(path):
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4 or parts[3] not in CLASS_NAMES:
            raise FormatError(f"line {lineno}: expected 'x y score class_name'", path)
        out.append(Detection(float(parts[0]), float(parts[1]), float(parts[2]),
                             CLASS_NAMES.index(parts[3])))
    return out
