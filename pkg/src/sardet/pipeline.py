"""Training loop, scene-level inference and evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import detector, evalkit
from .errors import ParameterError
from .nncore import SGD, Model, ModelConfig, build_model, cosine_lr
from .suites import scene_labels

log = logging.getLogger(__name__)

# scores below this never become detections; keeps NMS and ROC sweeps small
MIN_SCORE = 0.01


@dataclass
class TrainConfig:
    size: str = "S"
    crop: int = 128
    n_classes: int = 0
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_epochs: float = 1.0
    objectness_prior: float = 0.02   # initial sigmoid of the objectness logit
    augment: bool = True             # flips plus a random global phase
    train_stride: int | None = None  # defaults to the crop size
    seed: int = 0
    loss: detector.LossWeights = field(default_factory=detector.LossWeights)

    def model_config(self):
        return ModelConfig(self.size, n_classes=self.n_classes, crop=self.crop)


def stack_inputs(crops, scale=1.0):
    x = np.empty((len(crops), 2, crops[0].crop, crops[0].crop), dtype=np.float32)
    for i, c in enumerate(crops):
        x[i, 0] = c.image.data.real
        x[i, 1] = c.image.data.imag
    if scale != 1.0:
        x *= np.float32(scale)
    return x


def input_scale(crops):
    """Reciprocal RMS of the training inputs."""
    acc = sum(float(np.mean(np.abs(c.image.data.astype(np.complex128)) ** 2)) for c in crops)
    rms = math.sqrt(acc / len(crops) / 2.0)
    return 1.0 / rms if rms > 0 else 1.0


def _flip(v, s):
    return min(max(s - 1 - v, 0.0), s - 1e-3)


def augment_batch(x, n_classes, labels, rng):
    """Random range/azimuth flips and a global phase rotation per crop."""
    n, _, s, _ = x.shape
    out = np.empty_like(x)
    new_targets = []
    for i in range(n):
        xi = x[i]
        labs = labels[i]
        if rng.random() < 0.5:
            xi = xi[:, :, ::-1]
            labs = [lab.moved(_flip(lab.x, s) - lab.x, 0) for lab in labs]
        if rng.random() < 0.5:
            xi = xi[:, ::-1, :]
            labs = [lab.moved(0, _flip(lab.y, s) - lab.y) for lab in labs]
        phi = rng.uniform(0, 2 * np.pi)
        c, sn = np.float32(np.cos(phi)), np.float32(np.sin(phi))
        out[i, 0] = c * xi[0] - sn * xi[1]
        out[i, 1] = sn * xi[0] + c * xi[1]
        new_targets.append(detector.encode_targets(labs, s, n_classes))
    return out, detector.stack_targets(new_targets)


def init_head_prior(model: Model, prior: float):
    model.head.bias.data[2] = np.float32(detector.logit(prior))


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_f1: float
    threshold: float
    seconds: float


def train(cfg: TrainConfig, train_crops, val_scenes=None, model=None, start_epoch=0,
          scale=None, on_epoch=None):
    """SGD training; returns ``(model, history, scale)``.

    ``val_scenes`` is a list of scene crop lists used for the per-epoch
    validation F1 and threshold. ``model`` and ``start_epoch`` resume a run.
    """
    if not train_crops:
        raise ParameterError("no training crops")
    if train_crops[0].crop != cfg.crop:
        raise ParameterError(f"dataset crop {train_crops[0].crop} does not match model crop "
                             f"{cfg.crop}")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = build_model(cfg.model_config(), seed=cfg.seed)
        init_head_prior(model, cfg.objectness_prior)
    scale = input_scale(train_crops) if scale is None else scale
    x_all = stack_inputs(train_crops, scale)
    labels = [c.labels for c in train_crops]
    opt = SGD(model, cfg.lr, cfg.momentum, cfg.weight_decay)
    n = len(train_crops)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    warm = int(cfg.warmup_epochs * steps_per_epoch)
    # fast-forward the RNG and schedule when resuming
    for _ in range(start_epoch):
        rng.permutation(n)
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            step = epoch * steps_per_epoch + b
            lr = cosine_lr(cfg.lr, step, total)
            if step < warm:
                lr *= (step + 1) / warm
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            if cfg.augment:
                xb, tg = augment_batch(x_all[idx], cfg.n_classes, [labels[i] for i in idx], rng)
            else:
                xb = x_all[idx]
                tg = detector.stack_targets([detector.encode_targets(labels[i], cfg.crop,
                                                                     cfg.n_classes) for i in idx])
            logits = model.forward(xb, "train")
            loss, grad = detector.detection_loss(logits, tg, cfg.loss, reduction="mean")
            grads = model.backward(grad.astype(np.float32))
            opt.step(grads, lr)
            losses.append(loss)
        val_f1, thr = (math.nan, math.nan)
        if val_scenes:
            thr, rep = validate(model, val_scenes, scale)
            val_f1 = rep.f1_30
        rec = EpochLog(epoch + 1, float(np.mean(losses)), val_f1, thr, time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d loss %.4f val_f1 %.4f threshold %.2f (%.1fs)", rec.epoch, rec.loss,
                 rec.val_f1, rec.threshold, rec.seconds)
        if on_epoch:
            on_epoch(rec, model)
    return model, history, scale


# ------------------------------------------------------------------ inference

def predict_logits(model, crops, scale, batch=32):
    fwd = (lambda b: model.forward(b, "eval")) if isinstance(model, Model) else model.forward
    out = []
    for i in range(0, len(crops), batch):
        out.append(fwd(stack_inputs(crops[i:i + batch], scale)))
    return np.concatenate(out)


def scene_detections(model, crops, scale, min_score=MIN_SCORE, logits=None):
    """Decode every crop of one scene, merge in global coordinates and
    run one NMS pass over the whole scene."""
    logits = predict_logits(model, crops, scale) if logits is None else logits
    dets = []
    for c, z in zip(crops, logits):
        dets.extend(detector.decode(z, c.origin, min_score))
    return detector.nms(dets)


def group_by_scene(crops):
    scenes = {}
    for c in crops:
        scenes.setdefault(c.scene_id, []).append(c)
    return [scenes[k] for k in sorted(scenes)]


def tn_proxy(scenes):
    n_crops = sum(len(s) for s in scenes)
    grid = scenes[0][0].crop // detector.CELL
    n_labels = sum(len(c.labels) for s in scenes for c in s)
    return evalkit.tn_proxy(n_crops, grid, n_labels)


def choose_threshold(scene_dets, scenes):
    """Post-NMS ROC over the validation scenes, then the lower of the
    Youden and min-distance thresholds."""
    pairs = [(d, scene_labels(s)) for d, s in zip(scene_dets, scenes)]
    if sum(len(lab) for _, lab in pairs) == 0:
        raise ParameterError("validation scenes hold no labels; cannot pick a threshold")
    return detector.threshold_from_roc(evalkit.roc(pairs, tn=tn_proxy(scenes)))


def score_scenes(scene_dets, scenes, threshold, n_classes=0):
    """Per-scene reports and their pooled total at ``threshold``."""
    rows = []
    for dets, crops in zip(scene_dets, scenes):
        kept = [d for d in dets if d.score >= threshold]
        rows.append((crops[0].scene_id, evalkit.evaluate(kept, scene_labels(crops), n_classes)))
    return rows, evalkit.pool(r for _, r in rows)


def validate(model, val_scenes, scale, n_classes=None):
    dets = [scene_detections(model, s, scale) for s in val_scenes]
    n_classes = val_scenes[0][0].n_classes if n_classes is None else n_classes
    thr = choose_threshold(dets, val_scenes)
    return thr, score_scenes(dets, val_scenes, thr, n_classes)[1]


def evaluate_model(model, test_scenes, scale, threshold, n_classes=None):
    dets = [scene_detections(model, s, scale) for s in test_scenes]
    n_classes = test_scenes[0][0].n_classes if n_classes is None else n_classes
    rows, total = score_scenes(dets, test_scenes, threshold, n_classes)
    return rows, total, dets


def train_metadata(cfg: TrainConfig, history, scale, threshold, extra=None):
    meta = {"epochs": len(history) and history[-1].epoch, "seed": cfg.seed,
            "threshold": threshold, "input_scale": scale,
            "train_config": {k: v for k, v in asdict(cfg).items() if k != "loss"},
            "loss_weights": asdict(cfg.loss),
            "history": [asdict(h) for h in history]}
    meta.update(extra or {})
    return meta


@dataclass
class RunResult:
    model: object
    history: list
    scale: float
    threshold: float
    val_report: object
    test_rows: list
    test_report: object
    test_detections: list


def fit_and_evaluate(cfg: TrainConfig, data, on_epoch=None, fixed_threshold=None):
    """Train on ``data``'s train split, pick the threshold on its val split
    and score the test split. ``data`` is a ``SuiteData``."""
    train_crops, _ = data.crops("train", cfg.crop, cfg.train_stride)
    val = group_by_scene(data.crops("val", cfg.crop)[0])
    test = group_by_scene(data.crops("test", cfg.crop)[0])
    model, history, scale = train(cfg, train_crops, val, on_epoch=on_epoch)
    thr, val_rep = validate(model, val, scale)
    if fixed_threshold is not None:
        thr = fixed_threshold
    rows, total, dets = evaluate_model(model, test, scale, thr)
    return RunResult(model, history, scale, thr, val_rep, rows, total, dets)
