"""sardet command-line interface.

Exit codes: 0 success, 1 usage or parameter error, 2 data or format
error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import statistics
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import detector, evalkit, pipeline
from .config import ExperimentConfig
from .errors import FormatError, ParameterError, SardetError, ShapeError, StateError
from .nncore import build_model, load_checkpoint, save_checkpoint
from .quantbench import (CSV_HEADER, bench, calibrate, load_qcheckpoint, logit_deviation,
                         quantize, save_qcheckpoint)
from .quantbench.qcheckpoint import MAGIC as QMAGIC
from .sarsim import read_dataset, write_dataset
from .sarsim.types import TargetClass
from .suites import SPLITS, build_suite

log = logging.getLogger("sardet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


# ------------------------------------------------------------------ helpers

def _config(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config) if args.config else ExperimentConfig()


def _seeds(args, cfg):
    return [args.seed] if args.seed is not None else list(cfg.experiment.seeds)


def _out(args) -> Path:
    return Path(args.out)


def _claim(path: Path, force: bool):
    """Refuse to overwrite an existing non-empty output unless forced."""
    if path.exists() and (path.is_file() or any(path.iterdir())) and not force:
        raise ParameterError(f"{path} already exists; pass --force to overwrite")


def _split_dir(args, cfg, split):
    given = getattr(cfg.data, f"{split}_dir")
    return Path(given) if given else _out(args) / "data" / split


def _load_split(args, cfg, split, required=True):
    path = _split_dir(args, cfg, split)
    if not path.is_dir():
        if required:
            raise FormatError(f"no {split} dataset (run `sardet simulate` first)", path)
        return None
    crops = read_dataset(path)
    if not crops:
        raise FormatError(f"{split} dataset is empty", path)
    if crops[0].image.domain != cfg.domain:
        raise ParameterError(f"{split} data is in the {crops[0].image.domain.name} domain but "
                             f"mode {cfg.experiment.mode} expects {cfg.domain.name}")
    return crops


def _load_any_checkpoint(path):
    p = Path(path)
    if not p.is_file():
        raise FormatError("checkpoint not found", p)
    with open(p, "rb") as fh:
        magic = fh.read(4)
    if magic == QMAGIC:
        return load_qcheckpoint(p)
    return load_checkpoint(p)


def _class_counts(crops):
    counts = {c.label: 0 for c in TargetClass}
    for crop in crops:
        for lab in crop.labels:
            counts[TargetClass(int(lab.cls)).label] += 1
    return counts


def _mean_std(values):
    values = [v for v in values if v == v]  # drop NaN
    if not values:
        return float("nan"), float("nan")
    return statistics.fmean(values), (statistics.pstdev(values) if len(values) > 1 else 0.0)


# ------------------------------------------------------------------ commands

def cmd_simulate(args):
    cfg = _config(args)
    seed = _seeds(args, cfg)[0]
    root = _out(args) / "data"
    _claim(root, args.force)
    crop = args.crop or cfg.experiment.crop
    suite = cfg.suite_config(seed)
    data = build_suite(suite)
    lines = [f"mode = {suite.mode}", f"seed = {seed}", f"crop = {crop}",
             f"domain = {suite.domain.name.lower()}"]
    for split in SPLITS:
        stride = cfg.train_stride(crop) if split == "train" else None
        crops, dropped = data.crops(split, crop, stride)
        write_dataset(crops, root / split)
        counts = _class_counts(crops)
        lines += [f"{split}.scenes = {len(data.scenes[split])}", f"{split}.crops = {len(crops)}"]
        lines += [f"{split}.{name} = {n}" for name, n in counts.items()]
        lines.append(f"{split}.dropped_labels = {dropped}")
    text = "\n".join(lines) + "\n"
    (root / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    train_crops = _load_split(args, cfg, "train")
    val_crops = _load_split(args, cfg, "val", required=False)
    val = pipeline.group_by_scene(val_crops) if val_crops else None
    fixed = cfg.threshold_value()
    ckdir = _out(args) / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.limit:
        train_crops = train_crops[:args.limit]
    results = []
    for seed in _seeds(args, cfg):
        tc = cfg.train_config(seed)
        path = ckdir / f"{tc.size}{tc.crop}_seed{seed}.sdcp"
        model, start, scale, history = None, 0, None, []
        if args.resume:
            model, meta = load_checkpoint(args.resume, expect_config=tc.model_config())
            start = int(meta.get("epochs", 0))
            scale = meta.get("input_scale")
            history = [pipeline.EpochLog(**h) for h in meta.get("history", [])]
            if start >= tc.epochs:
                raise ParameterError(f"checkpoint already holds {start} epochs; raise "
                                     f"[train] epochs above {start} to resume")
        elif path.exists() and not args.force:
            raise ParameterError(f"{path} already exists; pass --force to overwrite")
        model, new_hist, scale = pipeline.train(tc, train_crops, val, model=model,
                                                start_epoch=start, scale=scale)
        history += new_hist
        threshold = fixed
        val_f1 = float("nan")
        if val:
            auto_thr, rep = pipeline.validate(model, val, scale)
            threshold = auto_thr if fixed is None else fixed
            val_f1 = rep.f1_30
        meta = pipeline.train_metadata(tc, history, scale, threshold,
                                       {"mode": cfg.experiment.mode, "val_f1": val_f1})
        save_checkpoint(model, path, meta)
        log.info("seed %d: val F1_30 %.4f threshold %s -> %s", seed, val_f1, threshold, path)
        results.append((seed, val_f1, threshold, path))
    mean, std = _mean_std([r[1] for r in results])
    lines = [f"seed {s}: val_f1_30 = {f:.4f} threshold = {t} checkpoint = {p}"
             for s, f, t, p in results]
    lines.append(f"val_f1_30 = {mean:.2f} ± {std:.2f} over {len(results)} seed(s)")
    text = "\n".join(lines) + "\n"
    (_out(args) / "train_summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def _resolve_threshold(args, cfg, meta, model, scale):
    if args.threshold is not None:
        return args.threshold
    fixed = cfg.threshold_value()
    if fixed is not None:
        return fixed
    if meta.get("threshold") is not None:
        return float(meta["threshold"])
    val_crops = _load_split(args, cfg, "val", required=False)
    if not val_crops:
        raise ParameterError("no threshold in the checkpoint, threshold policy is auto and no "
                             "validation set is available; pass --threshold")
    thr, _ = pipeline.validate(model, pipeline.group_by_scene(val_crops), scale)
    return thr


def cmd_eval(args):
    cfg = _config(args)
    model, meta = _load_any_checkpoint(args.checkpoint)
    if args.data:
        cfg.data.test_dir = args.data
    test = pipeline.group_by_scene(_load_split(args, cfg, "test"))
    scale = float(meta.get("input_scale", 1.0))
    thr = _resolve_threshold(args, cfg, meta, model, scale)
    rows, total, dets = pipeline.evaluate_model(model, test, scale, thr)
    dest = _out(args) / "eval" / Path(args.checkpoint).stem
    dest.mkdir(parents=True, exist_ok=True)
    for scene_dets, crops in zip(dets, test):
        kept = [d for d in scene_dets if d.score >= thr]
        detector.write_detections(kept, dest / f"detections_scene{crops[0].scene_id:04d}.txt")
    evalkit.write_scene_csv(rows, dest / "scenes.csv")
    text = evalkit.format_report(total, {"checkpoint": str(args.checkpoint), "threshold": thr,
                                         "scenes": len(test)})
    (dest / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_quantize(args):
    cfg = _config(args)
    model, meta = load_checkpoint(args.checkpoint)
    scale = float(meta.get("input_scale", 1.0))
    calib = _load_split(args, cfg, "train")[:args.calib]
    act = calibrate(model, pipeline.stack_inputs(calib, scale))
    qm = quantize(model, act)
    dest = _out(args) / "checkpoints" / (Path(args.checkpoint).stem + ".sdq8")
    dest.parent.mkdir(parents=True, exist_ok=True)
    _claim(dest, args.force)
    qmeta = dict(meta, calibration_crops=len(calib), source=str(args.checkpoint))
    save_qcheckpoint(qm, dest, qmeta)
    lines = [f"quantized = {dest}", f"calibration_crops = {len(calib)}"]
    test_crops = _load_split(args, cfg, "test", required=False)
    if test_crops:
        test = pipeline.group_by_scene(test_crops)
        thr = _resolve_threshold(args, cfg, meta, model, scale)
        _, f_total, _ = pipeline.evaluate_model(model, test, scale, thr)
        _, q_total, _ = pipeline.evaluate_model(qm, test, scale, thr)
        batch = pipeline.stack_inputs(test_crops[:16], scale)
        lines += [f"threshold = {thr:.2f}", f"float_f1_30 = {f_total.f1_30:.6f}",
                  f"int8_f1_30 = {q_total.f1_30:.6f}",
                  f"f1_delta = {q_total.f1_30 - f_total.f1_30:+.6f}",
                  f"logit_mean_abs_deviation = {logit_deviation(model, qm, batch):.6f}"]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    return EXIT_OK


def _bench_model(args, cfg):
    if args.checkpoint:
        model, _ = _load_any_checkpoint(args.checkpoint)
        crop = model.config.crop
    else:
        crop = args.crop or cfg.experiment.crop
        model = build_model(pipeline.TrainConfig(size=cfg.experiment.size, crop=crop)
                            .model_config(), seed=_seeds(args, cfg)[0])
    if hasattr(model, "stats_recorded") and not model.stats_recorded():
        log.warning("benchmarking an untrained model: batch-norm statistics come from one "
                    "random batch")
        rng = np.random.default_rng(0)
        model.forward(rng.standard_normal((2, 2, crop, crop)).astype(np.float32), "train")
    return model, crop


def cmd_bench(args):
    cfg = _config(args)
    model, crop = _bench_model(args, cfg)
    threads = [int(t) for t in args.sweep_threads.split(",")] if args.sweep_threads \
        else [args.threads]
    b = cfg.bench
    reports = [bench(model, crop, threads=t, duration_s=args.duration or b.duration, runs=b.runs,
                     batch=b.batch, prf=b.prf, samples_per_line=b.samples_per_line)
               for t in threads]
    for rep in reports:
        print(rep.format(), end="")
    if len(reports) > 1:
        base = reports[0].fps_mean
        for rep in reports[1:]:
            print(f"scaling {rep.threads}/{reports[0].threads} threads = "
                  f"{rep.fps_mean / base:.2f}x")
    if args.csv:
        path = Path(args.csv)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(CSV_HEADER)
            for rep in reports:
                w.writerow(rep.csv_row())
    return EXIT_OK


SWEEP_HEADER = ["size", "crop", "seeds", "f1_30_mean", "f1_30_std", "ship_f1_mean",
                "windmill_f1_mean", "precision_mean", "recall_mean"]


def cmd_sweep(args):
    cfg = _config(args)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    seeds = _seeds(args, cfg)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    _claim(path, args.force)
    suites = {seed: build_suite(cfg.suite_config(seed)) for seed in seeds}
    rows = []
    for size in cfg.sweep.sizes:
        for crop in cfg.sweep.crops:
            per_seed = []
            for seed in seeds:
                tc = cfg.train_config(seed, size=size.upper(), crop=crop)
                res = pipeline.fit_and_evaluate(tc, suites[seed],
                                                fixed_threshold=cfg.threshold_value())
                per_seed.append(res.test_report)
                log.info("%s@%d seed %d: test F1_30 %.4f", size, crop, seed,
                         res.test_report.f1_30)
            f1m, f1s = _mean_std([r.f1_30 for r in per_seed])
            pc = [r.per_class for r in per_seed]
            ship = _mean_std([p["ship"].f1_30 for p in pc if "ship" in p])[0]
            wind = _mean_std([p["windmill"].f1_30 for p in pc if "windmill" in p])[0]
            rows.append([size.upper(), crop, len(seeds), f"{f1m:.4f}", f"{f1s:.4f}",
                         f"{ship:.4f}", f"{wind:.4f}",
                         f"{statistics.fmean(r.precision for r in per_seed):.4f}",
                         f"{statistics.fmean(r.recall for r in per_seed):.4f}"])
            print(f"{size.upper()} {crop} F1_30 = {f1m:.2f} ± {f1s:.2f}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment config file")
    parser.add_argument("--seed", type=int, default=default,
                        help="run a single seed instead of the config's seed list")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else "runs",
                        help="output directory (default: runs)")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="BLAS / worker threads (default: 1)")
    parser.add_argument("--force", action="store_true",
                        default=argparse.SUPPRESS if suppress else False,
                        help="overwrite existing outputs")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(prog="sardet", description=__doc__.splitlines()[0])
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic scene suite")
    p.add_argument("--crop", type=int, help="tile size (default: config crop)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train one checkpoint per seed")
    p.add_argument("--epochs", type=int, help="override [train] epochs")
    p.add_argument("--limit", type=int, help="train on the first N crops only")
    p.add_argument("--resume", help="continue training from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on the test split")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="test dataset directory")
    p.add_argument("--threshold", type=float, help="override the acceptance threshold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantize", parents=[common], help="int8 post-training quantization")
    p.add_argument("checkpoint")
    p.add_argument("--calib", type=int, default=64, help="calibration crops (default: 64)")
    p.add_argument("--threshold", type=float, help="threshold for the parity check")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("bench", parents=[common], help="forward-pass throughput")
    p.add_argument("checkpoint", nargs="?", help="float or int8 checkpoint")
    p.add_argument("--crop", type=int, help="crop size when no checkpoint is given")
    p.add_argument("--duration", type=float, help="seconds across all runs")
    p.add_argument("--sweep-threads", help="comma-separated thread counts, e.g. 1,2,4")
    p.add_argument("--csv", help="append one row per thread count to this CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", parents=[common], help="size x crop table over seeds")
    p.add_argument("--epochs", type=int, help="override [train] epochs")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; we use 1
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("sardet: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (ParameterError, ShapeError, StateError) as exc:
        print(f"sardet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError) as exc:
        print(f"sardet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SardetError as exc:
        print(f"sardet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a bug in this package
        log.exception("internal error")
        print(f"sardet: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
