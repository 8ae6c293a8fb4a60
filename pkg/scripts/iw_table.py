"""Size x crop table on the IW suite (mean and spread over seeds).

    python scripts/iw_table.py --epochs 8 --out runs/iw_table.csv
"""

import argparse
import csv
import logging
import statistics

from sardet import pipeline
from sardet.suites import SuiteConfig, build_suite

# (size, crop, batch); training tiles overlap by half a crop
RUNS = (("S", 128, 16), ("S", 256, 16), ("M", 256, 8))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="iw_table.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    seeds = [int(s) for s in args.seeds.split(",")]
    suites = {s: build_suite(SuiteConfig.iw(seed=s)) for s in seeds}
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "crop", "seed", "threshold", "f1_30", "precision", "recall",
                    "ship_f1", "windmill_f1"])
        for size, crop, batch in RUNS:
            f1 = []
            for seed in seeds:
                cfg = pipeline.TrainConfig(size=size, crop=crop, n_classes=2, epochs=args.epochs,
                                           batch_size=batch, train_stride=crop // 2, seed=seed)
                rep = pipeline.fit_and_evaluate(cfg, suites[seed])
                t = rep.test_report
                w.writerow([size, crop, seed, f"{rep.threshold:.2f}", f"{t.f1_30:.4f}",
                            f"{t.precision:.4f}", f"{t.recall:.4f}",
                            f"{t.per_class['ship'].f1_30:.4f}",
                            f"{t.per_class['windmill'].f1_30:.4f}"])
                fh.flush()
                f1.append(t.f1_30)
            print(f"{size}@{crop}: F1_30 {statistics.fmean(f1):.3f} ± {statistics.pstdev(f1):.3f}")


if __name__ == "__main__":
    main()
