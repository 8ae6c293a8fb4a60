"""Real-time throughput requirement and the thread-pool inference benchmark."""

from __future__ import annotations

import inspect
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ParameterError

# acquisition stream of the reference Stripmap product
STRIPMAP_PRF = 1664.0
STRIPMAP_SAMPLES = 19950


def required_fps(prf, samples_per_line, crop) -> int:
    """Crops per second needed to keep up with the acquisition stream."""
    if crop <= 0 or prf <= 0 or samples_per_line <= 0:
        raise ParameterError("prf, samples_per_line and crop must all be > 0")
    # integer arithmetic where possible so exact boundaries round correctly
    num = prf * samples_per_line
    if float(num).is_integer():
        return -(-int(num) // (int(crop) * int(crop)))
    return math.ceil(num / (crop * crop))


@dataclass
class BenchReport:
    fps_mean: float
    fps_std: float
    fps_required: int
    threads: int
    crop: int
    model_size: str
    runs: list = field(default_factory=list)  # crops/s per run
    prep_seconds: float = 0.0
    # wall-clock marks: data preparation finished before the first timed run
    prep_end: float = 0.0
    timed_start: float = 0.0

    @property
    def passed(self) -> bool:
        return self.fps_mean >= self.fps_required

    def format(self) -> str:
        return (f"model = {self.model_size}\ncrop = {self.crop}\nthreads = {self.threads}\n"
                f"fps_required = {self.fps_required}\n"
                f"fps_measured = {self.fps_mean:.1f} +- {self.fps_std:.1f}\n"
                f"runs = {len(self.runs)}\npass = {self.passed}\n")

    def csv_row(self):
        return [self.model_size, self.crop, self.threads, self.fps_required,
                f"{self.fps_mean:.3f}", f"{self.fps_std:.3f}", int(self.passed)]


CSV_HEADER = ["model", "crop", "threads", "fps_required", "fps_mean", "fps_std", "pass"]


def _forward_fn(model):
    if callable(getattr(model, "forward", None)):
        params = inspect.signature(model.forward).parameters
        if "mode" in params:
            return lambda b: model.forward(b, "eval")
        return model.forward
    if callable(model):
        return model
    raise ParameterError("bench needs a model, a quantized model or a callable")


def bench(model, crop, threads=1, duration_s=5.0, runs=5, batch=8, seed=0,
          prf=STRIPMAP_PRF, samples_per_line=STRIPMAP_SAMPLES, size_tag=None):
    """Steady-state crops/s of the forward pass.

    Input crops are generated before timing starts; each run spreads
    batches across ``threads`` workers until ``duration_s / runs`` seconds
    have passed. BLAS is pinned to one thread per worker so scaling comes
    from the pool alone.
    """
    if duration_s < 1:
        raise ParameterError(f"duration_s must be >= 1, got {duration_s}")
    if threads < 1 or runs < 5:
        raise ParameterError("need threads >= 1 and at least 5 runs")
    fwd = _forward_fn(model)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    data = [rng.standard_normal((batch, 2, crop, crop)).astype(np.float32)
            for _ in range(threads)]
    prep_end = time.perf_counter()
    per_run = duration_s / runs
    fps = []
    timed_start = None

    def worker(x, deadline):
        n = 0
        while True:
            fwd(x)
            n += x.shape[0]
            if time.perf_counter() >= deadline:
                return n

    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=threads) as pool:
        fwd(data[0][:1])  # warm-up outside the timed window
        for _ in range(runs):
            start = time.perf_counter()
            if timed_start is None:
                timed_start = start
            futs = [pool.submit(worker, x, start + per_run) for x in data]
            done = sum(f.result() for f in futs)
            fps.append(done / (time.perf_counter() - start))
    tag = size_tag or getattr(getattr(model, "config", None), "size_tag", "?")
    return BenchReport(statistics.fmean(fps), statistics.stdev(fps),
                       required_fps(prf, samples_per_line, crop), threads, crop, tag, fps,
                       prep_end - t0, prep_end, timed_start)
