"""Benchmark harness: sweeps sizes, partitions and methods, recording
model FLOPs, counted FLOPs, affinity-memory elements and median wall
time per configuration, as plot-ready CSV or JSON.
"""

import itertools
import json
import logging
import statistics
import time
from dataclasses import dataclass

from . import analysis, attention, flops, interlaced, tensor
from .errors import ParameterError

logger = logging.getLogger(__name__)

CSV_HEADER = "method,n,c,h,w,ph,pw,model_flops,counted_flops,affinity_elements,wall_time_ns,reps"

ABLATE_CSV_HEADER = "ph,pw,model_flops,affinity_elements,wall_time_ns,optimum"


@dataclass
class BenchConfig:
    sizes: list
    channels: int = 64
    batch: int = 1
    partitions: object = "auto"  # list of (p_h, p_w) pairs, or "auto"
    methods: tuple = ("sa", "issa")
    seed: int = 0
    repetitions: int = 5
    warmup: int = 2
    out: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ParameterError("repetitions must be >= 1")
        for m in self.methods:
            if m not in analysis.METHODS:
                raise ParameterError(f"unknown method {m!r}; expected one of {analysis.METHODS}")
        if self.fmt not in ("csv", "json"):
            raise ParameterError(f"format must be csv or json, got {self.fmt!r}")


@dataclass
class CostReport:
    method: str
    n: int
    c: int
    h: int
    w: int
    p_h: int
    p_w: int
    model_flops: int
    counted_flops: int
    affinity_elements: int
    wall_time_ns: int
    repetitions: int

    def as_row(self):
        return (
            f"{self.method},{self.n},{self.c},{self.h},{self.w},{self.p_h},{self.p_w},"
            f"{self.model_flops},{self.counted_flops},{self.affinity_elements},"
            f"{self.wall_time_ns},{self.repetitions}"
        )

    def as_dict(self):
        return {
            "method": self.method, "n": self.n, "c": self.c, "h": self.h, "w": self.w,
            "ph": self.p_h, "pw": self.p_w, "model_flops": self.model_flops,
            "counted_flops": self.counted_flops, "affinity_elements": self.affinity_elements,
            "wall_time_ns": self.wall_time_ns, "reps": self.repetitions,
        }


def _prepare(method, n, c, h, w, p_h, p_w, seed):
    """Seeded input + parameters + runner and per-item analytic models."""
    x = tensor.random_feature_map(n, c, h, w, tensor.make_rng(seed))
    prng = tensor.make_rng(seed + 1)
    if method == "sa":
        params = attention.init_attention_params(c, prng)
        run = lambda: attention.dense_sa_forward(x, params)
        model = analysis.sa_flops_model(h, w, c)
        mem = analysis.affinity_memory_model(h, w, method="sa")
    elif method == "sa-down2":
        params = attention.init_attention_params(c, prng)
        run = lambda: attention.downsampled_sa_forward(x, params, factor=2)
        model = analysis.downsampled_sa_flops_model(h, w, c, factor=2)
        mem = analysis.affinity_memory_model(h, w, method="sa-down2")
    elif method in ("issa", "issa-short-first"):
        spec = interlaced.build_partition(h, w, p_h, p_w)
        params = interlaced.init_issa_params(c, spec, prng)
        fwd = (
            interlaced.issa_forward_short_first
            if method == "issa-short-first"
            else interlaced.issa_forward
        )
        run = lambda: fwd(x, params)
        model = analysis.issa_flops_model(h, w, c, p_h, p_w)
        mem = analysis.affinity_memory_model(h, w, p_h, p_w, method="issa")
    else:
        raise ParameterError(f"unknown method {method!r}")
    return run, n * model, n * mem


def _time_one(run, warmup, repetitions):
    """Serialized timed runs with a monotonic clock; median wall time."""
    for _ in range(warmup):
        run()
    times = []
    counted = 0
    with flops.counting() as read:
        for _ in range(repetitions):
            flops.reset()
            t0 = time.perf_counter_ns()
            run()
            times.append(time.perf_counter_ns() - t0)
            counted = read()
    return counted, int(statistics.median(times))


def run_one(method, n, c, h, w, p_h, p_w, seed, repetitions=5, warmup=2):
    run, model, mem = _prepare(method, n, c, h, w, p_h, p_w, seed)
    counted, wall = _time_one(run, warmup, repetitions)
    return CostReport(method, n, c, h, w, p_h, p_w, model, counted, mem, wall, repetitions)


def run_sweep(cfg):
    """Execute a BenchConfig; incompatible partitions are skipped with a
    warning and do not fail the sweep."""
    reports = []
    for (h, w), method in itertools.product(cfg.sizes, cfg.methods):
        if method in ("issa", "issa-short-first"):
            if cfg.partitions == "auto":
                parts = [analysis.optimal_partition(h, w)]
            else:
                parts = cfg.partitions
        else:
            parts = [(0, 0)]
        for p_h, p_w in parts:
            try:
                reports.append(
                    run_one(method, cfg.batch, cfg.channels, h, w, p_h, p_w,
                            cfg.seed, cfg.repetitions, cfg.warmup)
                )
            except ParameterError as exc:
                logger.warning(
                    "skipping %s at %dx%d partition (%d, %d): %s", method, h, w, p_h, p_w, exc
                )
    return reports


def write_reports(reports, fh, fmt="csv"):
    if fmt == "csv":
        fh.write(CSV_HEADER + "\n")
        for r in reports:
            fh.write(r.as_row() + "\n")
    else:
        json.dump([r.as_dict() for r in reports], fh, indent=2)
        fh.write("\n")


@dataclass
class AblationRow:
    p_h: int
    p_w: int
    model_flops: int
    affinity_elements: int
    wall_time_ns: int
    optimum: bool

    def as_row(self):
        return (
            f"{self.p_h},{self.p_w},{self.model_flops},{self.affinity_elements},"
            f"{self.wall_time_ns},{int(self.optimum)}"
        )


def run_ablation(h, w, c, p_values=(4, 8, 16), seed=0, batch=1, repetitions=3, warmup=1):
    """Cost sweep over a grid of (p_h, p_w) pairs.

    Rows whose FLOP model attains the minimum over the swept grid carry
    the optimum flag (the exhaustive-search optimum whenever the grid
    contains it).
    """
    rows = []
    for p_h, p_w in itertools.product(p_values, p_values):
        if h % p_h or w % p_w:
            logger.warning("skipping partition (%d, %d): does not divide %dx%d", p_h, p_w, h, w)
            continue
        rep = run_one("issa", batch, c, h, w, p_h, p_w, seed, repetitions, warmup)
        rows.append(
            AblationRow(p_h, p_w, rep.model_flops, rep.affinity_elements,
                        rep.wall_time_ns, False)
        )
    if rows:
        best = min(r.model_flops for r in rows)
        for r in rows:
            r.optimum = r.model_flops == best
    return rows


def write_ablation(rows, fh):
    fh.write(ABLATE_CSV_HEADER + "\n")
    for r in rows:
        fh.write(r.as_row() + "\n")
