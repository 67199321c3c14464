"""Timing harness: monotonic-clock stage measurements with a machine
fingerprint so numbers can be compared across runs and backends."""

import platform
import sys
import time

import numpy as np

from . import backend
from .errors import InvariantError


def environment_fingerprint(threads=None):
    cpu = platform.processor() or ""
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.lower().startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "cpu": cpu or "unknown",
        "threads": backend.thread_count(threads),
        "backend": backend.active_name(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


def measure(fn, warmup=2, iters=10):
    """Run fn warmup+iters times; statistics cover only the timed iters.

    Returns {mean_ms, p50_ms, p95_ms, iterations}. The clock is
    perf_counter_ns, so wall-time sleeps are measured faithfully.
    """
    if iters < 1:
        raise InvariantError("measure needs at least one iteration")
    if warmup < 0:
        raise InvariantError("warmup cannot be negative")
    for _ in range(warmup):
        fn()
    samples = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter_ns()
        fn()
        samples[i] = (time.perf_counter_ns() - t0) / 1e6
    return {
        "mean_ms": float(samples.mean()),
        "p50_ms": float(np.percentile(samples, 50)),
        "p95_ms": float(np.percentile(samples, 95)),
        "iterations": int(iters),
    }


class TimingReport:
    """Named stage timings plus the environment they were taken in."""

    def __init__(self, threads=None):
        self.stages = {}
        self.environment = environment_fingerprint(threads)

    def run(self, name, fn, warmup=2, iters=10):
        self.stages[name] = measure(fn, warmup=warmup, iters=iters)
        return self.stages[name]

    def add(self, name, stats):
        self.stages[name] = dict(stats)

    def as_dict(self):
        return {"environment": dict(self.environment), "stages": {k: dict(v) for k, v in self.stages.items()}}
