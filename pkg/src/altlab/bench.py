"""Wall-clock benchmarking with warm-up, plus artifact size accounting."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np


@dataclass
class BenchRecord:
    method: str
    median_s: float
    iqr_s: float
    bytes_on_disk: int
    queries: int

    def as_dict(self) -> dict:
        return {"method": self.method, "median_s": self.median_s,
                "iqr_s": self.iqr_s, "bytes_on_disk": self.bytes_on_disk,
                "queries": self.queries}


def measure_latencies(fn, inputs, warmup: int = 5, repeats: int = 100) -> np.ndarray:
    """Per-call wall-clock seconds for `fn(input)`, cycling through `inputs`.
    The first `warmup` calls are excluded from the returned samples."""
    if repeats < 1:
        raise ValueError("need at least one timed repeat")
    n = len(inputs)
    for i in range(warmup):
        fn(inputs[i % n])
    samples = np.empty(repeats)
    for i in range(repeats):
        arg = inputs[i % n]
        t0 = time.perf_counter()
        fn(arg)
        samples[i] = time.perf_counter() - t0
    return samples


def summarize(samples: np.ndarray) -> tuple[float, float]:
    """(median, interquartile range) of latency samples."""
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return float(med), float(q3 - q1)


def artifact_bytes(paths) -> int:
    """Total on-disk size of the given files."""
    return sum(os.path.getsize(p) for p in paths)


def bench_compare(methods: dict[str, tuple], queries, warmup: int = 5,
                  repeats: int = 100) -> list[BenchRecord]:
    """Compare callables on the same query stream.

    `methods` maps a name to (callable, artifact_paths). Each callable takes
    one query observation. Latency medians are over `repeats` timed calls
    after `warmup` untimed ones.
    """
    if not queries:
        raise ValueError("no queries given")
    records = []
    for name, (fn, paths) in methods.items():
        samples = measure_latencies(fn, queries, warmup=warmup, repeats=repeats)
        med, iqr = summarize(samples)
        records.append(BenchRecord(method=name, median_s=med, iqr_s=iqr,
                                   bytes_on_disk=artifact_bytes(paths),
                                   queries=repeats))
    return records
