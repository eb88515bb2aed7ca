"""Wall-clock timing harness: unmeasured warm-up runs, then measured trials."""
from __future__ import annotations

import time
from dataclasses import replace
from typing import Callable

import numpy as np

from . import optimize


def time_trials(job: Callable[[], object], warmup: int = 1, trials: int = 5,
                clock: Callable[[], float] = time.perf_counter):
    """Run ``job`` ``warmup`` times untimed, then ``trials`` timed runs.

    Returns ``(seconds per trial, result of the last trial)``.
    """
    if warmup < 0 or trials < 1:
        raise ValueError("need warmup >= 0 and trials >= 1")
    for _ in range(warmup):
        job()
    times, result = [], None
    for _ in range(trials):
        start = clock()
        result = job()
        times.append(clock() - start)
    return times, result


def run_bench(spec, config: optimize.TrainConfig, dataset, batch_sizes, unrolls,
              warmup: int = 1, trials: int = 5, clock=time.perf_counter) -> list[dict]:
    """Time a full training job for every (batch size, unroll) cell."""
    rows = []
    for bs in batch_sizes:
        for unroll in unrolls:
            cfg = replace(config, batch_size=int(bs), unroll=int(unroll))

            def job():
                _, metrics = optimize.train(spec, cfg, dataset)
                return metrics[-1]["loss"] if metrics else float("nan")

            times, loss = time_trials(job, warmup, trials, clock)
            rows.append({"batch_size": int(bs), "unroll": int(unroll), "trials": trials,
                         "warmup": warmup, "mean_s": float(np.mean(times)),
                         "std_s": float(np.std(times)), "final_loss": loss})
    return rows


def format_report(rows: list[dict]) -> str:
    head = f"{'batch':>6} {'unroll':>6} {'time (s)':>20} {'final loss':>12}"
    lines = [head]
    for r in rows:
        cell = f"{r['mean_s']:.3f} ± {r['std_s']:.3f}"
        lines.append(f"{r['batch_size']:>6} {r['unroll']:>6} {cell:>20} {r['final_loss']:>12.6g}")
    return "\n".join(lines)
