"""Compare the compiled and pure-Python kernels on the default scenario.

    python benchmarks/bench_kernel.py [--end-time 300] [--repeat 3]

Both kernels consume the same plan; results are checked for equality
before timings are reported.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from olapsim import kernel
from olapsim.config import parse
from olapsim.runner import build_plan


def best_of(fn, plan, repeat):
    times, result = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn(plan)
        times.append(time.perf_counter() - t0)
    return result, min(times), statistics.median(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--end-time", type=float, default=300.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--policy", default="flow_weighted")
    args = ap.parse_args(argv)

    if kernel.compiled_simulate is None:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation`")
        return 1
    plan = build_plan(parse(f"[routing]\npolicy = {args.policy}\n[run]\nend_time = {args.end_time}\n"))
    py, py_best, py_med = best_of(kernel.python_simulate, plan, args.repeat)
    cy, cy_best, cy_med = best_of(kernel.compiled_simulate, plan, args.repeat)
    same = all(np.array_equal(getattr(py, f), getattr(cy, f)) for f in ("arrivals", "busy", "proc_sum", "qlen"))

    n = py.total_events
    print(f"scenario: default, policy={args.policy}, end_time={args.end_time:g}s, {n} events")
    print(f"{'backend':<8} {'best s':>9} {'median s':>9} {'events/s':>12}")
    for name, best, med in (("python", py_best, py_med), ("cython", cy_best, cy_med)):
        print(f"{name:<8} {best:9.3f} {med:9.3f} {n / best:12,.0f}")
    print(f"speed-up {py_best / cy_best:.1f}x, results identical: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
