"""Compare the compiled and pure-Python assignment kernels.

Usage::

    python benchmarks/bench_assignment.py [--repeat 200] [--cycles 2000]

Times ``hungarian`` on scheduler-shaped cost matrices (m devices by 8 blocks)
for every available backend, then one short control-optimal trial per backend
to show what the kernel choice means end to end.
"""
import argparse
import time

import numpy as np

import ctrlsched.assignment as lsa
import ctrlsched.scheduler as sched
from ctrlsched.config import SimConfig
from ctrlsched.sim import run_trial


def time_kernel(backend, shape, repeat, rng):
    costs = [rng.uniform(-1.0, 0.0, size=shape) for _ in range(repeat)]
    start = time.perf_counter()
    for c in costs:
        lsa.hungarian(c, backend)
    return (time.perf_counter() - start) / repeat


def time_trial(backend, cycles):
    cfg = SimConfig().replace(devices=60, duration=cycles * 0.01)
    saved = sched.hungarian
    sched.hungarian = lambda cost: lsa.hungarian(cost, backend)
    try:
        start = time.perf_counter()
        run_trial(cfg)
        return time.perf_counter() - start
    finally:
        sched.hungarian = saved


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--cycles", type=int, default=2000)
    args = parser.parse_args(argv)

    backends = lsa.available_backends()
    print(f"default backend: {lsa.BACKEND}; available: {', '.join(backends)}")
    print(f"{'shape':>10} " + " ".join(f"{b + ' [us]':>14}" for b in backends) + "   speedup")
    for shape in [(8, 8), (25, 8), (60, 8), (8, 60), (200, 8)]:
        times = [time_kernel(b, shape, args.repeat, np.random.default_rng(0)) for b in backends]
        speed = f"{times[-1] / times[0]:8.1f}x" if len(times) > 1 else ""
        print(f"{str(shape):>10} " + " ".join(f"{t * 1e6:14.1f}" for t in times) + "  " + speed)

    print(f"\ncontrol-optimal trial, m=60, {args.cycles} cycles")
    for b in backends:
        print(f"  {b:>7}: {time_trial(b, args.cycles):.2f} s")


if __name__ == "__main__":
    main()
