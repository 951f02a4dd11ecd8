"""Compare the compiled and pure-Python stepping kernels.

Times homogeneous propagation and energy-recording runs on a range of mesh
sizes with both backends, checks that they agree, and prints one row per case.

Usage::

    python3 benchmarks/bench_kernels.py [--cells 64 256 1024] [--steps 2000] [--degree 0]
"""

import argparse
import time

import numpy as np

from dampedwave import kernels
from dampedwave.assembly import DampingField, assemble_operators
from dampedwave.mesh import build_mesh
from dampedwave.timestepper import SchemeParams, State, Stepper


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(n_cells, degree, n_steps, repeat, seed=0):
    ops = assemble_operators(build_mesh(n_cells), degree, DampingField.constant(1.0))
    stepper = Stepper(ops, SchemeParams.with_lambda(1.0 / n_cells, 1.0))
    rng = np.random.default_rng(seed)
    init = State(rng.standard_normal(ops.dim_V), rng.standard_normal(ops.dim_Q))

    rows = []
    for kernel in ("propagate", "advance"):
        times, results = {}, {}
        for name in kernels.AVAILABLE:
            if kernel == "propagate":
                def call(name=name):
                    results[name] = np.concatenate(stepper.propagate(init.u, init.p, n_steps, backend=name))
            else:
                def call(name=name):
                    results[name] = stepper.run(init, orders=(0, 1, 2), n_steps=n_steps,
                                                backend=name).energies[0].values
            times[name] = _best_of(call, repeat)
        ref = results["python"]
        dev = max(float(np.max(np.abs(r - ref)) / max(np.max(np.abs(ref)), 1e-300))
                  for r in results.values())
        rows.append((kernel, n_cells, ops.dim_V + ops.dim_Q, times, dev))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cells", type=int, nargs="+", default=[64, 256, 1024])
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--degree", type=int, default=0)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    print(f"backends: {', '.join(kernels.AVAILABLE)} (active: {kernels.BACKEND})")
    if "cython" not in kernels.AVAILABLE:
        print("compiled kernels not built; only the Python timings are shown")
    cols = "  ".join(f"{b + ' [s]':>12}" for b in kernels.AVAILABLE)
    print(f"{'kernel':>10}  {'cells':>6}  {'dofs':>6}  {cols}  {'speedup':>8}  {'rel dev':>8}")
    for n in args.cells:
        for kernel, cells, dofs, times, dev in bench_case(n, args.degree, args.steps, args.repeat):
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            tcols = "  ".join(f"{times[b]:12.4f}" for b in kernels.AVAILABLE)
            print(f"{kernel:>10}  {cells:6d}  {dofs:6d}  {tcols}  {speed:8.1f}  {dev:8.1e}")


if __name__ == "__main__":
    main()
