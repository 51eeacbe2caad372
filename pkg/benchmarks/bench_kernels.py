"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from regional_oc import kernels
from regional_oc.hjb import solve_grid
from regional_oc.kernels import ArcProgram
from regional_oc.lift import build
from regional_oc.problem import bundled_problem


def _arc_case(M=20, S=4):
    prob = bundled_problem("refraction")
    prog = ArcProgram.for_arc(build(prob, "1-2").arcs[0], prob.iface)
    rng = np.random.default_rng(0)
    V = rng.uniform(-2, 2, size=M * prog.m)
    W = rng.uniform(0.05, 1.5, size=M)
    return prog, np.array([0.0, -1.0]), V, W, S


def cases(name):
    backend = kernels.get_backend(name)
    prog, y0, V, W, S = _arc_case()
    Y = backend.shoot_arc(prog, y0, V, W, S)[0]
    tram = bundled_problem("tramway_long")
    return {
        "shoot_arc (M=20, S=4)": lambda: backend.shoot_arc(prog, y0, V, W, S),
        "node_jacobians (M=20, S=4)": lambda: backend.node_jacobians(prog, Y, V, W, S),
        "hjb solve (tramway, h=0.05)": lambda: solve_grid(tram, (-1, 3, -2, 2), 0.05, 0.1, backend=name),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        fast = cases("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run pip install -e . first")
    slow = cases("python")
    print(f"{'kernel':32s} {'cython [ms]':>12s} {'python [ms]':>12s} {'speed-up':>9s}")
    for key in fast:
        n = 20 if "hjb" not in key else 1
        tc = min(timeit.repeat(fast[key], number=n, repeat=args.repeat)) / n
        tp = min(timeit.repeat(slow[key], number=n, repeat=args.repeat)) / n
        print(f"{key:32s} {1e3 * tc:12.3f} {1e3 * tp:12.3f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
