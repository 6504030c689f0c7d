"""Compare the numba and numpy ground kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints one CSV row per (kernel, workload, backend) with the best wall
time over the repeats and the max deviation between the two backends.
"""
import argparse
import time

import numpy as np

from ldjt import kernels, oracle
from ldjt.cli import builtin_path
from ldjt.model import ground, ground_cardinalities, load_model, unroll


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def enum_workloads():
    gex = load_model(builtin_path("gex.model"))
    hmm = load_model(builtin_path("hmm_dynamic.model"))
    yield "gex static (2^14)", gex
    yield "hmm unroll T=3 (2^20)", unroll(hmm, 3)


def ve_workloads():
    dyn = load_model(builtin_path("gex_dynamic.model"))
    yield "gex unroll T=2", unroll(dyn, 2)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or LDJT_NUMBA=0); nothing to compare")
    print("kernel,workload,backend,seconds,max_dev")
    for name, m in enum_workloads():
        res = {}
        for backend in ("numba", "numpy"):
            oracle.oracle_marginals(m, backend=backend)  # warm-up / jit
            res[backend] = _best(lambda: oracle.oracle_marginals(m, backend=backend)[1], args.repeat)
        dev = float(np.max(np.abs(res["numba"][1] / res["numba"][1].sum(1, keepdims=True)
                                  - res["numpy"][1] / res["numpy"][1].sum(1, keepdims=True))))
        for backend, (sec, _) in res.items():
            print(f"enumerate,{name},{backend},{sec:.6f},{dev:.2e}")
    for name, m in ve_workloads():
        cards = ground_cardinalities(m)
        fs = ground(m)
        order = oracle.min_fill_order(fs)

        def run(backend):
            cur = list(fs)
            for v in order:
                cur = oracle.oracle_eliminate(cur, v, cards, backend=backend)
            return float(np.prod([float(f.table) for f in cur]))

        res = {}
        for backend in ("numba", "numpy"):
            run(backend)
            res[backend] = _best(lambda: run(backend), args.repeat)
        dev = abs(res["numba"][1] - res["numpy"][1]) / abs(res["numpy"][1])
        for backend, (sec, _) in res.items():
            print(f"ground_ve,{name},{backend},{sec:.6f},{dev:.2e}")


if __name__ == "__main__":
    main()
