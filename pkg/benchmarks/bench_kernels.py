"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from fedrag import kernels
from fedrag.envs import random_policy, tabular_random


def cases(backend):
    rng = np.random.default_rng(0)
    mdp = tabular_random(rng, 8, 3, 0.99)
    pi = random_policy(rng, 8, 3)
    er = np.sum(pi.probs * mdp.reward, axis=1)
    D = rng.uniform(0, 1, (8, 8))
    D = 0.5 * (D + D.T)
    V = rng.uniform(0, 1, 8)
    big = tabular_random(rng, 64, 3, 0.99)
    pi_big = random_policy(rng, 64, 3)
    er_big = np.sum(pi_big.probs * big.reward, axis=1)
    D_big = np.zeros((64, 64))
    state = np.array([0.0, 0.0, np.pi, 0.0])

    return {
        "rag_sweep n=8 m=3": lambda: backend.rag_sweep(mdp.next_state, er, pi.probs, D, 0.99),
        "rag_sweep n=64 m=3": lambda: backend.rag_sweep(big.next_state, er_big, pi_big.probs, D_big, 0.99),
        "value_sweep n=8 m=3": lambda: backend.value_sweep(mdp.next_state, mdp.reward, pi.probs, V, 0.99),
        "cartpole_advance x8": lambda: backend.cartpole_advance(state.copy(), 0.3, 1.0, 1.0, 0.1, 9.8, 0.01, 8, 2.4),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=2000)
    args = parser.parse_args(argv)

    if kernels.compiled_backend is None:
        print("compiled extension not built; timing the fallback only")
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["compiled"] = kernels.compiled_backend

    timings = {}
    for name, backend in backends.items():
        for label, fn in cases(backend).items():
            best = min(timeit.repeat(fn, number=args.number, repeat=args.repeat)) / args.number
            timings[(label, name)] = best

    print(f"{'kernel':<22}{'python us':>12}{'compiled us':>14}{'speedup':>10}")
    for label in cases(kernels.python_backend):
        py = timings[(label, "python")] * 1e6
        if "compiled" in backends:
            c = timings[(label, "compiled")] * 1e6
            print(f"{label:<22}{py:>12.2f}{c:>14.2f}{py / c:>9.1f}x")
        else:
            print(f"{label:<22}{py:>12.2f}{'-':>14}{'-':>10}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
