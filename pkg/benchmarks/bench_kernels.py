"""Compiled versus pure-Python HMM kernels.

Times each recursion on random scaled inputs, then one full E-step on a
simulated dataset, for every available backend::

    python benchmarks/bench_kernels.py --T 5000 --N 4 --repeat 5
"""
import argparse
import time

import numpy as np

from dpmle import kernels
from dpmle.em import e_step
from dpmle.scenarios import ScenarioConfig, simulate
from dpmle.selection import random_init


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_inputs(T, N, rng):
    P = rng.uniform(0.05, 1.0, (T, N))
    g = rng.dirichlet(np.ones(N) * 2.0, size=N)
    G = np.broadcast_to(g, (T, N, N))
    delta = np.full(N, 1.0 / N)
    return P, G, delta


def bench(T, N, repeat, seed=0):
    rng = np.random.default_rng(seed)
    P, G, delta = kernel_inputs(T, N, rng)
    w = rng.normal(size=N)
    sim = simulate(ScenarioConfig(1, T=T, seed=seed))
    params = random_init(sim.obs, N, ("gamma",), np.random.default_rng(seed), True)
    rows = []
    for name in kernels.available_backends():
        k = kernels.get_backend(name)
        alpha, logc = k.forward(P, G, delta)
        beta = k.backward(P, G, logc)
        cases = {
            "forward": lambda: k.forward(P, G, delta),
            "backward": lambda: k.backward(P, G, logc),
            "xi_sum": lambda: k.xi_sum(alpha, beta, P, G, logc),
            "reward_pairs": lambda: k.reward_pairs(alpha, beta, P, G, logc, w),
            "viterbi": lambda: k.viterbi(np.log(P), np.log(G), np.log(delta)),
            "e_step": lambda: e_step(sim.obs, params, backend=name),
        }
        for case, fn in cases.items():
            rows.append((case, name, best_of(fn, repeat)))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=5000)
    ap.add_argument("--N", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rows = bench(args.T, args.N, args.repeat)
    times = {(c, b): s for c, b, s in rows}
    backends = kernels.available_backends()
    print(f"T={args.T} N={args.N} best of {args.repeat} (ms)")
    print(f"{'kernel':<14}" + "".join(f"{b:>10}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for case in dict.fromkeys(c for c, _, _ in rows):
        line = f"{case:<14}" + "".join(f"{1e3 * times[case, b]:>10.2f}" for b in backends)
        if "cython" in backends and "python" in backends:
            line += f"{times[case, 'python'] / times[case, 'cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
