"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--tokens 50000] [--states 8] [--repeat 3]

Prints one row per (kernel, backend) with the best wall time and the
speed-up of the compiled backend.
"""
import argparse
import time

import numpy as np

from sparsepos import kernels


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def make_inputs(tokens, J, seed=0, mean_len=20):
    rng = np.random.default_rng(seed)
    lengths = []
    while sum(lengths) < tokens:
        lengths.append(int(rng.integers(mean_len // 2, 3 * mean_len // 2 + 1)))
    lengths[-1] -= sum(lengths) - tokens
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    trans = rng.dirichlet(np.ones(J), size=J + 1)
    log_obs = np.log(rng.dirichlet(np.ones(J), size=tokens))
    return np.log(trans[J]).copy(), np.ascontiguousarray(np.log(trans[:J])), np.ascontiguousarray(log_obs), offsets


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tokens", type=int, default=50_000)
    ap.add_argument("--states", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--slots", type=int, default=20_000, help="dual variables rows for the projection")
    args = ap.parse_args(argv)

    backends = [b for b in ("compiled", "python") if b in kernels.BACKENDS]
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")
    log_start, log_tt, log_obs, offsets = make_inputs(args.tokens, args.states)
    rng = np.random.default_rng(1)
    lam = np.ascontiguousarray(rng.exponential(2.0, size=(args.slots, args.states)))
    block_offsets = np.unique(np.concatenate([[0], rng.integers(1, args.slots, size=args.slots // 40),
                                              [args.slots]])).astype(np.int64)

    jobs = {
        "forward_backward": lambda k: k.forward_backward(log_start, log_tt, log_obs, offsets, False),
        "forward_backward+pairwise": lambda k: k.forward_backward(log_start, log_tt, log_obs, offsets, True),
        "viterbi": lambda k: k.viterbi(log_start, log_tt, log_obs, offsets),
        "project_blocks": lambda k: k.project_blocks(lam, block_offsets, 5.0),
    }
    print(f"tokens={args.tokens} states={args.states} sentences={len(offsets) - 1} "
          f"slots={args.slots} blocks={len(block_offsets) - 1} repeat={args.repeat}")
    print(f"{'kernel':<28}{'backend':<10}{'seconds':>10}{'speed-up':>10}")
    for name, job in jobs.items():
        times = {}
        for b in backends:
            impl = kernels.get_backend(b)
            times[b] = best_time(lambda: job(impl), args.repeat)
        for b in backends:
            speed = times["python"] / times[b] if "python" in times and b == "compiled" else 1.0
            print(f"{name:<28}{b:<10}{times[b]:>10.4f}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
