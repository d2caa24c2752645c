"""Time the compiled and pure-Python kernel backends on the same inputs.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best wall time of each backend and the
speed-up, after checking that both backends return the same numbers.
"""
import argparse
import time

import numpy as np

from csasr import kernels


def _edit_inputs(rng, n_pairs=300, max_len=30):
    vocab = 12
    return [
        (list(rng.integers(0, vocab, size=int(rng.integers(1, max_len)))),
         list(rng.integers(0, vocab, size=int(rng.integers(1, max_len)))))
        for _ in range(n_pairs)
    ]


def _rnnt_inputs(rng, B=8, T=60, U=20):
    lp_b = np.log(rng.uniform(0.05, 1.0, size=(B, T, U + 1)))
    lp_e = np.log(rng.uniform(0.05, 1.0, size=(B, T, U)))
    t_lens = rng.integers(T // 2, T + 1, size=B)
    u_lens = rng.integers(U // 2, U + 1, size=B)
    return lp_b, lp_e, [int(t) for t in t_lens], [int(u) for u in u_lens]


def _ibm2_inputs(rng, n_pairs=400, n_src=80, n_tgt=80):
    src_len = rng.integers(3, 12, size=n_pairs)
    tgt_len = rng.integers(3, 12, size=n_pairs)
    src_ids = rng.integers(1, n_src + 1, size=src_len.sum())
    tgt_ids = rng.integers(0, n_tgt, size=tgt_len.sum())
    src_off = np.concatenate([[0], np.cumsum(src_len)])
    tgt_off = np.concatenate([[0], np.cumsum(tgt_len)])
    table = rng.uniform(0.1, 1.0, size=(n_src + 1, n_tgt))
    table /= table.sum(axis=1, keepdims=True)
    return src_ids, src_off, tgt_ids, tgt_off, table, 4.0, 0.08


def _best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=0, atol=1e-9)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    backends = kernels.available_backends()
    edit_pairs = _edit_inputs(rng)
    rnnt_args = _rnnt_inputs(rng)
    ibm2_args = _ibm2_inputs(rng)
    jobs = {
        "edit_ops": lambda m: [m.edit_ops(r, h) for r, h in edit_pairs],
        "rnnt_loglik_grad": lambda m: m.rnnt_loglik_grad(*rnnt_args),
        "ibm2_estep": lambda m: m.ibm2_estep(*ibm2_args),
    }
    names = sorted(backends)
    print(f"{'kernel':<18}" + "".join(f"{n + ' (s)':>14}" for n in names) + f"{'speed-up':>10}")
    for kernel, job in jobs.items():
        times, outs = {}, {}
        for n in names:
            times[n], outs[n] = _best_time(lambda: job(backends[n]), args.repeat)
        if len(names) > 1 and not _same(outs["python"], outs["cython"]):
            raise SystemExit(f"{kernel}: backends disagree")
        speed = f"{times['python'] / times['cython']:.1f}x" if "cython" in times else "n/a"
        print(f"{kernel:<18}" + "".join(f"{times[n]:>14.4f}" for n in names) + f"{speed:>10}")
    if "cython" not in backends:
        print("compiled backend not built; only the pure-Python fallback was timed")


if __name__ == "__main__":
    main()
