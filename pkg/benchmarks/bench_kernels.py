"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scenario drift45]

Each kernel is timed on a few representative shapes; the optional scenario
run times a whole ``run_scenario`` call with each backend.
"""

import argparse
import timeit

import numpy as np

from adaptkv import _backend, numerics
from adaptkv.config import load_config, shipped_scenario
from adaptkv.harness import run_scenario


def cases(g):
    tall = g.standard_normal((512, 32))
    basis = g.standard_normal((32, 8))
    square = np.triu(g.standard_normal((32, 32)))
    logits = g.standard_normal((32, 1024))
    yield "householder_qr 512x32", lambda k: k.householder_qr(tall)
    yield "householder_qr 32x8", lambda k: k.householder_qr(basis)
    yield "jacobi_svd 32x32", lambda k: k.jacobi_svd_square(square, 100, 1e-12)
    yield "softmax 32x1024 causal", lambda k: k.masked_softmax_rows(logits, 0.17, 992)
    yield "project_rows 512x32 @ 32x8", lambda k: k.project_rows(tall, basis)


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scenario", default=None, help="also time a shipped scenario, e.g. drift45")
    args = ap.parse_args()

    found = _backend.available_backends()
    if "compiled" not in found:
        print("compiled extension not built; only the fallback is available")
    names = [n for n in ("compiled", "python") if n in found]
    g = np.random.default_rng(0)

    print(f"{'kernel':<30}" + "".join(f"{n:>14}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label, fn in cases(g):
        times = [best_of(lambda: fn(found[n]), args.repeat) for n in names]
        line = f"{label:<30}" + "".join(f"{t * 1e6:>11.1f} us" for t in times)
        if len(times) == 2:
            line += f"{times[1] / times[0]:>11.1f}x"
        print(line)

    if args.scenario:
        cfg = load_config(shipped_scenario(args.scenario))
        previous = numerics.backend()
        for n in names:
            numerics.set_backend(n)
            t = min(timeit.repeat(lambda: run_scenario(cfg), number=1, repeat=max(1, args.repeat // 2)))
            print(f"scenario {args.scenario} [{n}]: {t:.2f} s")
        numerics.set_backend(previous)


if __name__ == "__main__":
    main()
