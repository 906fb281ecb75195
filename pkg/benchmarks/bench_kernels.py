"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--code-size 200000] [--rows 20000]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from natlm import _pykernels

try:
    from natlm import _speedups
except ImportError:
    _speedups = None


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--code-size", type=int, default=200_000, help="bytes of random bytecode to decode")
    ap.add_argument("--rows", type=int, default=20_000, help="store rows to score")
    ap.add_argument("--dim", type=int, default=131)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    code = rng.integers(0, 256, size=args.code_size, dtype=np.uint8).tobytes()
    matrix = rng.normal(size=(args.rows, args.dim))
    query = rng.normal(size=args.dim)

    cases = {
        "decode": (lambda k: k.decode(code)),
        "score_rows": (lambda k: k.score_rows(matrix, query, 0.7, 0.3)),
    }
    print(f"{'kernel':<12} {'python (ms)':>12} {'cython (ms)':>12} {'speedup':>8}")
    for name, call in cases.items():
        py = best_of(lambda: call(_pykernels), args.repeat)
        if _speedups is None:
            print(f"{name:<12} {py * 1e3:>12.2f} {'n/a':>12} {'-':>8}")
            continue
        cy = best_of(lambda: call(_speedups), args.repeat)
        print(f"{name:<12} {py * 1e3:>12.2f} {cy * 1e3:>12.2f} {py / cy:>7.1f}x")
    if _speedups is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
