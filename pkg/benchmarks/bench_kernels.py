"""Compare the compiled and pure-Python Rainflow kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-``repeat`` wall time per kernel and backend, and checks
that both backends return the same answers.
"""
import argparse
import sys
import timeit

import numpy as np

from cyclemarket import _kernels_py

try:
    from cyclemarket import _kernels_ext
except ImportError:
    _kernels_ext = None


def _profiles(n, T, seed=0):
    rng = np.random.default_rng(seed)
    return [np.concatenate(([0.5], rng.uniform(0, 1, T - 1), [0.5])) for _ in range(n)]


def _cases():
    profiles = _profiles(2000, 24)
    grid_args = (np.array([12.0, 8.0, 10.0, 9.0]), 1.0, 0.0, 0.0, np.inf,
                 1.0, 1.0, 0.5, -0.5, 0.5, 0.02, 1e-9)
    return [
        ("rainflow_edges x2000 (T=24)",
         lambda k: [k.rainflow_edges(x, 1e-9) for x in profiles],
         lambda r: [(n, e.tolist()) for n, e in r]),
        ("grid_search T=4 step 0.02",
         lambda k: k.grid_search(*grid_args),
         lambda r: (round(r[0], 12), np.round(r[1], 12).tolist(), r[2])),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _kernels_ext is None:
        print("compiled extension not built; only the Python backend is available")
    backends = [("python", _kernels_py)] + ([("cython", _kernels_ext)] if _kernels_ext else [])
    print(f"{'kernel':<32}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    ok = True
    for label, fn, key in _cases():
        times, answers = [], []
        for _, mod in backends:
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
            answers.append(key(fn(mod)))
        speed = f"{times[0] / times[1]:>9.1f}x" if len(times) == 2 else ""
        print(f"{label:<32}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + speed)
        if len(answers) == 2 and answers[0] != answers[1]:
            print(f"  MISMATCH between backends on {label}")
            ok = False
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
