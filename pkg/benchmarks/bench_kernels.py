"""Compiled vs pure-Python kernels.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --difficulty 14 --points 16384 --dims 2,4,8

Times pow_search and search_tree on identical inputs with both backends,
checks the outputs agree, and prints a small table with the speedup.
"""
import argparse
import statistics
import sys
import time

import numpy as np

from iotledger import _kernels_py
from iotledger.aspe import REL_TOL, keygen, make_trapdoor
from iotledger.crypto import hash
from iotledger.geometry import HyperRect, anchors_for_rect
from iotledger.kdtree import build, encrypt_tree

try:
    from iotledger import _ckernels
except ImportError:
    _ckernels = None


def timed(fn, trials):
    out, times = None, []
    for _ in range(trials):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def bench_pow(mod, difficulty, blocks, trials):
    prefixes = [hash(b"bench" + bytes([i])) * 3 for i in range(blocks)]
    return timed(lambda: [mod.pow_search(p, difficulty) for p in prefixes], trials)


def bench_search(mod, l, n, queries, trials, seed=0):
    rng = np.random.default_rng([seed, l, n])
    pts = rng.uniform(0, 1, (n, l))
    key = keygen(l, seed)
    e = encrypt_tree(build(pts), key)
    side = 0.05 ** (1 / l)
    traps = []
    for i in range(queries):
        lo = rng.uniform(0, 1 - side, l)
        traps.append(make_trapdoor(key, anchors_for_rect(HyperRect(lo, lo + side)), i))

    def run():
        return [tuple(mod.search_tree(t.w, t.u, e.enc_lo, e.enc_hi, e.left, e.right, REL_TOL)[0]) for t in traps]
    return timed(run, trials)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--difficulty", type=int, default=12)
    ap.add_argument("--blocks", type=int, default=8, help="headers mined per pow trial")
    ap.add_argument("--points", type=int, default=4096)
    ap.add_argument("--dims", default="2,4,8")
    ap.add_argument("--queries", type=int, default=50)
    ap.add_argument("--trials", type=int, default=3)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; rebuild with pip install --no-build-isolation -e .", file=sys.stderr)
        return 1

    rows = []
    a, t_py = bench_pow(_kernels_py, args.difficulty, args.blocks, args.trials)
    b, t_c = bench_pow(_ckernels, args.difficulty, args.blocks, args.trials)
    assert a == b, "pow_search backends disagree"
    rows.append((f"pow_search d={args.difficulty} x{args.blocks}", t_py, t_c))
    for l in (int(x) for x in args.dims.split(",")):
        a, t_py = bench_search(_kernels_py, l, args.points, args.queries, args.trials)
        b, t_c = bench_search(_ckernels, l, args.points, args.queries, args.trials)
        assert a == b, f"search_tree backends disagree at l={l}"
        rows.append((f"search_tree l={l} n={args.points} x{args.queries}", t_py, t_c))

    print(f"{'kernel':<36}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for name, t_py, t_c in rows:
        print(f"{name:<36}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
