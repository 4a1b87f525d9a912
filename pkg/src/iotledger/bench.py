"""Timing suites for index construction, encryption, trapdoors and search."""
from __future__ import annotations

import csv
import gc
import statistics
import time
from collections import defaultdict

import numpy as np

from . import kernels
from .aspe import REL_TOL, keygen, make_trapdoor
from .geometry import HyperRect, anchors_for_rect
from .imt import build_imt
from .kdtree import build, encrypt_tree
from .records import CommLog

SUITES = ("kdtree-build", "kdtree-encrypt", "imt-build", "trapdoor", "search")
CSV_HEADER = ("suite", "l", "n", "trial", "wall_nanoseconds")
# Searches are timed on hypercube queries holding this fraction of the unit cube.
SEARCH_SELECTIVITY = 0.01
SEARCH_QUERIES = 20
TRAPDOOR_REPS = 50
# Trapdoors take microseconds, so each trial times many short batches.
TRAPDOOR_BATCHES = 30


class BenchError(ValueError):
    pass


def _points(rng, n, l):
    return rng.uniform(0.0, 1.0, size=(n, l))


def _timed(fn) -> int:
    t0 = time.perf_counter_ns()
    fn()
    return time.perf_counter_ns() - t0


def _cube_queries(rng, l, count):
    side = SEARCH_SELECTIVITY ** (1.0 / l)
    out = []
    for _ in range(count):
        lo = rng.uniform(0.0, 1.0 - side, size=l)
        out.append(HyperRect.from_bounds(zip(lo, lo + side)))
    return out


def run_suite(suite: str, dims, sizes, trials: int = 5, seed: int = 0):
    """Iterator of ``(suite, l, n, trial, wall_nanoseconds)`` rows."""
    if suite not in SUITES:
        raise BenchError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    if trials < 1 or not dims or not sizes or min(dims) < 1 or min(sizes) < 1:
        raise BenchError("dims, sizes and trials must be positive")
    return _rows(suite, dims, sizes, trials, seed)


def _rows(suite, dims, sizes, trials, seed):
    if suite == "trapdoor":
        yield from _trapdoor_rows(dims, sizes, trials, seed)
        return
    for l in dims:
        key = keygen(l, seed)
        for n in sizes:
            rng = np.random.default_rng([seed, l, n])
            pts = _points(rng, n, l)
            if suite in ("kdtree-encrypt", "imt-build", "search"):
                tree = build(pts)
                enc = encrypt_tree(tree, key)
            if suite == "imt-build":
                logs = [rng.bytes(CommLog.SIZE) for _ in range(n)]
            if suite == "search":
                imt = build_imt(enc, [b""] * n)
                queries = [make_trapdoor(key, anchors_for_rect(q), seed) for q in _cube_queries(rng, l, SEARCH_QUERIES)]
            for trial in range(trials):
                if suite == "kdtree-build":
                    ns = _timed(lambda: build(pts))
                elif suite == "kdtree-encrypt":
                    ns = _timed(lambda: encrypt_tree(tree, key))
                elif suite == "imt-build":
                    ns = _timed(lambda: build_imt(enc, logs))
                else:
                    def run_queries():
                        for tr in queries:
                            kernels.search_tree(tr.w, tr.u, imt.enc_lo, imt.enc_hi, imt.left, imt.right, REL_TOL)
                    ns = _timed(run_queries) // SEARCH_QUERIES
                yield suite, l, n, trial, ns


def _trapdoor_rows(dims, sizes, trials, seed):
    # Batches of all configurations are interleaved so clock drift hits them alike,
    # and each trial reports a configuration's median batch.
    cases = []
    for l in dims:
        key = keygen(l, seed)
        for n in sizes:
            pts = _points(np.random.default_rng([seed, l, n]), n, l)
            anchors = anchors_for_rect(HyperRect.from_bounds(zip(pts.min(axis=0), pts.max(axis=0))))
            cases.append((l, n, lambda key=key, anchors=anchors: [make_trapdoor(key, anchors, s)
                                                                   for s in range(TRAPDOOR_REPS)]))
    times = {}
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _, _, fn in cases:
            fn()  # warm-up
        for trial in range(trials):
            batches = defaultdict(list)
            for _ in range(TRAPDOOR_BATCHES):
                for l, n, fn in cases:
                    batches[l, n].append(_timed(fn))
            for (l, n), v in batches.items():
                times[l, n, trial] = int(statistics.median(v)) // TRAPDOOR_REPS
    finally:
        if enabled:
            gc.enable()
    for l, n, _ in cases:
        for trial in range(trials):
            yield "trapdoor", l, n, trial, times[l, n, trial]


def write_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row)


def medians(rows) -> dict[tuple[str, int, int], float]:
    groups = defaultdict(list)
    for suite, l, n, _, ns in rows:
        groups[(suite, l, n)].append(ns)
    return {k: statistics.median(v) for k, v in groups.items()}
