"""Pure-Python kernels. Reference behaviour for the compiled versions."""
from __future__ import annotations

import hashlib
import struct

import numpy as np

NO_NONCE = -1


def leading_zero_bits(digest: bytes) -> int:
    n = 0
    for byte in digest:
        if byte == 0:
            n += 8
            continue
        return n + 8 - byte.bit_length()
    return n


def pow_search(prefix: bytes, difficulty: int, start: int = 0, limit: int = 1 << 64) -> int:
    """Lowest nonce in ``[start, limit)`` whose header digest meets ``difficulty``."""
    if difficulty <= 0:
        return start if start < limit else NO_NONCE
    full, rem = divmod(difficulty, 8)
    mask = (0xFF << (8 - rem)) & 0xFF
    base = hashlib.sha256(prefix)
    pack = struct.Struct(">Q").pack
    for nonce in range(start, limit):
        h = base.copy()
        h.update(pack(nonce))
        d = h.digest()
        if d[:full] == bytes(full) and (rem == 0 or d[full] & mask == 0):
            return nonce
    return NO_NONCE


def search_tree(w, u, enc_lo, enc_hi, left, right, rel_tol):
    """Prune-and-descend over a pre-order tree held in flat arrays.

    A node is rejected when some trapdoor row puts both its encrypted
    vertices strictly on the outer side. Returns ``(hit_leaves, visited)``
    with leaves in ascending node order.
    """
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    frontier = np.array([0], dtype=np.int64)
    hits = []
    visited = 0
    while frontier.size:
        visited += frontier.size
        lo = enc_lo[frontier]
        hi = enc_hi[frontier]
        x_lo = lo @ w.T
        x_hi = hi @ w.T
        out_lo = x_lo < -rel_tol * (np.abs(lo) @ u.T)
        out_hi = x_hi < -rel_tol * (np.abs(hi) @ u.T)
        alive = frontier[~np.any(out_lo & out_hi, axis=1)]
        is_leaf = left[alive] < 0
        hits.append(alive[is_leaf])
        inner = alive[~is_leaf]
        frontier = np.concatenate([left[inner], right[inner]])
    found = np.sort(np.concatenate(hits)) if hits else np.empty(0, dtype=np.int64)
    return found.astype(np.int64), visited
