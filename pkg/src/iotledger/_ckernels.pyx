# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: PoW nonce scan and encrypted tree traversal."""
import numpy as np

from libc.stdint cimport uint64_t, int64_t
from libc.string cimport memcpy

cdef extern from "openssl/sha.h":
    ctypedef struct SHA256_CTX:
        pass
    int SHA256_Init(SHA256_CTX *c) nogil
    int SHA256_Update(SHA256_CTX *c, const void *data, size_t n) nogil
    int SHA256_Final(unsigned char *md, SHA256_CTX *c) nogil

NO_NONCE = -1


cdef inline bint meets(const unsigned char *d, int full, unsigned char mask) nogil:
    cdef int i
    for i in range(full):
        if d[i] != 0:
            return False
    return mask == 0 or (d[full] & mask) == 0


def pow_search(bytes prefix, int difficulty, uint64_t start=0, limit=1 << 64):
    """Lowest nonce in ``[start, limit)`` whose header digest meets ``difficulty``."""
    cdef uint64_t stop = <uint64_t>min(limit, (1 << 64) - 1)
    cdef bint inclusive = limit >= (1 << 64)
    if difficulty <= 0:
        return start if start < limit else NO_NONCE
    cdef int full = difficulty // 8
    cdef unsigned char mask = (0xFF << (8 - difficulty % 8)) & 0xFF if difficulty % 8 else 0
    cdef SHA256_CTX base, ctx
    cdef unsigned char digest[32]
    cdef unsigned char tail[8]
    cdef const unsigned char *p = prefix
    cdef uint64_t nonce = start
    cdef int b
    cdef bint found = False
    cdef size_t plen = len(prefix)
    with nogil:
        SHA256_Init(&base)
        SHA256_Update(&base, p, plen)
        while nonce < stop or (inclusive and nonce == stop):
            for b in range(8):
                tail[b] = (nonce >> (56 - 8 * b)) & 0xFF
            memcpy(&ctx, &base, sizeof(SHA256_CTX))
            SHA256_Update(&ctx, tail, 8)
            SHA256_Final(digest, &ctx)
            if meets(digest, full, mask):
                found = True
                break
            if nonce == stop:
                break
            nonce += 1
    return nonce if found else NO_NONCE


cdef inline bint outside(const double[:, ::1] w, const double[:, ::1] u,
                         const double[:, ::1] v, Py_ssize_t node, Py_ssize_t row,
                         double rel_tol) nogil:
    cdef Py_ssize_t i
    cdef double x = 0.0, s = 0.0, a
    for i in range(w.shape[1]):
        a = v[node, i]
        x += w[row, i] * a
        s += u[row, i] * (a if a >= 0 else -a)
    return x < -rel_tol * s


def search_tree(w, u, enc_lo, enc_hi, left, right, double rel_tol):
    """Depth-first prune-and-descend; same contract as the pure-Python kernel."""
    cdef const double[:, ::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] LO = np.ascontiguousarray(enc_lo, dtype=np.float64)
    cdef const double[:, ::1] HI = np.ascontiguousarray(enc_hi, dtype=np.float64)
    cdef const int64_t[::1] L = np.ascontiguousarray(left, dtype=np.int64)
    cdef const int64_t[::1] R = np.ascontiguousarray(right, dtype=np.int64)
    cdef Py_ssize_t n = LO.shape[0]
    out_arr = np.empty(n, dtype=np.int64)
    stack_arr = np.empty(n + 1, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef int64_t[::1] stack = stack_arr
    cdef Py_ssize_t top = 0, nhits = 0, visited = 0, node, k
    cdef bint rejected
    if n == 0:
        return out_arr[:0], 0
    with nogil:
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            visited += 1
            rejected = False
            for k in range(W.shape[0]):
                if outside(W, U, LO, node, k, rel_tol) and outside(W, U, HI, node, k, rel_tol):
                    rejected = True
                    break
            if rejected:
                continue
            if L[node] < 0:
                out[nhits] = node
                nhits += 1
            else:
                stack[top] = R[node]
                stack[top + 1] = L[node]
                top += 2
    return out_arr[:nhits].copy(), visited
