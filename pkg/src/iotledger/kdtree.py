"""Median-split kd-tree over digitized files, and its ASPE-encrypted form.

Trees are stored as flat pre-order arrays: node 0 is the root, and for an
internal node ``i`` the children are ``left[i]`` and ``right[i]`` (both -1 on
leaves). Internal nodes carry the cell cut from their parent at the median
plane; a leaf carries the degenerate box of its single point.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .aspe import AspeKey, encrypt_points
from .crypto import DIGEST_SIZE, ID_SIZE, derive
from .geometry import DimensionError, HyperRect, Point

LEAF, INTERNAL = 1, 0


# -- digitization ----------------------------------------------------------------

@dataclass(frozen=True)
class Attribute:
    name: str
    lo: float = 0.0
    hi: float = 1.0
    values: tuple[str, ...] | None = None  # set for categorical attributes

    @property
    def categorical(self) -> bool:
        return self.values is not None

    def code(self, value) -> float:
        if not self.categorical:
            return float(value)
        if isinstance(value, str):
            try:
                return float(self.values.index(value))
            except ValueError:
                raise ValueError(f"unknown value {value!r} for attribute {self.name!r}") from None
        code = int(value)
        if code != value or not 0 <= code < len(self.values):
            raise ValueError(f"unknown code {value!r} for attribute {self.name!r}")
        return float(code)

    def bounds(self) -> tuple[float, float]:
        if self.categorical:
            return 0.0, float(len(self.values) - 1)
        return self.lo, self.hi

    def normalize(self, value) -> float:
        lo, hi = self.bounds()
        if hi == lo:
            return 0.5
        return (self.code(value) - lo) / (hi - lo)


def digitize(file_attrs: Sequence, schema: Sequence[Attribute]) -> Point:
    if len(file_attrs) != len(schema):
        raise DimensionError(f"{len(file_attrs)} attributes for a {len(schema)}-attribute schema")
    return Point(tuple(a.normalize(v) for a, v in zip(schema, file_attrs)))


# -- plaintext tree ----------------------------------------------------------------

class KdNode(NamedTuple):
    id: bytes
    rect: HyperRect
    size: int
    children: tuple[int, int] | None
    leaf_payload: tuple[bytes, int] | None


@dataclass(eq=False)
class KdTree:
    dim: int
    lo: np.ndarray         # (N, l) float64
    hi: np.ndarray         # (N, l) float64
    size: np.ndarray       # (N,) int64
    left: np.ndarray       # (N,) int64, -1 on leaves
    right: np.ndarray      # (N,) int64, -1 on leaves
    ids: list[bytes]
    cipher_ref: list[bytes | None]
    log_ref: np.ndarray    # (N,) int64, -1 on internal nodes

    def __len__(self):
        return self.size.shape[0]

    @property
    def n_points(self) -> int:
        return int(self.size[0])

    def is_leaf(self, i: int) -> bool:
        return self.left[i] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    def node(self, i: int) -> KdNode:
        leaf = self.is_leaf(i)
        return KdNode(
            self.ids[i],
            HyperRect(Point(tuple(self.lo[i])), Point(tuple(self.hi[i]))),
            int(self.size[i]),
            None if leaf else (int(self.left[i]), int(self.right[i])),
            (self.cipher_ref[i], int(self.log_ref[i])) if leaf else None,
        )

    def height(self) -> int:
        depth = np.zeros(len(self), dtype=np.int64)
        for i in range(len(self)):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) + 1

    def to_bytes(self) -> bytes:
        return _serialize(self, self.lo, self.hi, None)


def gen_ids(seed: bytes, count: int) -> list[bytes]:
    """Counter-based node identifiers: the k-th id is derived from (seed, k)."""
    return [derive(b"genid", seed, k.to_bytes(8, "big"), size=ID_SIZE) for k in range(count)]


def build(points, payloads: Sequence[tuple[bytes, int]] | None = None, id_seed: bytes = b"") -> KdTree | None:
    """Build a balanced kd-tree; returns ``None`` for an empty point set.

    ``payloads[i]`` is the ``(cipher content address, log index)`` stored in
    the leaf of point ``i``; defaults to ``(zero address, i)``.
    """
    pts = np.asarray([p.coords if isinstance(p, Point) else p for p in points], dtype=np.float64)
    if pts.size == 0:
        return None
    if pts.ndim != 2:
        raise DimensionError("points must share one dimension")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinate")
    n, l = pts.shape
    if payloads is None:
        payloads = [(bytes(DIGEST_SIZE), i) for i in range(n)]
    if len(payloads) != n:
        raise ValueError("one payload per point required")
    if len({p[1] for p in payloads}) != n:
        raise ValueError("payload log indices must be unique")

    los, his, sizes, lefts, rights, crefs, lrefs = [], [], [], [], [], [], []

    def alloc(lo, hi, size):
        los.append(lo)
        his.append(hi)
        sizes.append(size)
        lefts.append(-1)
        rights.append(-1)
        crefs.append(None)
        lrefs.append(-1)
        return len(sizes) - 1

    def grow(idx, lo, hi, depth):
        if idx.size == 1:
            p = pts[idx[0]]
            u = alloc(p, p, 1)
            crefs[u], lrefs[u] = payloads[idx[0]]
            return u
        u = alloc(lo, hi, idx.size)
        j = depth % l
        order = idx[np.argsort(pts[idx, j], kind="stable")]
        k = (idx.size + 1) // 2
        cut = pts[order[k - 1], j]
        left_hi = hi.copy()
        left_hi[j] = cut
        right_lo = lo.copy()
        right_lo[j] = cut
        lefts[u] = grow(np.sort(order[:k]), lo, left_hi, depth + 1)
        rights[u] = grow(np.sort(order[k:]), right_lo, hi, depth + 1)
        return u

    grow(np.arange(n), pts.min(axis=0), pts.max(axis=0), 0)
    return KdTree(
        dim=l,
        lo=np.array(los),
        hi=np.array(his),
        size=np.array(sizes, dtype=np.int64),
        left=np.array(lefts, dtype=np.int64),
        right=np.array(rights, dtype=np.int64),
        ids=gen_ids(id_seed, len(sizes)),
        cipher_ref=crefs,
        log_ref=np.array(lrefs, dtype=np.int64),
    )


def max_height(n: int) -> int:
    return math.ceil(math.log2(n)) + 1 if n > 1 else 1


# -- encrypted tree ----------------------------------------------------------------

@dataclass(eq=False)
class EncKdTree:
    dim: int
    enc_lo: np.ndarray     # (N, l+1)
    enc_hi: np.ndarray     # (N, l+1)
    size: np.ndarray
    left: np.ndarray
    right: np.ndarray
    ids: list[bytes]
    cipher_ref: list[bytes | None]
    log_ref: np.ndarray

    def __len__(self):
        return self.size.shape[0]

    def is_leaf(self, i: int) -> bool:
        return self.left[i] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    def to_bytes(self) -> bytes:
        return _serialize(self, self.enc_lo, self.enc_hi, None)


def encrypt_tree(t: KdTree, k: AspeKey) -> EncKdTree:
    if t.dim != k.dim:
        raise DimensionError(f"tree dimension {t.dim} != key dimension {k.dim}")
    return EncKdTree(
        dim=t.dim,
        enc_lo=encrypt_points(k, t.lo),
        enc_hi=encrypt_points(k, t.hi),
        size=t.size.copy(),
        left=t.left.copy(),
        right=t.right.copy(),
        ids=list(t.ids),
        cipher_ref=list(t.cipher_ref),
        log_ref=t.log_ref.copy(),
    )


# -- wire format -------------------------------------------------------------------
# count(4) then per node in pre-order: id(16) kind(1) size(8) lo hi [cipher(32) log(8)] [hash(32)]
# where each vertex is l(4) + big-endian float64 values.

_NODE_HEAD = struct.Struct(">16sBQ")
_LEAF_TAIL = struct.Struct(">32sQ")


def vertex_bytes(rows: np.ndarray) -> list[bytes]:
    """Fixed-width encoding of every row of ``rows``."""
    prefix = struct.pack(">I", rows.shape[1] - 1)
    raw = np.ascontiguousarray(rows, dtype=">f8")
    width = raw.shape[1] * 8
    blob = raw.tobytes()
    return [prefix + blob[i:i + width] for i in range(0, len(blob), width)]


def plain_vertex_bytes(rows: np.ndarray) -> list[bytes]:
    prefix = struct.pack(">I", rows.shape[1])
    raw = np.ascontiguousarray(rows, dtype=">f8")
    width = raw.shape[1] * 8
    blob = raw.tobytes()
    return [prefix + blob[i:i + width] for i in range(0, len(blob), width)]


def _serialize(tree, lo, hi, hashes) -> bytes:
    enc = lo.shape[1] == tree.dim + 1
    vb = vertex_bytes if enc else plain_vertex_bytes
    lob, hib = vb(lo), vb(hi)
    parts = [struct.pack(">I", len(tree))]
    for i in range(len(tree)):
        leaf = tree.left[i] < 0
        parts.append(_NODE_HEAD.pack(tree.ids[i], LEAF if leaf else INTERNAL, int(tree.size[i])))
        parts.append(lob[i])
        parts.append(hib[i])
        if leaf:
            parts.append(_LEAF_TAIL.pack(tree.cipher_ref[i] or bytes(DIGEST_SIZE), int(tree.log_ref[i])))
        if hashes is not None:
            parts.append(hashes[i])
    return b"".join(parts)


class FormatError(ValueError):
    pass


def parse_tree(buf: bytes, dim: int, encrypted: bool, with_hash: bool):
    """Parse a serialized tree of dimension ``dim``.

    Returns a dict of flat arrays plus the raw vertex bytes; raises
    ``FormatError`` unless the buffer is exactly one well-formed tree.
    """
    if len(buf) < 4:
        raise FormatError("truncated tree")
    (count,) = struct.unpack_from(">I", buf)
    width = dim + 1 if encrypted else dim
    vsize = 4 + 8 * width
    if count == 0:
        raise FormatError("empty tree")
    min_node = _NODE_HEAD.size + 2 * vsize + (DIGEST_SIZE if with_hash else 0)
    if count * min_node > len(buf):
        raise FormatError("node count exceeds buffer")
    pos = 4
    ids, kinds, sizes, lo_raw, hi_raw, crefs, lrefs, hashes = [], [], [], [], [], [], [], []
    left = np.full(count, -2, dtype=np.int64)
    right = np.full(count, -2, dtype=np.int64)
    open_parents: list[int] = []
    for i in range(count):
        if i > 0 and not open_parents:
            raise FormatError("nodes after a complete tree")
        if pos + min_node > len(buf):
            raise FormatError("truncated node")
        nid, kind, size = _NODE_HEAD.unpack_from(buf, pos)
        pos += _NODE_HEAD.size
        if kind not in (LEAF, INTERNAL):
            raise FormatError(f"bad node kind {kind}")
        for raw_list in (lo_raw, hi_raw):
            (l,) = struct.unpack_from(">I", buf, pos)
            if l != dim:
                raise FormatError("vertex width mismatch")
            raw_list.append(buf[pos:pos + vsize])
            pos += vsize
        if kind == LEAF:
            if pos + _LEAF_TAIL.size > len(buf):
                raise FormatError("truncated leaf")
            cref, lref = _LEAF_TAIL.unpack_from(buf, pos)
            pos += _LEAF_TAIL.size
            if lref >= 1 << 62:
                raise FormatError("log index out of range")
            left[i] = right[i] = -1
        else:
            cref, lref = None, -1
        if with_hash:
            if pos + DIGEST_SIZE > len(buf):
                raise FormatError("truncated hash")
            hashes.append(buf[pos:pos + DIGEST_SIZE])
            pos += DIGEST_SIZE
        if open_parents:
            parent = open_parents[-1]
            if left[parent] == -2:
                left[parent] = i
            else:
                right[parent] = i
                open_parents.pop()
        if kind == INTERNAL:
            open_parents.append(i)
        ids.append(nid)
        kinds.append(kind)
        sizes.append(size)
        crefs.append(cref)
        lrefs.append(lref)
    if open_parents:
        raise FormatError("incomplete tree")
    if pos != len(buf):
        raise FormatError("trailing bytes after tree")
    if max(sizes) >= 1 << 62:
        raise FormatError("size out of range")

    def floats(raw):
        arr = np.frombuffer(b"".join(r[4:] for r in raw), dtype=">f8").reshape(count, width)
        return arr.astype(np.float64)

    return {
        "ids": ids,
        "size": np.array(sizes, dtype=np.int64),
        "left": left,
        "right": right,
        "lo": floats(lo_raw),
        "hi": floats(hi_raw),
        "lo_raw": lo_raw,
        "hi_raw": hi_raw,
        "cipher_ref": crefs,
        "log_ref": np.array(lrefs, dtype=np.int64),
        "hashes": hashes if with_hash else None,
    }


def kdtree_from_bytes(buf: bytes, dim: int) -> KdTree:
    f = parse_tree(buf, dim, encrypted=False, with_hash=False)
    return KdTree(dim, f["lo"], f["hi"], f["size"], f["left"], f["right"], f["ids"], f["cipher_ref"], f["log_ref"])


def enc_tree_from_bytes(buf: bytes, dim: int) -> EncKdTree:
    f = parse_tree(buf, dim, encrypted=True, with_hash=False)
    return EncKdTree(dim, f["lo"], f["hi"], f["size"], f["left"], f["right"], f["ids"], f["cipher_ref"], f["log_ref"])


def structure_errors(tree) -> list[str]:
    """Shape violations: leaf sizes, size sums, sibling balance."""
    errs = []
    for i in range(len(tree)):
        if tree.left[i] < 0:
            if tree.size[i] != 1:
                errs.append(f"leaf {i} has size {tree.size[i]}")
        else:
            a, b = tree.size[tree.left[i]], tree.size[tree.right[i]]
            if tree.size[i] != a + b:
                errs.append(f"node {i} size {tree.size[i]} != {a} + {b}")
            if abs(int(a) - int(b)) > 1:
                errs.append(f"node {i} children unbalanced ({a}, {b})")
    return errs
