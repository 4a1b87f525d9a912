"""Asymmetric scalar-product preserving encryption (ASPE).

Data vertices are lifted to ``(v, 1)`` and encrypted with ``M^-1``; query
anchors are lifted to ``(a, -|a|^2 / 2)`` and encrypted with ``M^T``. The
inner product of the two ciphertexts equals ``a.v - |a|^2 / 2``, so the sign
of ``(enc_in - enc_out) . enc_v`` tells which anchor of a pair is closer to
``v`` without revealing either.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import AnchorQuery, DimensionError, Point

DET_FLOOR = 1e-6
COND_CAP = 1e6
# Relative tie band for encrypted comparisons, measured against the sum of
# absolute products. Absorbs the rounding of M @ M_inv.
REL_TOL = 1e-10
R_RANGE = (0.5, 2.0)


@dataclass(frozen=True, eq=False)
class AspeKey:
    M: np.ndarray
    M_inv: np.ndarray = field(repr=False)
    dim: int

    @classmethod
    def from_matrix(cls, M) -> AspeKey:
        M = np.array(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 2:
            raise DimensionError(f"key matrix must be square (l+1)x(l+1), got {M.shape}")
        M.setflags(write=False)
        M_inv = np.linalg.inv(M)
        M_inv.setflags(write=False)
        return cls(M, M_inv, M.shape[0] - 1)

    def __eq__(self, other):
        return isinstance(other, AspeKey) and np.array_equal(self.M, other.M)

    def __hash__(self):
        return hash(self.M.tobytes())


def keygen(l: int, seed) -> AspeKey:
    if l < 1:
        raise ValueError(f"dimension must be >= 1, got {l}")
    rng = np.random.default_rng(seed)
    while True:
        M = rng.uniform(-1.0, 1.0, size=(l + 1, l + 1))
        if abs(np.linalg.det(M)) >= DET_FLOOR and np.linalg.cond(M) <= COND_CAP:
            return AspeKey.from_matrix(M)


def identity_key(l: int) -> AspeKey:
    return AspeKey.from_matrix(np.eye(l + 1))


@dataclass(frozen=True, eq=False)
class EncPoint:
    vec: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=np.float64).reshape(-1)
        if vec.size < 2 or not np.all(np.isfinite(vec)):
            raise ValueError("encrypted point must be a finite vector of length l+1")
        object.__setattr__(self, "vec", vec)

    @property
    def dim(self) -> int:
        return self.vec.size - 1

    def __eq__(self, other):
        return isinstance(other, EncPoint) and np.array_equal(self.vec, other.vec)

    def to_bytes(self) -> bytes:
        return encode_vector(self.vec)


def _lift_points(k: AspeKey, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if pts.shape[1] != k.dim:
        raise DimensionError(f"point dimension {pts.shape[1]} != key dimension {k.dim}")
    return np.hstack([pts, np.ones((pts.shape[0], 1))])


def encrypt_point(k: AspeKey, v) -> EncPoint:
    v = v.coords if isinstance(v, Point) else v
    return EncPoint(k.M_inv @ _lift_points(k, v)[0])


def encrypt_points(k: AspeKey, pts) -> np.ndarray:
    """Row-wise encryption of an ``(n, l)`` array, returns ``(n, l+1)``."""
    return _lift_points(k, pts) @ k.M_inv.T


def decrypt_point(k: AspeKey, ev) -> np.ndarray:
    vec = ev.vec if isinstance(ev, EncPoint) else np.asarray(ev, dtype=np.float64)
    return k.M @ vec


@dataclass(frozen=True, eq=False)
class Trapdoor:
    """Encrypted anchor pairs. Row ``k`` of ``enc_in``/``enc_out`` is pair ``k``."""

    enc_in: np.ndarray
    enc_out: np.ndarray

    def __post_init__(self):
        enc_in = np.asarray(self.enc_in, dtype=np.float64)
        enc_out = np.asarray(self.enc_out, dtype=np.float64)
        if enc_in.shape != enc_out.shape or enc_in.ndim != 2:
            raise DimensionError("trapdoor halves must be equal-shape matrices")
        if enc_in.shape[0] != 2 * (enc_in.shape[1] - 1):
            raise DimensionError(f"expected 2l pairs for l={enc_in.shape[1] - 1}, got {enc_in.shape[0]}")
        if not (np.all(np.isfinite(enc_in)) and np.all(np.isfinite(enc_out))):
            raise ValueError("trapdoor entries must be finite")
        self._fill(enc_in, enc_out)

    def _fill(self, enc_in, enc_out):
        object.__setattr__(self, "enc_in", enc_in)
        object.__setattr__(self, "enc_out", enc_out)
        # w.ev is the signed comparison; u.|ev| bounds its rounding error.
        object.__setattr__(self, "w", np.ascontiguousarray(enc_in - enc_out))
        object.__setattr__(self, "u", np.ascontiguousarray(np.abs(enc_in) + np.abs(enc_out)))

    @classmethod
    def _trusted(cls, enc_in, enc_out) -> Trapdoor:
        # make_trapdoor's output is well formed by construction
        tr = object.__new__(cls)
        tr._fill(enc_in, enc_out)
        return tr

    @property
    def dim(self) -> int:
        return self.enc_in.shape[1] - 1

    @property
    def pairs(self):
        return list(zip(self.enc_in, self.enc_out))

    def to_bytes(self) -> bytes:
        return b"".join(encode_vector(a) + encode_vector(b) for a, b in self.pairs)


def make_trapdoor(k: AspeKey, q: AnchorQuery, seed, r=None) -> Trapdoor:
    """Encrypt ``q`` under ``k``.

    Every pair gets its own positive scale drawn from ``R_RANGE``; pass ``r``
    (scalar or per-pair sequence) to pin the scales instead.
    """
    if q.dim != k.dim:
        raise DimensionError(f"query dimension {q.dim} != key dimension {k.dim}")
    a_in = np.array([p[0].coords for p in q.pairs])
    a_out = np.array([p[1].coords for p in q.pairs])
    if r is None:
        scales = np.random.default_rng(seed).uniform(*R_RANGE, size=len(q.pairs))
    else:
        scales = np.broadcast_to(np.asarray(r, dtype=np.float64), (len(q.pairs),))
        if np.any(scales <= 0):
            raise ValueError("trapdoor scales must be positive")
    m = len(q.pairs)
    enc = _lift_anchors(np.vstack([a_in, a_out])) @ k.M * np.concatenate([scales, scales])[:, None]
    if not np.isfinite(enc).all():
        raise ValueError("trapdoor entries must be finite")
    return Trapdoor._trusted(enc[:m], enc[m:])


def _lift_anchors(a: np.ndarray) -> np.ndarray:
    out = np.empty((a.shape[0], a.shape[1] + 1))
    out[:, :-1] = a
    out[:, -1] = -0.5 * np.einsum("ij,ij->i", a, a)
    return out


def _sign(x: float, scale: float) -> int:
    if abs(x) <= REL_TOL * scale:
        return 0
    return 1 if x > 0 else -1


def enc_compare(tr_pair, ev) -> int:
    """+1 if the point is nearer ``A_in``, -1 if nearer ``A_out``, 0 on the bisector."""
    enc_in, enc_out = (np.asarray(x, dtype=np.float64) for x in tr_pair)
    vec = ev.vec if isinstance(ev, EncPoint) else np.asarray(ev, dtype=np.float64)
    if enc_in.shape != vec.shape:
        raise DimensionError(f"trapdoor pair length {enc_in.size} != ciphertext length {vec.size}")
    x = float((enc_in - enc_out) @ vec)
    scale = float((np.abs(enc_in) + np.abs(enc_out)) @ np.abs(vec))
    return _sign(x, scale)


def _signs(tr: Trapdoor, vec: np.ndarray) -> np.ndarray:
    if vec.shape[-1] != tr.w.shape[1]:
        raise DimensionError(f"ciphertext length {vec.shape[-1]} != trapdoor width {tr.w.shape[1]}")
    x = tr.w @ vec
    scale = tr.u @ np.abs(vec)
    return np.where(np.abs(x) <= REL_TOL * scale, 0, np.sign(x)).astype(int)


def enc_point_in_rect(tr: Trapdoor, ev) -> bool:
    vec = ev.vec if isinstance(ev, EncPoint) else np.asarray(ev, dtype=np.float64)
    return not np.any(_signs(tr, vec) < 0)


def enc_rects_inter(tr: Trapdoor, er) -> bool:
    lo, hi = (e.vec if isinstance(e, EncPoint) else np.asarray(e, dtype=np.float64) for e in er)
    return not np.any((_signs(tr, lo) < 0) & (_signs(tr, hi) < 0))


# -- wire formats: 4-byte big-endian l, then big-endian binary64 values ----------

def encode_vector(vec) -> bytes:
    vec = np.asarray(vec, dtype=np.float64)
    return struct.pack(">I", vec.size - 1) + vec.astype(">f8").tobytes()


def decode_vector(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise ValueError("truncated vector")
    (l,) = struct.unpack_from(">I", buf)
    if len(buf) != 4 + 8 * (l + 1):
        raise ValueError(f"vector length does not match l={l}")
    return np.frombuffer(buf, dtype=">f8", offset=4).astype(np.float64)


def key_to_bytes(k: AspeKey) -> bytes:
    return struct.pack(">I", k.dim) + k.M.astype(">f8").tobytes()


def key_from_bytes(buf: bytes) -> AspeKey:
    if len(buf) < 4:
        raise ValueError("truncated key")
    (l,) = struct.unpack_from(">I", buf)
    if len(buf) != 4 + 8 * (l + 1) ** 2:
        raise ValueError(f"key length does not match l={l}")
    M = np.frombuffer(buf, dtype=">f8", offset=4).astype(np.float64).reshape(l + 1, l + 1)
    return AspeKey.from_matrix(M)
