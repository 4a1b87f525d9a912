"""Plaintext spatial primitives.

Points and axis-aligned hyperrectangles, the anchor-pair encoding of a query
rectangle, and the two distance-based predicates (point membership and
rectangle intersection). Everything here works on plain Python floats so it
can serve as an independent oracle for the encrypted code paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence


# Relative slack on distance comparisons.
TIE_TOL = 1e-12


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    coords: tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if not coords:
            raise DimensionError("a point needs at least one coordinate")
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite coordinate in {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def __iter__(self):
        return iter(self.coords)

    def __len__(self):
        return len(self.coords)

    def __getitem__(self, j):
        return self.coords[j]


def as_point(p) -> Point:
    return p if isinstance(p, Point) else Point(tuple(p))


@dataclass(frozen=True)
class HyperRect:
    """Closed box given by its lower (``lo``) and upper (``hi``) extremal vertices."""

    lo: Point
    hi: Point

    def __post_init__(self):
        lo, hi = as_point(self.lo), as_point(self.hi)
        if lo.dim != hi.dim:
            raise DimensionError(f"vertex dimensions differ: {lo.dim} != {hi.dim}")
        for j, (a, b) in enumerate(zip(lo, hi)):
            if a > b:
                raise ValueError(f"lo > hi in dimension {j}: {a} > {b}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds: Iterable[Sequence[float]]) -> HyperRect:
        """Build from per-dimension ``(lo, hi)`` pairs."""
        bounds = [tuple(b) for b in bounds]
        return cls(Point(tuple(b[0] for b in bounds)), Point(tuple(b[1] for b in bounds)))

    @property
    def dim(self) -> int:
        return self.lo.dim

    def center(self) -> tuple[float, ...]:
        return tuple((a + b) / 2.0 for a, b in zip(self.lo, self.hi))

    def contains(self, p) -> bool:
        return all(a <= x <= b for a, x, b in zip(self.lo, p, self.hi))

    def intersects(self, other: HyperRect) -> bool:
        return all(a <= d and c <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))


@dataclass(frozen=True)
class AnchorQuery:
    """2l anchor pairs ``(A_in, A_out)``, one per face of a query box."""

    pairs: tuple[tuple[Point, Point], ...]

    def __post_init__(self):
        pairs = tuple((as_point(a), as_point(b)) for a, b in self.pairs)
        if not pairs:
            raise ValueError("anchor query needs at least one pair")
        dim = pairs[0][0].dim
        if len(pairs) != 2 * dim:
            raise DimensionError(f"expected {2 * dim} anchor pairs, got {len(pairs)}")
        for a_in, a_out in pairs:
            if a_in.dim != dim or a_out.dim != dim:
                raise DimensionError("anchor dimensions differ")
            if a_in == a_out:
                raise ValueError("anchor pair members must differ")
        object.__setattr__(self, "pairs", pairs)

    @property
    def dim(self) -> int:
        return self.pairs[0][0].dim


def dist2(a, b) -> float:
    """Squared Euclidean distance."""
    if len(a) != len(b):
        raise DimensionError(f"dimension mismatch: {len(a)} != {len(b)}")
    return sum((x - y) * (x - y) for x, y in zip(a, b))


def anchors_for_rect(q: HyperRect, delta: float = 0.5) -> AnchorQuery:
    """Anchor pairs for every face of ``q``.

    Each pair sits on the line through the box center normal to the face, at
    distance ``delta`` on either side of it; ``A_in`` is on the inner side.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    center = q.center()
    pairs = []
    for j in range(q.dim):
        for face, inward in ((q.lo[j], 1.0), (q.hi[j], -1.0)):
            a_in = list(center)
            a_out = list(center)
            a_in[j] = face + inward * delta
            a_out[j] = face - inward * delta
            pairs.append((Point(tuple(a_in)), Point(tuple(a_out))))
    return AnchorQuery(tuple(pairs))


def _check_dim(p, q: AnchorQuery):
    if len(p) != q.dim:
        raise DimensionError(f"dimension mismatch: point {len(p)} vs query {q.dim}")


def _outside(p, a_in, a_out) -> bool:
    """Strictly nearer ``a_out``. Near-ties count as inside: anchors like
    ``face + 0.01`` are rounded, so a point on the face is only equidistant up
    to a few ulps."""
    d_in, d_out = dist2(p, a_in), dist2(p, a_out)
    return d_in - d_out > TIE_TOL * (d_in + d_out)


def is_point_in_rect(p, q: AnchorQuery) -> bool:
    _check_dim(p, q)
    for a_in, a_out in q.pairs:
        if _outside(p, a_in, a_out):
            return False
    return True


def are_rects_inter(q: AnchorQuery, r: HyperRect) -> bool:
    """False only if both extremal vertices of ``r`` are outside one face of ``q``."""
    _check_dim(r.lo, q)
    for a_in, a_out in q.pairs:
        if _outside(r.lo, a_in, a_out) and _outside(r.hi, a_in, a_out):
            return False
    return True


def rect_range_query_bruteforce(points, q: HyperRect) -> list[int]:
    lo, hi = q.lo.coords, q.hi.coords
    out = []
    for i, p in enumerate(points):
        if len(p) != len(lo):
            raise DimensionError(f"point {i} has dimension {len(p)}, query has {len(lo)}")
        if all(a <= x <= b for a, x, b in zip(lo, p, hi)):
            out.append(i)
    return out
