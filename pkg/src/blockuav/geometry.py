"""Building shadows as polyhedra, with clearances and an exact LoS check.

A ground user sees one or two flank faces of an axis-aligned building. The
region of UAV positions whose link to the user is blocked by that building is
bounded by planes through the user: one per visible top edge, plus the two
vertical planes through the outermost silhouette edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Building",
    "HalfSpace",
    "BlockedRegion",
    "GeometryError",
    "build_blocked_region",
    "blocked_regions",
    "signed_clearance",
    "min_clearance",
    "los_oracle",
    "check_region",
    "ShadowSet",
]

_NORMAL_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for degenerate user/building configurations."""


@dataclass(frozen=True)
class Building:
    """Axis-aligned box standing on the ground plane."""

    min_corner: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float).reshape(3)
        sz = np.asarray(self.size, dtype=float).reshape(3)
        if np.any(sz <= 0):
            raise GeometryError(f"building size must be positive, got {sz}")
        if lo[2] != 0.0:
            raise GeometryError("buildings must stand on the ground plane (min z = 0)")
        lo.setflags(write=False)
        sz.setflags(write=False)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "size", sz)

    @property
    def max_corner(self) -> np.ndarray:
        return self.min_corner + self.size

    @property
    def height(self) -> float:
        return float(self.size[2])

    def footprint_contains(self, point, closed: bool = True) -> bool:
        lo, hi = self.min_corner, self.max_corner
        x, y = float(point[0]), float(point[1])
        if closed:
            return lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1]
        return lo[0] < x < hi[0] and lo[1] < y < hi[1]


@dataclass(frozen=True)
class HalfSpace:
    """The set {x : a.x - b <= 0} with unit outward normal ``a``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(3)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def value(self, x) -> float:
        return float(self.a @ np.asarray(x, dtype=float) - self.b)


@dataclass(frozen=True)
class BlockedRegion:
    halfspaces: tuple[HalfSpace, ...]
    user_index: int = -1
    building_index: int = -1
    # stacked copies for vectorised evaluation
    normals: np.ndarray = field(init=False, repr=False, compare=False)
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        hs = tuple(self.halfspaces)
        if not hs:
            raise GeometryError("a blocked region needs at least one halfspace")
        object.__setattr__(self, "halfspaces", hs)
        A = np.array([h.a for h in hs])
        b = np.array([h.b for h in hs])
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", b)

    def __len__(self):
        return len(self.halfspaces)

    def contains(self, x) -> bool:
        return signed_clearance(self, x)[0] <= 0.0


def _cross(a, b) -> np.ndarray:
    # np.cross carries heavy axis handling; this is called per region
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise GeometryError("degenerate plane (zero normal)")
    return v / n


def _oriented_halfspace(normal, user, interior) -> HalfSpace:
    a = _unit(np.asarray(normal, dtype=float))
    b = float(a @ user)
    if a @ interior - b > 0:
        a, b = -a, -b
    return HalfSpace(a, b)


def _visible_faces(user: np.ndarray, building: Building):
    """Flank faces facing the user, as (axis, side) pairs in fixed order.

    Order is -x, +x, -y, +y. A face with outward normal n is visible iff
    n.(u - face_centroid) > 0.
    """
    lo, hi = building.min_corner, building.max_corner
    faces = []
    for axis in (0, 1):
        if user[axis] < lo[axis]:
            faces.append((axis, 0))
        elif user[axis] > hi[axis]:
            faces.append((axis, 1))
    return faces


def _face_top_edge(building: Building, axis: int, side: int):
    lo, hi = building.min_corner, building.max_corner
    h = hi[2]
    fixed = lo[axis] if side == 0 else hi[axis]
    other = 1 - axis
    p = np.zeros(3)
    q = np.zeros(3)
    p[axis] = q[axis] = fixed
    p[other], q[other] = lo[other], hi[other]
    p[2] = q[2] = h
    return p, q


def build_blocked_region(user, building: Building, user_index: int = -1,
                         building_index: int = -1) -> BlockedRegion:
    """Shadow polyhedron of ``building`` as seen from ground user ``user``.

    Returns 3 halfspaces when one flank face is visible and 4 when the user
    sees the box corner-on. Every boundary plane passes through the user.
    """
    u = np.asarray(user, dtype=float).reshape(3)
    if u[2] != 0.0:
        raise GeometryError("user must lie on the ground plane (z = 0)")
    if building.footprint_contains(u, closed=False):
        raise GeometryError("user lies inside the building footprint")
    if building.footprint_contains(u, closed=True):
        raise GeometryError("user lies on the building footprint boundary")

    lo, hi = building.min_corner, building.max_corner
    interior = 0.5 * (lo + hi)
    faces = _visible_faces(u, building)

    # footprint corners in counter-clockwise order; the two silhouette
    # corners are those extremal in bearing as seen from the user
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    rel = corners - u[:2]
    ref = interior[:2] - u[:2]
    # signed angle of each corner relative to the centre bearing
    ang = np.arctan2(ref[0] * rel[:, 1] - ref[1] * rel[:, 0], rel @ ref)
    left = corners[int(np.argmax(ang))]
    right = corners[int(np.argmin(ang))]

    halfspaces = []
    for corner in (right, left):
        d = np.array([corner[0] - u[0], corner[1] - u[1], 0.0])
        normal = _cross(d, (0.0, 0.0, 1.0))
        halfspaces.append(_oriented_halfspace(normal, u, interior))
    for axis, side in faces:
        p, q = _face_top_edge(building, axis, side)
        normal = _cross(q - u, p - u)
        halfspaces.append(_oriented_halfspace(normal, u, interior))
    return BlockedRegion(tuple(halfspaces), user_index, building_index)


def blocked_regions(users, buildings: Sequence[Building]) -> list[list[BlockedRegion]]:
    """All regions, indexed ``[k][q]``."""
    return [
        [build_blocked_region(u, b, k, q) for q, b in enumerate(buildings)]
        for k, u in enumerate(np.asarray(users, dtype=float).reshape(-1, 3))
    ]


def signed_clearance(region: BlockedRegion, x) -> tuple[float, int]:
    """max_i a_i.x - b_i and the (lowest) maximising index."""
    vals = region.normals @ np.asarray(x, dtype=float) - region.offsets
    i = int(np.argmax(vals))
    return float(vals[i]), i


def min_clearance(regions: Sequence[BlockedRegion], x) -> tuple[float, int, int]:
    """Smallest clearance over the regions of one user.

    Returns ``(value, q, i)``. With no regions the value is ``inf`` and the
    indices are -1, meaning unblocked everywhere.
    """
    best, bq, bi = np.inf, -1, -1
    for q, region in enumerate(regions):
        d, i = signed_clearance(region, x)
        if d < best:
            best, bq, bi = d, q, i
    return best, bq, bi


class ShadowSet:
    """All blocked regions of one user, stacked for batch evaluation.

    ``clearances(X)`` gives, for each row of ``X``, the same value and
    lowest-index tie-breaking as :func:`min_clearance`.
    """

    def __init__(self, regions: Sequence[BlockedRegion]):
        self.regions = tuple(regions)
        if self.regions:
            self.normals = np.vstack([r.normals for r in self.regions])
            self.offsets = np.concatenate([r.offsets for r in self.regions])
            sizes = [len(r) for r in self.regions]
            self.starts = np.cumsum([0] + sizes[:-1])
            self.region_of = np.repeat(np.arange(len(sizes)), sizes)
        else:
            self.normals = np.zeros((0, 3))
            self.offsets = np.zeros(0)
            self.starts = np.zeros(0, dtype=int)
            self.region_of = np.zeros(0, dtype=int)

    def __len__(self):
        return len(self.regions)

    @property
    def empty(self) -> bool:
        return not self.regions

    def clearances(self, X, tie_tol: float = 1e-12):
        """Return ``(value, q, i, tie)`` arrays over the rows of ``X``.

        ``q`` and ``i`` are -1 and ``value`` is ``inf`` when there are no
        regions. ``tie`` flags rows whose minimising (region, plane) pair is
        not unique to within ``tie_tol`` (relative).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = len(X)
        if self.empty:
            return (np.full(n, np.inf), np.full(n, -1), np.full(n, -1),
                    np.zeros(n, dtype=bool))
        vals = X @ self.normals.T - self.offsets
        per_region = np.maximum.reduceat(vals, self.starts, axis=1)
        q = np.argmin(per_region, axis=1)
        best = per_region[np.arange(n), q]
        tol = tie_tol * np.maximum(1.0, np.abs(best))
        tie = np.sum(np.abs(per_region - best[:, None]) <= tol[:, None], axis=1) > 1
        i = np.empty(n, dtype=int)
        for r in range(n):
            lo = self.starts[q[r]]
            seg = vals[r, lo:lo + len(self.regions[q[r]])]
            i[r] = int(np.argmax(seg))
            if np.sum(np.abs(seg - best[r]) <= tol[r]) > 1:
                tie[r] = True
        return best, q, i, tie

    def plane(self, q: int, i: int) -> HalfSpace:
        return self.regions[q].halfspaces[i]


def los_oracle(u, x, buildings: Sequence[Building]) -> bool:
    """True iff the open segment u->x misses every building interior.

    Slab method on each box; merely touching the box surface counts as clear.
    """
    p0 = np.asarray(u, dtype=float)
    d = np.asarray(x, dtype=float) - p0
    if not np.any(d):
        raise GeometryError("segment endpoints coincide")
    for b in buildings:
        lo, hi = b.min_corner, b.max_corner
        t0, t1 = 0.0, 1.0
        hit = True
        for ax in range(3):
            if d[ax] == 0.0:
                if not (lo[ax] < p0[ax] < hi[ax]):
                    hit = False
                    break
                continue
            ta = (lo[ax] - p0[ax]) / d[ax]
            tb = (hi[ax] - p0[ax]) / d[ax]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 >= t1:
                hit = False
                break
        if hit:
            return False
    return True


def check_region(region: BlockedRegion, user, tol: float = 1e-9) -> list[str]:
    """Invariant violations of a region (empty list when it is sound)."""
    problems = []
    u = np.asarray(user, dtype=float)
    n = len(region.halfspaces)
    if not 3 <= n <= 4:
        problems.append(f"region has {n} halfspaces, expected 3 or 4")
    for i, h in enumerate(region.halfspaces):
        if abs(np.linalg.norm(h.a) - 1.0) > _NORMAL_TOL:
            problems.append(f"halfspace {i}: normal is not unit length")
        if abs(h.a @ u - h.b) > tol:
            problems.append(f"halfspace {i}: plane does not pass through the user")
    return problems
