"""Mass-spring network topologies.

A topology is immutable: point placement, movable flags, spring wiring and
the central mass point (CMP) index never change during simulation or
training.  Circle bodies keep their outermost ring fixed at radius 1.0 and
place movable rings at equally spaced interior radii; ring points are laid
out clockwise from the top.  Movable points are ordered CMP first, then
rings from outermost to innermost, so the innermost ring always occupies
the highest movable ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

OUTER_RADIUS = 1.0

CIRCLE_SIZES = (13, 17, 65)

# movable ring sizes per circle body (excluding the CMP)
MULTI_RING_SIZES = {17: (13, 3), 65: (26, 20, 13, 5)}


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Immutable point/spring layout of one body."""

    points: np.ndarray            # (N, 2) initial positions
    movable: np.ndarray           # (N,) bool
    springs: np.ndarray           # (S, 2) endpoint indices
    kind: str
    cmp_index: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        mov = np.asarray(self.movable, dtype=bool)
        spr = np.asarray(self.springs, dtype=int)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "movable", mov)
        object.__setattr__(self, "springs", spr)
        n = pts.shape[0]
        if spr.size and (spr.min() < 0 or spr.max() >= n):
            raise TopologyError("spring endpoint out of range")
        if np.any(spr[:, 0] == spr[:, 1]):
            raise TopologyError("spring endpoints must be distinct")
        seen = set()
        for i, j in spr:
            key = (min(i, j), max(i, j))
            if key in seen:
                raise TopologyError(f"duplicate spring {key}")
            seen.add(key)
        if self.cmp_index is not None and not mov[self.cmp_index]:
            raise TopologyError("CMP must be a movable point")

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def n_springs(self):
        return self.springs.shape[0]

    @property
    def n_movable(self):
        return int(self.movable.sum())

    @property
    def n_fixed(self):
        return self.n_points - self.n_movable

    @property
    def movable_ids(self):
        """Global indices of movable points, in storage order."""
        return np.flatnonzero(self.movable)

    def rest_lengths(self):
        d = self.points[self.springs[:, 0]] - self.points[self.springs[:, 1]]
        return np.linalg.norm(d, axis=1)

    # Constant matrices used by the differentiable force evaluation.
    def incidence(self):
        """(N, S) signed incidence: +1 at endpoint i, -1 at endpoint j."""
        if "inc" not in self._cache:
            inc = np.zeros((self.n_points, self.n_springs))
            inc[self.springs[:, 0], np.arange(self.n_springs)] = 1.0
            inc[self.springs[:, 1], np.arange(self.n_springs)] = -1.0
            self._cache["inc"] = inc
        return self._cache["inc"]

    def movable_mask(self):
        """(N, 1) float mask, 1 on movable points."""
        if "mask" not in self._cache:
            self._cache["mask"] = self.movable.astype(float)[:, None]
        return self._cache["mask"]

    def selector(self, ids):
        """(len(ids), N) row-selection matrix."""
        ids = np.asarray(ids, dtype=int)
        sel = np.zeros((ids.size, self.n_points))
        sel[np.arange(ids.size), ids] = 1.0
        return sel

    def to_json(self):
        return json.dumps(
            {
                "kind": self.kind,
                "cmp_index": self.cmp_index,
                "points": self.points.tolist(),
                "movable": self.movable.astype(int).tolist(),
                "springs": self.springs.tolist(),
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text):
        doc = json.loads(text)
        return Topology(
            points=np.array(doc["points"], dtype=float),
            movable=np.array(doc["movable"], dtype=bool),
            springs=np.array(doc["springs"], dtype=int),
            kind=doc["kind"],
            cmp_index=doc["cmp_index"],
        )


def _ring(n, radius):
    """n points on a circle, clockwise from the top."""
    angles = np.pi / 2 - 2 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _ring_edges(ids):
    return [(ids[k], ids[(k + 1) % len(ids)]) for k in range(len(ids))]


def _nearest_by_angle(src_pts, dst_pts, src_ids, dst_ids):
    """One edge from each source point to its angularly nearest target."""
    edges = []
    dst_ang = np.arctan2(dst_pts[:, 1], dst_pts[:, 0])
    for sid, p in zip(src_ids, src_pts):
        a = np.arctan2(p[1], p[0])
        delta = np.angle(np.exp(1j * (dst_ang - a)))
        edges.append((sid, dst_ids[int(np.argmin(np.abs(delta)))]))
    return edges


def _circle(n_mov, ring_sizes, connect_all_to_cmp):
    """Shared construction for double- and multiple-circle bodies.

    Point order: fixed outer ring, CMP, movable rings outer to inner.
    """
    n_ring_total = n_mov - 1
    if sum(ring_sizes) != n_ring_total:
        raise TopologyError("ring sizes inconsistent with movable count")
    n_fix = ring_sizes[0]
    radii = [OUTER_RADIUS * (len(ring_sizes) - r) / (len(ring_sizes) + 1)
             for r in range(len(ring_sizes))]

    pts = [_ring(n_fix, OUTER_RADIUS), np.zeros((1, 2))]
    ring_ids, next_id = [], n_fix + 1
    for size, radius in zip(ring_sizes, radii):
        pts.append(_ring(size, radius))
        ring_ids.append(list(range(next_id, next_id + size)))
        next_id += size
    points = np.concatenate(pts, axis=0)
    cmp_index = n_fix
    movable = np.zeros(points.shape[0], dtype=bool)
    movable[n_fix:] = True

    fixed_ids = list(range(n_fix))
    springs = []
    # outermost movable ring ties to the fixed ring: radial plus one diagonal
    outer = ring_ids[0]
    for k, pid in enumerate(outer):
        springs.append((pid, fixed_ids[k % n_fix]))
        springs.append((pid, fixed_ids[(k + 1) % n_fix]))
    for ids in ring_ids:
        if len(ids) > 2:
            springs.extend(_ring_edges(ids))
        elif len(ids) == 2:
            springs.append((ids[0], ids[1]))
    # consecutive movable rings: nearest-by-angle both ways, deduplicated
    for a, b in zip(ring_ids[:-1], ring_ids[1:]):
        pa, pb = points[a], points[b]
        cand = _nearest_by_angle(pa, pb, a, b) + [
            (j, i) for i, j in _nearest_by_angle(pb, pa, b, a)
        ]
        have = {(min(i, j), max(i, j)) for i, j in springs}
        for i, j in cand:
            key = (min(i, j), max(i, j))
            if key not in have:
                springs.append((i, j))
                have.add(key)
    cmp_sources = range(n_fix + 1, points.shape[0]) if connect_all_to_cmp else ring_ids[-1]
    springs.extend((pid, cmp_index) for pid in cmp_sources)
    return points, movable, np.array(springs, dtype=int), cmp_index


def double_circle(n_mov):
    """Fixed outer ring, one movable ring, and a CMP joined to every movable point."""
    if n_mov not in CIRCLE_SIZES:
        raise TopologyError(f"unsupported movable count {n_mov} for double-circle")
    points, movable, springs, cmp_index = _circle(
        n_mov, (n_mov - 1,), connect_all_to_cmp=True
    )
    return Topology(points, movable, springs, "double-circle", cmp_index)


def multiple_circle(n_mov):
    """Concentric movable rings; only the innermost ring joins the CMP."""
    if n_mov not in MULTI_RING_SIZES:
        raise TopologyError(f"unsupported movable count {n_mov} for multiple-circle")
    points, movable, springs, cmp_index = _circle(
        n_mov, MULTI_RING_SIZES[n_mov], connect_all_to_cmp=False
    )
    return Topology(points, movable, springs, "multiple-circle", cmp_index)


def caterpillar():
    """2 x 5 grid of movable points, 24 springs, no CMP.

    Springs: 8 horizontal neighbours, 5 verticals, 8 cell diagonals, and 3
    second-neighbour braces along the bottom row.
    """
    xs = np.arange(5, dtype=float)
    bottom = np.stack([xs, np.zeros(5)], axis=1)
    top = np.stack([xs, np.ones(5)], axis=1)
    points = np.concatenate([bottom, top], axis=0)  # ids 0-4 bottom, 5-9 top
    springs = []
    for x in range(4):
        springs.append((x, x + 1))
        springs.append((5 + x, 5 + x + 1))
    for x in range(5):
        springs.append((x, 5 + x))
    for x in range(4):
        springs.append((x, 5 + x + 1))
        springs.append((x + 1, 5 + x))
    for x in range(3):
        springs.append((x, x + 2))
    movable = np.ones(10, dtype=bool)
    return Topology(points, movable, np.array(springs, dtype=int), "caterpillar", None)


def chain(n_points, spacing=1.0, fixed_ends=True):
    """Serial chain along the x-axis; endpoints optionally fixed.

    Driven along its axis this body is exactly linear, which makes it the
    reference case for nonlinearity measurements.
    """
    xs = spacing * np.arange(n_points, dtype=float)
    points = np.stack([xs, np.zeros(n_points)], axis=1)
    movable = np.ones(n_points, dtype=bool)
    if fixed_ends:
        movable[0] = movable[-1] = False
    springs = np.array([(i, i + 1) for i in range(n_points - 1)], dtype=int)
    return Topology(points, movable, springs, "custom", None)


def build_topology(kind, n_mov=None, seed=None):
    """Build a named body. ``seed`` is accepted for interface symmetry; the
    shipped constructions are deterministic."""
    if kind == "double-circle":
        return double_circle(n_mov)
    if kind == "multiple-circle":
        return multiple_circle(n_mov)
    if kind == "caterpillar":
        return caterpillar()
    raise TopologyError(f"unknown topology kind '{kind}'")
