"""Hierarchical cube lattices on boundary samples and in the half-space.

The boundary-side lattice is a Christ-David-style hierarchy built from
nested greedy nets; membership is decided bottom-up by nearest-net-point
chains so that cubes at every level partition the sample and nest.  The
half-space side provides order-p Whitney boxes with exact dyadic
coordinates, the A-closeness predicate, and a diameter-octave spatial
index for closeness queries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .beta import fit_plane
from .errors import DegenerateCloud, InsufficientResolution, ZeroDiameter
from .geom import Ball, BoundarySample, Plane, greedy_net_indices, pca_plane

DEFAULT_RHO = 1.0 / 1000.0
C0 = 1.0 / 500.0


# --------------------------------------------------------------------------
# boundary-side Christ-David lattice
# --------------------------------------------------------------------------


@dataclass
class Cube:
    id: int
    level: int
    net_idx: int  # index of the center into the sample's point array
    center: np.ndarray
    side: float
    point_idx: np.ndarray
    parent: int | None = None
    children: list = field(default_factory=list)
    plane: Plane | None = None
    _diam: float | None = None

    def points(self, E: BoundarySample) -> np.ndarray:
        return E.points[self.point_idx]


class DyadicLattice:
    """Nested-net cube hierarchy over a boundary sample.

    Levels k = 0..depth carry maximal rho^k-nets X_k (nested); the cube at
    a net point collects the sample points whose nearest-net chains pass
    through it, which yields a partition per level, nesting across levels,
    and the two-sided ball containments with c0 = 1/500.
    """

    def __init__(self, E: BoundarySample, depth: int, rho: float, conforming: bool):
        self.E = E
        self.depth = depth
        self.rho = rho
        self.c0 = C0
        self.conforming = conforming
        self.nets: list[np.ndarray] = []
        self.cubes: dict[int, Cube] = {}
        self._level_ids: list[list[int]] = []
        self._cube_at: list[dict[int, int]] = []  # per level: net_idx -> cube id
        self._sample_cube: list[np.ndarray] = []  # per level: sample idx -> cube id

    # -- navigation ---------------------------------------------------------

    def level_ids(self, k: int) -> list[int]:
        return self._level_ids[k]

    def side(self, k: int) -> float:
        return 5.0 * self.rho**k

    def cube_of_point(self, k: int, sample_idx: int) -> int:
        return int(self._sample_cube[k][sample_idx])

    def ancestor_at(self, cube_id: int, k: int) -> int:
        c = self.cubes[cube_id]
        while c.level > k:
            c = self.cubes[c.parent]
        if c.level != k:
            raise ValueError("cube is coarser than the requested level")
        return c.id

    def contains(self, inner_id: int, outer_id: int) -> bool:
        """Whether cube ``inner`` is a descendant-or-self of ``outer``."""
        inner = self.cubes[inner_id]
        outer = self.cubes[outer_id]
        if inner.level < outer.level:
            return False
        return self.ancestor_at(inner_id, outer.level) == outer_id

    def cube_diam(self, cube_id: int) -> float:
        c = self.cubes[cube_id]
        if c._diam is None:
            c._diam = _point_set_diam(self.E.points[c.point_idx])
        return c._diam

    def cube_ball(self, cube_id: int, mult: float = 1.0) -> Ball:
        c = self.cubes[cube_id]
        return Ball(c.center, mult * c.side)

    # -- export --------------------------------------------------------------

    def dump_records(self) -> list[dict]:
        recs = []
        for cid in sorted(self.cubes):
            c = self.cubes[cid]
            rec = {
                "id": c.id,
                "level": c.level,
                "center": [float(v) for v in c.center],
                "side": c.side,
                "parent": c.parent,
                "plane": None,
            }
            if c.plane is not None:
                rec["plane"] = {
                    "base": [float(v) for v in c.plane.base],
                    "frame": [[float(v) for v in row] for row in c.plane.frame],
                }
            recs.append(rec)
        return recs

    def dump(self, path):
        with open(path, "w") as fh:
            for rec in self.dump_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _point_set_diam(pts: np.ndarray) -> float:
    if pts.shape[0] == 1:
        return 0.0
    if pts.shape[0] > 64:
        try:
            from scipy.spatial import ConvexHull

            pts = pts[ConvexHull(pts, qhull_options="QJ").vertices]
        except Exception:
            # degenerate (lower-dimensional) cloud: coordinates are monotone
            # along the affine hull, so per-axis extremes carry the diameter
            keep = set()
            for axis in range(pts.shape[1]):
                keep.add(int(np.argmin(pts[:, axis])))
                keep.add(int(np.argmax(pts[:, axis])))
            pts = pts[sorted(keep)]
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.max()))


def build_lattice(E: BoundarySample, depth: int, rho: float = DEFAULT_RHO) -> DyadicLattice:
    """Construct the cube hierarchy; levels run k = 0..depth.

    ``rho`` below 1/1000 matches the classical construction; larger values
    (up to 1/4) are accepted for desk-scale work and flagged non-conforming.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if rho > 0.26:
        raise ValueError("rho above 0.26 breaks the nesting containments")
    if 5.0 * rho**depth < 2.0 * E.spacing:
        raise InsufficientResolution(
            f"cubes at depth {depth} (side {5 * rho**depth:.3g}) are below "
            f"twice the sample spacing {E.spacing:.3g}"
        )
    lat = DyadicLattice(E, depth, rho, conforming=rho < 1.0 / 1000.0 + 1e-12)
    pts = E.points

    nets = [greedy_net_indices(pts, 1.0)]
    for k in range(1, depth + 1):
        nets.append(greedy_net_indices(pts, rho**k, seed_idx=nets[k - 1]))
    lat.nets = [np.asarray(n, dtype=int) for n in nets]

    # bottom-up chains: net point at level k -> nearest net point at k-1
    parent_of = [None]
    for k in range(1, depth + 1):
        tree = cKDTree(pts[nets[k - 1]])
        _, j = tree.query(pts[nets[k]])
        parent_of.append(np.asarray(j, dtype=int))

    tree_deep = cKDTree(pts[nets[depth]])
    _, sample_net = tree_deep.query(pts)
    sample_net = np.asarray(sample_net, dtype=int)

    # level-k net index of every sample point, composing the chains upward
    level_net = [None] * (depth + 1)
    level_net[depth] = sample_net
    for k in range(depth, 0, -1):
        level_net[k - 1] = parent_of[k][level_net[k]]

    next_id = 0
    for k in range(depth + 1):
        ids_here: list[int] = []
        at_level: dict[int, int] = {}
        members: dict[int, list[int]] = {}
        for i_sample, j_net in enumerate(level_net[k]):
            members.setdefault(int(j_net), []).append(i_sample)
        for j_net in range(len(nets[k])):
            mem = members.get(j_net)
            if mem is None:
                continue
            cube = Cube(
                id=next_id,
                level=k,
                net_idx=int(nets[k][j_net]),
                center=pts[nets[k][j_net]].copy(),
                side=lat.side(k),
                point_idx=np.asarray(mem, dtype=int),
            )
            lat.cubes[next_id] = cube
            at_level[j_net] = next_id
            ids_here.append(next_id)
            next_id += 1
        lat._level_ids.append(ids_here)
        lat._cube_at.append(at_level)

    for k in range(1, depth + 1):
        for j_net, cid in lat._cube_at[k].items():
            pid = lat._cube_at[k - 1][int(parent_of[k][j_net])]
            lat.cubes[cid].parent = pid
            lat.cubes[pid].children.append(cid)

    sc = []
    for k in range(depth + 1):
        arr = np.array([lat._cube_at[k][int(j)] for j in level_net[k]], dtype=int)
        sc.append(arr)
    lat._sample_cube = sc
    return lat


def attach_planes(
    lat: DyadicLattice,
    window_mult: float,
    refine_iters: int = 0,
    metric: str = "lp",
    max_window_pts: int = 80,
    levels=None,
) -> None:
    """Fit and store a plane per cube on the window ``mult * B_Q``.

    ``refine_iters=0`` keeps the principal-axis fit; the window point count
    is capped by an even-stride subsample for speed.  Degenerate windows
    keep the completed fallback plane.
    """
    E = lat.E
    wanted = range(lat.depth + 1) if levels is None else levels
    for k in wanted:
        for cid in lat.level_ids(k):
            c = lat.cubes[cid]
            ball = Ball(c.center, window_mult * c.side)
            idx = E.restrict(ball)
            if idx.shape[0] == 0:
                idx = c.point_idx
            if idx.shape[0] > max_window_pts:
                stride = idx.shape[0] // max_window_pts + 1
                idx = idx[::stride]
            sub = BoundarySampleView(E, idx)
            try:
                if refine_iters > 0:
                    c.plane = fit_plane(sub, ball, metric=metric, refine_iters=refine_iters)
                else:
                    c.plane = pca_plane(E.points[idx], E.dim_d)
            except DegenerateCloud as exc:
                c.plane = exc.plane


class BoundarySampleView(BoundarySample):
    """Restriction of a sample to an index subset, sharing dim/spacing."""

    def __init__(self, E: BoundarySample, idx: np.ndarray):
        self.points = E.points[idx]
        self.spacing = E.spacing
        self.dim_d = E.dim_d
        self.lower_reg_c = E.lower_reg_c
        self._tree = None


# --------------------------------------------------------------------------
# Whitney boxes in the upper half-space
# --------------------------------------------------------------------------

ROOT_HALF_WIDTH = 2.0  # root footprint [-2, 2]^d
ROOT_HEIGHT = 4.0  # root heights [4, 8]


@dataclass(frozen=True)
class WhitneyBox:
    """Order-p box: side = 2^-p * height, exact dyadic coordinates.

    ``n`` counts generations below the root layer (heights [4,8] at n=0,
    negative n allowed for taller boxes); ``k`` indexes the horizontal
    cell, axis i spanning [-2 + k_i * side, -2 + (k_i+1) * side].
    """

    p: int
    n: int
    k: tuple

    @property
    def h(self) -> float:
        return ROOT_HEIGHT * 2.0 ** (-self.n)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.p) * self.h

    @property
    def d(self) -> int:
        return len(self.k)

    def bounds(self, unit: float = 1.0):
        s = self.side
        lo = np.array([-ROOT_HALF_WIDTH + ki * s for ki in self.k] + [self.h], float)
        hi = lo + np.array([s] * self.d + [self.h], float)
        return lo * unit, hi * unit

    @property
    def center(self) -> np.ndarray:
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)

    @property
    def bot_center(self) -> np.ndarray:
        lo, hi = self.bounds()
        c = 0.5 * (lo + hi)
        c[-1] = lo[-1]
        return c

    @property
    def diam(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def children(self):
        out = []
        for bits in np.ndindex(*([2] * self.d)):
            kk = tuple(2 * ki + b for ki, b in zip(self.k, bits))
            out.append(WhitneyBox(self.p, self.n + 1, kk))
        return sorted(out, key=lambda b: b.k)

    def parent(self):
        kk = tuple(ki // 2 for ki in self.k)
        return WhitneyBox(self.p, self.n - 1, kk)

    def footprint_contains(self, other: "WhitneyBox") -> bool:
        """Partial order: other <= self iff pi(other) inside pi(self)."""
        if other.n < self.n:
            return False
        shift = other.n - self.n
        return all(oki >> shift == ski for oki, ski in zip(other.k, self.k))

    def surface_samples(self, unit: float = 1.0, per_axis: int = 3) -> np.ndarray:
        """Deterministic point samples of the box boundary (corners + faces)."""
        lo, hi = self.bounds(unit)
        axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(len(lo))]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
        on_face = np.zeros(mesh.shape[0], dtype=bool)
        for i in range(len(lo)):
            on_face |= np.isclose(mesh[:, i], lo[i]) | np.isclose(mesh[:, i], hi[i])
        return mesh[on_face]


def root_boxes(p: int, d: int) -> list[WhitneyBox]:
    """Order-p boxes tiling the root cube footprint at heights [4, 8]."""
    per_axis = 2**p
    out = []
    for k in np.ndindex(*([per_axis] * d)):
        out.append(WhitneyBox(p, 0, tuple(int(v) for v in k)))
    return sorted(out, key=lambda b: b.k)


def whitney_boxes(root: WhitneyBox, p: int):
    """Lazy descendant family of ``root`` (navigation via the box methods)."""
    if root.p != p:
        raise ValueError("root order disagrees with requested order")
    return WhitneyFamily(root)


class WhitneyFamily:
    def __init__(self, root: WhitneyBox):
        self.root = root

    def generation(self, g: int) -> list[WhitneyBox]:
        boxes = [self.root]
        for _ in range(g):
            boxes = [c for b in boxes for c in b.children()]
        return boxes

    def descendants(self, max_gen: int) -> list[WhitneyBox]:
        out = []
        for g in range(max_gen + 1):
            out.extend(self.generation(g))
        return out


# --------------------------------------------------------------------------
# extents, A-closeness, and the closeness index
# --------------------------------------------------------------------------


class BoxExtent:
    """Axis-aligned box extent with exact diameter and distances."""

    def __init__(self, lo, hi, key=None):
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.key = key

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def dist_to(self, other) -> float:
        if isinstance(other, BoxExtent):
            gap = np.maximum(
                np.maximum(other.lo - self.hi, self.lo - other.hi), 0.0
            )
            return float(np.linalg.norm(gap))
        return other.dist_to(self)


class BallExtent:
    """Ball extent: diameter 2r, distances measured to the sphere's solid."""

    def __init__(self, center, radius, key=None):
        self.center = np.asarray(center, float)
        self.radius = float(radius)
        self.key = key

    @property
    def diam(self) -> float:
        return 2.0 * self.radius

    def dist_to(self, other) -> float:
        if isinstance(other, BallExtent):
            gap = np.linalg.norm(self.center - other.center)
            return max(0.0, gap - self.radius - other.radius)
        if isinstance(other, BoxExtent):
            clamped = np.clip(self.center, other.lo, other.hi)
            return max(0.0, float(np.linalg.norm(self.center - clamped)) - self.radius)
        # PointsExtent
        d, _ = other.tree.query(self.center)
        return max(0.0, float(d) - self.radius)


class PointsExtent:
    """Finite point-set extent; diameter over the points, exact distances."""

    def __init__(self, points, key=None):
        self.points = np.atleast_2d(np.asarray(points, float))
        self.key = key
        self._diam = None
        self._tree = None

    @property
    def diam(self) -> float:
        if self._diam is None:
            self._diam = _point_set_diam(self.points)
        return self._diam

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.points.min(axis=0) + self.points.max(axis=0))

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def dist_to(self, other) -> float:
        if isinstance(other, PointsExtent):
            d, _ = self.tree.query(other.points)
            return float(np.min(d))
        if isinstance(other, BallExtent):
            return other.dist_to(self)
        # other is a BoxExtent: clamp each point into the box
        clamped = np.clip(self.points, other.lo, other.hi)
        return float(np.min(np.linalg.norm(self.points - clamped, axis=1)))


def a_close(u, v, A: float) -> bool:
    """Comparable diameters (ratio <= A) at distance <= A * (diam sum)."""
    du, dv = u.diam, v.diam
    if du <= 0.0 or dv <= 0.0:
        raise ZeroDiameter("A-closeness needs positive diameters")
    if dv > A * du or du > A * dv:
        return False
    return u.dist_to(v) <= A * (du + dv)


class CloseIndex:
    """Diameter-octave + location grid over a family of extents."""

    def __init__(self, extents):
        self.extents = list(extents)
        self.by_octave: dict[int, dict[tuple, list[int]]] = {}
        for i, ext in enumerate(self.extents):
            if ext.diam <= 0.0:
                raise ZeroDiameter("indexed extents need positive diameters")
            o = int(np.floor(np.log2(ext.diam)))
            cell = 2.0**o
            key = tuple(np.floor(ext.center / cell).astype(np.int64))
            self.by_octave.setdefault(o, {}).setdefault(key, []).append(i)

    def query(self, target, A: float, whitney_c0: float = None) -> list[int]:
        """Ids of family members A-close to ``target`` (exact, index-accelerated).

        With ``whitney_c0`` given, asserts the ball-packing cardinality bound
        for Whitney families.
        """
        dt = target.diam
        if dt <= 0.0:
            raise ZeroDiameter("target needs positive diameter")
        o_lo = int(np.floor(np.log2(dt / A))) - 1
        o_hi = int(np.ceil(np.log2(dt * A))) + 1
        c_t = target.center
        hits = []
        for o in range(o_lo, o_hi + 1):
            grid = self.by_octave.get(o)
            if not grid:
                continue
            cell = 2.0**o
            reach = (A + 1.0) * (dt + 2.0 ** (o + 1)) + cell
            lo = np.floor((c_t - reach) / cell).astype(np.int64)
            hi = np.floor((c_t + reach) / cell).astype(np.int64)
            for key, ids in grid.items():
                kk = np.asarray(key)
                if np.all(kk >= lo) and np.all(kk <= hi):
                    for i in ids:
                        if a_close(self.extents[i], target, A):
                            hits.append(i)
        hits = sorted(set(hits))
        if whitney_c0 is not None:
            amb = target.center.shape[0]
            bound = (3.0 * A**2 * whitney_c0 + 2.0) ** amb
            assert len(hits) <= bound, (
                f"closeness count {len(hits)} exceeds packing bound {bound:.0f}"
            )
        return hits


def close_query(family: CloseIndex, target, A: float, whitney_c0: float = None) -> list[int]:
    """Exactly the members A-close to ``target``; empty family gives []."""
    if not family.extents:
        return []
    return family.query(target, A, whitney_c0=whitney_c0)


def cube_extent(lat: DyadicLattice, cid: int) -> PointsExtent:
    """Point-set extent of a cube; single-point cubes get a tiny synthetic pair
    so the extent has positive diameter."""
    c = lat.cubes[cid]
    pts = lat.E.points[c.point_idx]
    ext = PointsExtent(pts, key=cid)
    if ext.diam <= 0.0:
        pad = np.zeros((2, lat.E.ambient))
        pad[1, 0] = 0.05 * c.side
        ext = PointsExtent(np.vstack([pts, pts[0] + pad]), key=cid)
    return ext
