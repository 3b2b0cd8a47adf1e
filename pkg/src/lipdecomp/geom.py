"""Core geometric primitives: planes, balls, boundary samples, nets, content.

Points are numpy arrays of shape (n,) living in R^(d+1) with d = 1 or 2;
point clouds are arrays of shape (m, d+1).  All quantities that the theory
states as suprema over closed sets are maxima over sampled points, with the
sample's ``spacing`` recording the fidelity of that replacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateCloud,
    DimensionMismatch,
    EmptyIntersection,
)

_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class Plane:
    """Affine d-plane through ``base`` spanned by the orthonormal rows of ``frame``."""

    base: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        frame = np.atleast_2d(np.asarray(self.frame, dtype=float))
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "frame", frame)
        gram = frame @ frame.T
        if not np.allclose(gram, np.eye(frame.shape[0]), atol=1e-8):
            raise ValueError("plane frame is not orthonormal")

    @property
    def dim(self) -> int:
        return self.frame.shape[0]

    @property
    def ambient(self) -> int:
        return self.base.shape[0]

    @property
    def normal(self) -> np.ndarray:
        """Unit normal, defined for hyperplanes (dim == ambient - 1)."""
        if self.dim != self.ambient - 1:
            raise DimensionMismatch("normal defined only in codimension 1")
        # Full SVD of the frame exposes the orthogonal complement.
        _, _, vt = np.linalg.svd(self.frame, full_matrices=True)
        return vt[-1]

    def project(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rel = pts - self.base
        return self.base + (rel @ self.frame.T) @ self.frame

    def dist(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rej = (pts - self.base) - ((pts - self.base) @ self.frame.T) @ self.frame
        return np.linalg.norm(rej, axis=1)

    def coords(self, pts: np.ndarray) -> np.ndarray:
        """In-plane coordinates of the projections of ``pts``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (pts - self.base) @ self.frame.T

    def from_coords(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        return self.base + uv @ self.frame


@dataclass(frozen=True)
class Ball:
    """Euclidean ball; ``scaled`` dilates about the same center."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def diam(self) -> float:
        return 2.0 * self.radius

    def scaled(self, lam: float) -> "Ball":
        return Ball(self.center, lam * self.radius)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius


@dataclass(frozen=True)
class Box:
    """Axis-aligned box used as a beta-number window."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if np.any(hi < lo):
            raise ValueError("box needs lo <= hi")

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)


class BoundarySample:
    """Finite point cloud standing in for a d-dimensional boundary set.

    ``spacing`` is the maximum gap from the underlying set to the sample;
    tolerances downstream are stated as multiples of it.  ``lower_reg_c``
    is the assumed lower-content-regularity constant.
    """

    def __init__(self, points, spacing, dim_d, lower_reg_c=1.0):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[0] == 0:
            raise ValueError("boundary sample needs at least one point")
        if spacing <= 0:
            raise ValueError("spacing must be positive")
        if dim_d not in (1, 2):
            raise ValueError("dim_d must be 1 or 2")
        if points.shape[1] != dim_d + 1:
            raise DimensionMismatch(
                f"points of a d={dim_d} sample must live in R^{dim_d + 1}"
            )
        self.points = points
        self.spacing = float(spacing)
        self.dim_d = int(dim_d)
        self.lower_reg_c = float(lower_reg_c)
        self._tree = None
        if points.shape[0] > 1:
            dup = self.tree.query_pairs(self.spacing / 10.0)
            if dup:
                raise ValueError(f"{len(dup)} duplicate points within spacing/10")

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    @property
    def ambient(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def restrict(self, window) -> np.ndarray:
        """Indices of sample points inside a Ball or Box window."""
        if isinstance(window, Ball):
            idx = self.tree.query_ball_point(window.center, window.radius)
            return np.asarray(sorted(idx), dtype=int)
        mask = window.contains(self.points)
        return np.flatnonzero(mask)

    def nearest_dist(self, pts: np.ndarray) -> np.ndarray:
        d, _ = self.tree.query(np.atleast_2d(np.asarray(pts, dtype=float)))
        return d


def _restricted(sample, window):
    if isinstance(sample, BoundarySample):
        idx = sample.restrict(window)
        return sample.points[idx]
    pts = np.atleast_2d(np.asarray(sample, dtype=float))
    return pts[window.contains(pts)]


def _full_points(sample):
    if isinstance(sample, BoundarySample):
        return sample.points
    return np.atleast_2d(np.asarray(sample, dtype=float))


def hausdorff_in_ball(E, F, B: Ball) -> float:
    """Normalized two-sided Hausdorff distance between E and F inside B.

    The suprema run over the restrictions E∩B and F∩B; the distances are
    taken to the full opposite set.  Result is symmetric and lies in [0, 2].
    """
    e_in = _restricted(E, B)
    f_in = _restricted(F, B)
    if e_in.shape[0] == 0 or f_in.shape[0] == 0:
        raise EmptyIntersection("ball misses one of the samples")
    f_tree = F.tree if isinstance(F, BoundarySample) else cKDTree(_full_points(F))
    e_tree = E.tree if isinstance(E, BoundarySample) else cKDTree(_full_points(E))
    sup_e = float(np.max(f_tree.query(e_in)[0]))
    sup_f = float(np.max(e_tree.query(f_in)[0]))
    return (2.0 / B.diam) * max(sup_e, sup_f)


def plane_angle(p1: Plane, p2: Plane) -> float:
    """Largest principal angle between the direction subspaces, in [0, pi/2]."""
    if p1.dim != p2.dim or p1.ambient != p2.ambient:
        raise DimensionMismatch("planes of different dimensions")
    sig = np.linalg.svd(p1.frame @ p2.frame.T, compute_uv=False)
    return float(np.arccos(np.clip(sig.min(), -1.0, 1.0)))


def _grid_key(pt, cell):
    return tuple(np.floor(pt / cell).astype(np.int64))


def greedy_net_indices(points: np.ndarray, r: float, seed_idx=None) -> np.ndarray:
    """Greedy r-net of ``points`` scanning in index order.

    Separation >= r between kept points; every input point lies strictly
    within r of a kept one.  ``seed_idx`` forces an initial kept set (used
    to nest lattice levels); seeds are assumed r-separated already.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    # Cell size r: any point within distance r of a query differs by at most
    # one cell index per axis, so the 3^n stencil suffices.
    cell = r
    grid: dict[tuple, list[int]] = {}
    kept: list[int] = []
    offsets = np.array(
        np.meshgrid(*([[-1, 0, 1]] * points.shape[1]), indexing="ij")
    ).reshape(points.shape[1], -1).T

    def accept(i):
        key = _grid_key(points[i], cell)
        for off in offsets:
            for j in grid.get(tuple(key + off), ()):
                if np.linalg.norm(points[i] - points[j]) < r:
                    return False
        return True

    def insert(i):
        key = _grid_key(points[i], cell)
        grid.setdefault(key, []).append(i)
        kept.append(i)

    if seed_idx is not None:
        for i in seed_idx:
            insert(int(i))
    for i in range(points.shape[0]):
        if accept(i):
            insert(i)
    return np.asarray(kept, dtype=int)


def greedy_net(E, r: float) -> np.ndarray:
    """Points of a greedy r-net of the sample, deterministic in input order."""
    pts = _full_points(E)
    return pts[greedy_net_indices(pts, r)]


def content_estimate(E, predicate, B: Ball, scale: float) -> float:
    """Greedy dyadic-cover upper estimate of the d-content of {x in E∩B : predicate}.

    Counts the distinct side-``scale`` grid boxes meeting the selected points
    and charges each its diameter to the d-th power.  Empty selection gives 0.
    """
    pts = _restricted(E, B)
    if pts.shape[0] == 0:
        return 0.0
    sel = np.asarray(predicate(pts), dtype=bool)
    pts = pts[sel]
    if pts.shape[0] == 0:
        return 0.0
    d = E.dim_d if isinstance(E, BoundarySample) else pts.shape[1] - 1
    cells = np.unique(np.floor(pts / scale).astype(np.int64), axis=0)
    box_diam = np.sqrt(pts.shape[1]) * scale
    return float(cells.shape[0] * box_diam**d)


def pca_plane(points: np.ndarray, d: int) -> Plane:
    """Least-squares d-plane through the centroid (principal-axis fit).

    Raises DegenerateCloud (carrying a completed plane) when the points
    span fewer than d affine dimensions.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[1]
    centroid = points.mean(axis=0)
    rel = points - centroid
    _, svals, vt = np.linalg.svd(rel, full_matrices=True)
    svals = np.concatenate([svals, np.zeros(max(0, n - svals.shape[0]))])
    plane = Plane(centroid, vt[:d])
    scale = max(float(svals[0]), 1.0)
    if points.shape[0] <= d or svals[d - 1] <= 1e-12 * scale:
        raise DegenerateCloud("points are affinely degenerate", plane=plane)
    return plane


def _disc_in_ball(plane: Plane, B: Ball):
    """Center (in-plane) and radius of plane∩B; None when they miss."""
    h = float(plane.dist(B.center[None, :])[0])
    if h > B.radius:
        return None
    center = plane.project(B.center[None, :])[0]
    rho = float(np.sqrt(max(B.radius**2 - h**2, 0.0)))
    return center, rho


def _max_affine_norm_on_disc(v0: np.ndarray, A: np.ndarray, rho: float) -> float:
    """max over |u| <= rho of |v0 + A.T @ u| for A of shape (d, n), d in {1, 2}.

    The objective is convex in u, so the maximum sits on the sphere |u| = rho.
    """
    d = A.shape[0]
    if d == 1:
        vals = [np.linalg.norm(v0 + rho * A[0]), np.linalg.norm(v0 - rho * A[0])]
        return float(max(vals))
    if d == 2:
        theta = np.linspace(0.0, 2 * np.pi, 2048, endpoint=False)
        u = rho * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        vals = np.linalg.norm(v0 + u @ A, axis=1)
        k = int(np.argmax(vals))
        # local refinement around the best sample
        lo, hi = theta[k] - 2 * np.pi / 2048, theta[k] + 2 * np.pi / 2048
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            tgrid = np.array([lo, mid, hi])
            u = rho * np.stack([np.cos(tgrid), np.sin(tgrid)], axis=1)
            v = np.linalg.norm(v0 + u @ A, axis=1)
            if v[0] > v[2]:
                hi = mid
            else:
                lo = mid
        t = 0.5 * (lo + hi)
        u = rho * np.array([np.cos(t), np.sin(t)])
        return float(max(np.max(vals), np.linalg.norm(v0 + u @ A)))
    raise DimensionMismatch("plane-ball distance implemented for d in {1, 2}")


def plane_ball_distance(p1: Plane, p2: Plane, B: Ball) -> float:
    """Normalized Hausdorff distance between two plane restrictions to a ball."""
    if p1.dim != p2.dim or p1.ambient != p2.ambient:
        raise DimensionMismatch("planes of different dimensions")

    def one_sided(src: Plane, dst: Plane) -> float:
        disc = _disc_in_ball(src, B)
        if disc is None:
            raise EmptyIntersection("plane misses the ball")
        center, rho = disc
        rej = np.eye(dst.ambient) - dst.frame.T @ dst.frame
        v0 = (center - dst.base) @ rej
        A = src.frame @ rej
        return _max_affine_norm_on_disc(v0, A, rho)

    return (2.0 / B.diam) * max(one_sided(p1, p2), one_sided(p2, p1))


@dataclass(frozen=True)
class Isometry:
    """Rigid motion x -> Q @ x + t with orthogonal Q."""

    q: np.ndarray
    t: np.ndarray

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.q.T + self.t

    def inverse(self) -> "Isometry":
        return Isometry(self.q.T, -self.q.T @ self.t)


def frame_isometry(plane: Plane) -> Isometry:
    """Isometry taking frame coordinates (u, y) to world coordinates.

    Maps R^d x {0} onto the plane (u are in-plane coordinates) and the last
    axis onto the plane's normal.
    """
    q = np.vstack([plane.frame, plane.normal[None, :]]).T
    return Isometry(q, plane.base)
