"""End-to-end decomposition pipelines and their audits.

Two routes produce certified star-shaped pieces covering the domain side
of a sampled boundary:

* the disjoint route builds one global parameterization, mirrors the
  boundary coronization onto a lattice of half-space boxes, carves each
  box region, and pushes the pieces forward (pairwise-disjoint interiors);
* the bounded-overlap route picks well-separated interior centers, builds
  a local parameterization per flat center (trivial cubes per non-flat
  center), carves each local stopping domain, and pads it with a buffer
  of nearby boxes so the pieces cover the window at the cost of bounded
  overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beta import beta_value
from .carve import (
    CarvedPiece,
    WhitneyRegion,
    carve_pieces,
    certify_pushed_domain,
)
from .corona import CoronaParams, Coronization, graph_coronization
from .errors import (
    CCBPViolation,
    CenterOutside,
    CertificationFailure,
    FlatnessFailure,
    InsufficientResolution,
)
from .geom import Ball, BoundarySample, content_estimate
from .lattice import (
    BallExtent,
    BoxExtent,
    CloseIndex,
    DyadicLattice,
    PointsExtent,
    WhitneyBox,
    a_close,
    attach_planes,
    build_lattice,
    cube_extent,
    root_boxes,
)
from .reifmap import ParamMap, build_ccbp, ratio_audit


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Knobs for both pipelines; ``toy`` scales the closeness constants down
    to desk scale, ``paper`` keeps the stated formulas."""

    dim_d: int = 1
    profile: str = "toy"
    rho: float = None
    depth: int = None
    nu: float = 5.0
    A0: float = 8.0
    A1: float = 16.0
    a_surround: float = None  # image-box closeness for good/bad classification
    a_classify: float = None  # center flatness closeness
    a_buffer: float = 3.0  # buffer-box closeness around local domains
    reject_factor: float = None  # greedy center spacing, units of dist to boundary
    M: float = 16.0
    K: float = 4.0
    eps: float = 0.15
    delta: float = 0.30
    alpha: float = 0.15
    tau: float = 0.30
    eta: float = None
    eps_ccbp: float = 0.35
    k_max: int = None
    h_floor_units: float = 2.0  # box floor in units of the deepest net radius
    grid_divisor: int = 8
    n_dirs: int = None
    ratio_pairs: int = 600
    trials: int = 10000
    seed: int = 0
    window_radius: float = None
    overlap_bound: int = None

    def __post_init__(self):
        if self.eta is None:
            self.eta = self.eps**2
        if self.n_dirs is None:
            self.n_dirs = 128 if self.dim_d == 1 else 1024
        if self.rho is None:
            # the gentle scale ratio lets small closeness constants bridge
            # adjacent cube-diameter levels in both dimensions
            self.rho = 0.25
        if self.depth is None:
            self.depth = 6 if self.dim_d == 1 else 4
        if self.a_surround is None:
            self.a_surround = 3.0
        if self.a_classify is None:
            self.a_classify = 4.0
        if self.reject_factor is None:
            # the paper's A0/30 exceeds 3 sqrt(d), which is what keeps the
            # core domains disjoint; the toy A0 does not, so the invariant is
            # restored directly
            self.reject_factor = max(self.A0 / 30.0, 3.5 * np.sqrt(self.dim_d))
        if self.window_radius is None:
            # generators normalize the sample into one lattice root's reach
            # (inside B(0, 0.9)); the audited window scales along
            self.window_radius = 0.5 if self.dim_d == 1 else 0.35
        if self.overlap_bound is None:
            self.overlap_bound = 16 if self.dim_d == 1 else 64

    @classmethod
    def paper(cls, dim_d: int = 1, **kw):
        rho = 1.0 / 1000.0
        c0 = 1.0 / 500.0
        a0 = 1000.0 * np.sqrt(dim_d) / (c0 * rho)
        a1 = max(20 * a0**2, 2000 * np.sqrt(dim_d) * a0 / (c0 * rho))
        k = 1.0e4 / rho
        return cls(
            dim_d=dim_d, profile="paper", rho=rho, nu=50.0, A0=a0, A1=a1,
            a_surround=a0, a_classify=10 * np.sqrt(dim_d) * a1, a_buffer=a0,
            M=10 * k / rho**2, K=k, **kw,
        )


@dataclass
class GWhitneyCoronization:
    good: set
    bad: set
    regions: list  # (WhitneyRegion, surface-region id)
    floor_n: int
    p_order: int
    box_region: dict = field(default_factory=dict)


@dataclass
class CenterSet:
    flat: list
    nonflat: list
    rejected: int
    demoted: int


# --------------------------------------------------------------------------
# pieces
# --------------------------------------------------------------------------


@dataclass
class DecompPiece:
    """One emitted domain: a mapped carved piece or a mapped/plain box."""

    pid: int
    provenance: str  # region-piece | trivial-cube | buffer-cube
    pm: ParamMap | None
    hdilate: int
    carved: CarvedPiece | None
    box: tuple | None  # (lo, hi) in frame coordinates
    meta: dict = field(default_factory=dict)
    center_world: np.ndarray = None
    lipschitz_est: float = None
    star_ok: bool = None
    bbox: tuple = None

    # -- coordinates ---------------------------------------------------------

    def _to_frame(self, carve_pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(carve_pts, float)).copy()
        if self.hdilate:
            pts[:, :-1] /= 2.0**self.hdilate
        return pts

    def _to_carve(self, frame_pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(frame_pts, float)).copy()
        if self.hdilate:
            pts[:, :-1] *= 2.0**self.hdilate
        return pts

    def _push(self, frame_pts: np.ndarray) -> np.ndarray:
        if self.pm is None:
            return np.atleast_2d(np.asarray(frame_pts, float))
        return self.pm.g_eval_many(frame_pts, strict=False)

    def domain_center_frame(self) -> np.ndarray:
        if self.carved is not None:
            return self._to_frame(self.carved.center[None, :])[0]
        lo, hi = self.box
        return 0.5 * (np.asarray(lo) + np.asarray(hi))

    # -- world-side geometry ---------------------------------------------------

    def boundary_samples_frame(self, per_face: int = 1, face_grid: int = 3,
                               max_pts: int = 30000):
        if self.carved is not None:
            pts = self.carved.boundary_points(per_face)
            if pts.shape[0] > max_pts:
                pts = pts[:: pts.shape[0] // max_pts + 1]
            return self._to_frame(pts)
        lo, hi = np.asarray(self.box[0]), np.asarray(self.box[1])
        n = lo.shape[0]
        pts = []
        axes = [np.linspace(lo[i], hi[i], face_grid) for i in range(n)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        on_face = np.zeros(mesh.shape[0], dtype=bool)
        for i in range(n):
            on_face |= np.isclose(mesh[:, i], lo[i]) | np.isclose(mesh[:, i], hi[i])
        return mesh[on_face]

    def boundary_samples_world(self, per_face: int = 1, face_grid: int = 3):
        return self._push(self.boundary_samples_frame(per_face, face_grid))

    def boundary_simplices_world(self):
        """Boundary simplices (segments d=1, triangles d=2) in world coords.

        Simplex vertices are grid corners shared by many faces; each unique
        vertex is pushed through the map once.
        """
        if self.carved is not None:
            faces = self.carved.boundary_faces()
            res = self.carved.grid.res
            out = []
            for ax, idx, sign in faces:
                c = self.carved.grid.center_of(idx)
                c[ax] += sign * res / 2.0
                others = [a for a in range(len(idx)) if a != ax]
                if len(others) == 1:
                    a = c.copy(); a[others[0]] -= res / 2
                    b = c.copy(); b[others[0]] += res / 2
                    out.append(np.stack([a, b]))
                else:
                    o1, o2 = others
                    corners = []
                    for s1 in (-0.5, 0.5):
                        for s2 in (-0.5, 0.5):
                            q = c.copy()
                            q[o1] += s1 * res
                            q[o2] += s2 * res
                            corners.append(q)
                    out.append(np.stack([corners[0], corners[1], corners[3]]))
                    out.append(np.stack([corners[0], corners[3], corners[2]]))
            k = out[0].shape[0]
            verts = self._to_frame(np.concatenate(out).reshape(-1, out[0].shape[1]))
            keys, inv = np.unique(
                np.round(verts / (res * 1e-6)).astype(np.int64),
                axis=0, return_inverse=True,
            )
            unique_pts = keys.astype(float) * (res * 1e-6)
            pushed_unique = self._push(unique_pts)
            pushed = pushed_unique[inv]
            return pushed.reshape(-1, k, pushed.shape[1])
        lo, hi = np.asarray(self.box[0]), np.asarray(self.box[1])
        n = lo.shape[0]
        sims = []
        for ax in range(n):
            for side_val in (lo[ax], hi[ax]):
                others = [a for a in range(n) if a != ax]
                if n == 2:
                    a = np.zeros(2); b = np.zeros(2)
                    a[ax] = b[ax] = side_val
                    a[others[0]], b[others[0]] = lo[others[0]], hi[others[0]]
                    sims.append(np.stack([a, b]))
                else:
                    o1, o2 = others
                    g1 = np.linspace(lo[o1], hi[o1], 3)
                    g2 = np.linspace(lo[o2], hi[o2], 3)
                    for i in range(2):
                        for j in range(2):
                            q = []
                            for s1, s2 in ((0, 0), (1, 0), (1, 1), (0, 1)):
                                v = np.zeros(3)
                                v[ax] = side_val
                                v[o1] = g1[i + s1]
                                v[o2] = g2[j + s2]
                                q.append(v)
                            sims.append(np.stack([q[0], q[1], q[2]]))
                            sims.append(np.stack([q[0], q[2], q[3]]))
        verts = np.concatenate(sims).reshape(-1, n)
        pushed = self._push(verts)
        k = sims[0].shape[0]
        return pushed.reshape(-1, k, pushed.shape[1])

    def world_bbox(self, margin: float):
        pts = self.boundary_samples_world()
        self.bbox = (pts.min(axis=0) - margin, pts.max(axis=0) + margin)
        return self.bbox

    def face_data_frame(self, max_faces: int = 20000):
        """(face centers, face corner tuples, inner points) in frame coords.

        Voxel faces are strided down to ``max_faces``: certification needs a
        quasi-uniform boundary sample, not every facet.
        """
        if self.carved is not None:
            res = self.carved.grid.res
            centers, corners, inners = [], [], []
            faces = self.carved.boundary_faces()
            if len(faces) > max_faces:
                stride = len(faces) // max_faces + 1
                faces = faces[::stride]
            for ax, idx, sign in faces:
                inner = self.carved.grid.center_of(idx)
                q = inner.copy()
                q[ax] += sign * res / 2.0
                others = [a for a in range(len(idx)) if a != ax]
                if len(others) == 1:
                    a = q.copy(); a[others[0]] -= res / 2
                    b = q.copy(); b[others[0]] += res / 2
                    cs = [a, b]
                else:
                    cs = []
                    for s1 in (-0.5, 0.5):
                        for s2 in (-0.5, 0.5):
                            v = q.copy()
                            v[others[0]] += s1 * res
                            v[others[1]] += s2 * res
                            cs.append(v)
                    cs = [cs[0], cs[1], cs[3]]
                centers.append(q)
                corners.append(cs)
                inners.append(inner)
            centers = self._to_frame(np.asarray(centers))
            inners = self._to_frame(np.asarray(inners))
            k = len(corners[0])
            corn = self._to_frame(np.asarray(corners).reshape(-1, centers.shape[1]))
            return centers, corn.reshape(-1, k, centers.shape[1]), inners
        lo, hi = np.asarray(self.box[0]), np.asarray(self.box[1])
        n = lo.shape[0]
        sub = 3
        centers, corners, inners = [], [], []
        mid = 0.5 * (lo + hi)
        for ax in range(n):
            others = [a for a in range(n) if a != ax]
            grids = [np.linspace(lo[o], hi[o], sub + 1) for o in others]
            for side_val, sign in ((lo[ax], -1.0), (hi[ax], 1.0)):
                for cell in np.ndindex(*([sub] * len(others))):
                    q = np.zeros(n)
                    q[ax] = side_val
                    cs = []
                    for o_i, o in enumerate(others):
                        g = grids[o_i]
                        q[o] = 0.5 * (g[cell[o_i]] + g[cell[o_i] + 1])
                    if n == 2:
                        o = others[0]
                        g = grids[0]
                        a = q.copy(); a[o] = g[cell[0]]
                        b = q.copy(); b[o] = g[cell[0] + 1]
                        cs = [a, b]
                    else:
                        o1, o2 = others
                        g1, g2 = grids
                        for s1, s2 in ((0, 0), (1, 0), (0, 1)):
                            v = q.copy()
                            v[o1] = g1[cell[0] + s1]
                            v[o2] = g2[cell[1] + s2]
                            cs.append(v)
                    inner = q.copy()
                    inner[ax] -= sign * min(0.2 * (hi[ax] - lo[ax]), 0.5 * abs(hi[ax] - lo[ax]))
                    centers.append(q)
                    corners.append(cs)
                    inners.append(inner)
        k = len(corners[0])
        return (
            np.asarray(centers),
            np.asarray(corners).reshape(-1, k, n),
            np.asarray(inners),
        )

    def contains_world(self, pts: np.ndarray) -> np.ndarray:
        """Membership via the inverse map and the domain-side geometry."""
        pts = np.atleast_2d(np.asarray(pts, float))
        out = np.zeros(pts.shape[0], dtype=bool)
        if self.bbox is not None:
            lo, hi = self.bbox
            cand = np.flatnonzero(np.all((pts >= lo) & (pts <= hi), axis=1))
        else:
            cand = np.arange(pts.shape[0])
        for i in cand:
            z = pts[i]
            if self.pm is None:
                w = z
            else:
                w = self.pm.g_inverse(z)
            out[i] = self._frame_contains(w)
        return out

    def _frame_contains(self, w: np.ndarray) -> bool:
        if self.carved is not None:
            cw = self._to_carve(w[None, :])[0]
            return bool(self.carved.contains(cw[None, :])[0])
        lo, hi = self.box
        return bool(np.all(w >= lo) and np.all(w <= hi))

    def domain_volume(self) -> float:
        if self.carved is not None:
            return self.carved.volume() / 2.0 ** (
                self.hdilate * (len(self.carved.grid.shape) - 1)
            )
        lo, hi = np.asarray(self.box[0]), np.asarray(self.box[1])
        return float(np.prod(hi - lo))


@dataclass
class Decomposition:
    mode: str
    profile: str
    pieces: list
    audits: dict
    cfg: PipelineConfig
    extras: dict = field(default_factory=dict)

    def dump_record(self) -> dict:
        return {
            "mode": self.mode,
            "profile": self.profile,
            "pieces": [
                {
                    "id": p.pid,
                    "provenance": p.provenance,
                    "center": [float(v) for v in p.center_world],
                    "lipschitz_est": p.lipschitz_est,
                    "star_ok": bool(p.star_ok),
                    "meta": {
                        k: v for k, v in p.meta.items() if isinstance(v, (int, float, str))
                    },
                }
                for p in self.pieces
            ],
            "audits": self.audits,
        }


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------


def prepare_lattice(E: BoundarySample, cfg: PipelineConfig) -> tuple:
    lat = build_lattice(E, cfg.depth, cfg.rho)
    attach_planes(lat, window_mult=cfg.M)
    params = CoronaParams(
        M=cfg.M, eps=cfg.eps, delta=cfg.delta, alpha=cfg.alpha, tau=cfg.tau,
        eta=cfg.eta, refine_iters=0,
    )
    cor = graph_coronization(lat, E, params)
    return lat, cor


def _cube_index(lat: DyadicLattice):
    ids_sorted = sorted(lat.cubes)
    return ids_sorted, CloseIndex([cube_extent(lat, cid) for cid in ids_sorted])


def _box_floor_n(unit: float, h_floor: float) -> int:
    n = int(np.floor(np.log2(4.0 * unit / h_floor)))
    return max(n, 1)


def g_whitney_coronization(
    pm: ParamMap,
    lat: DyadicLattice,
    cor: Coronization,
    A0: float,
    p_order: int,
    h_floor: float,
    x_window: float = None,
) -> GWhitneyCoronization:
    """Mirror the surface coronization onto the order-p box lattice.

    A box is good when its image's A0-close cubes all live in one surface
    region (an empty close set is bad, mirroring the non-flat convention
    for centers); regions grow all-or-none through same-region children.
    ``x_window`` clips the lattice horizontally to the sampled territory:
    boxes past the data edge have no meaningful image neighborhood.
    """
    unit = pm.ccbp.unit
    d = pm.dim_d
    floor_n = _box_floor_n(unit, h_floor)
    ids_sorted, cube_idx = _cube_index(lat)

    def in_window(b):
        if x_window is None:
            return True
        lo, hi = b.bounds(unit)
        return bool(
            np.all(lo[:-1] <= x_window) and np.all(hi[:-1] >= -x_window)
        )

    region_of_box = {}
    good, bad = set(), set()
    gens = [[b for b in root_boxes(p_order, d) if in_window(b)]]
    for _ in range(floor_n):
        gens.append(
            [c for b in gens[-1] for c in b.children() if in_window(c)]
        )

    for gen in gens:
        for b in gen:
            samples = b.surface_samples(unit=unit, per_axis=3)
            images = pm.g_eval_many(samples, strict=False)
            ext = PointsExtent(images)
            hits = cube_idx.query(ext, A0) if ext.diam > 0 else []
            sids = {cor.region_of.get(ids_sorted[i]) for i in hits}
            if hits and None not in sids and len(sids) == 1:
                good.add(b)
                region_of_box[b] = sids.pop()
            else:
                bad.add(b)

    regions = []
    assigned = set()
    for gen in gens:
        for b in gen:
            if b in assigned or b not in good:
                continue
            sid = region_of_box[b]
            members = {b}
            frontier = [b]
            while frontier:
                cur = frontier.pop(0)
                if cur.n >= floor_n:
                    continue
                kids = cur.children()
                if all(
                    k in good and k not in assigned and region_of_box[k] == sid
                    for k in kids
                ):
                    members.update(kids)
                    frontier.extend(kids)
            region = WhitneyRegion(top=b, members=frozenset(members), floor_n=floor_n)
            regions.append((region, sid))
            assigned |= members

    return GWhitneyCoronization(
        good=good, bad=bad, regions=regions, floor_n=floor_n, p_order=p_order,
        box_region=region_of_box,
    )


def _full_tree_box(region: WhitneyRegion, unit: float):
    """Frame box of a region with no stopped boxes (a solid prism)."""
    lo_all, hi_all = region.top.bounds(unit)
    h_min = min(b.bounds(unit)[0][-1] for b in region.members)
    lo = lo_all.copy()
    lo[-1] = h_min
    return lo, hi_all


def _solid_block_box(cp: CarvedPiece, hdilate: int):
    """Frame-coordinate box of a carved piece that is one solid voxel block."""
    idx = np.argwhere(cp.mask)
    lo_i = idx.min(axis=0)
    hi_i = idx.max(axis=0) + 1
    if int(cp.mask.sum()) != int(np.prod(hi_i - lo_i)):
        return None
    lo = cp.grid.origin + lo_i * cp.grid.res
    hi = cp.grid.origin + hi_i * cp.grid.res
    lo[:-1] /= 2.0**hdilate
    hi[:-1] /= 2.0**hdilate
    return lo, hi


def _region_piece(pid, pm, hdilate, cp, meta):
    """Wrap a carved piece, demoting solid blocks to analytic box pieces."""
    block = _solid_block_box(cp, hdilate)
    if block is not None:
        return DecompPiece(
            pid=pid, provenance="region-piece", pm=pm, hdilate=0,
            carved=None, box=block, meta=dict(meta, block=1),
        )
    return DecompPiece(
        pid=pid, provenance="region-piece", pm=pm, hdilate=hdilate,
        carved=cp, box=None, meta=meta,
    )


def _chop_bad_box(box: WhitneyBox, p: int, unit: float):
    """Split an order-p box into its 2^p stacked side-l(W) cubes."""
    lo, hi = box.bounds(unit)
    side = float(hi[0] - lo[0])
    out = []
    for j in range(2**p):
        clo = lo.copy()
        chi = hi.copy()
        clo[-1] = lo[-1] + j * side
        chi[-1] = clo[-1] + side
        out.append((clo, chi))
    return out


def _push_face_normals(piece: DecompPiece):
    """Pushed face centers and outward unit normals of the piece boundary.

    Box faces use their exact pushed tangents.  Voxel faces of a carved
    piece carry staircase normals that systematically back-face on slanted
    boundaries, so the normal at each face is estimated from the pushed
    face centers in a small neighborhood instead (the staircase averages
    out to the true surface slope).
    """
    from .geom import pca_plane
    from .errors import DegenerateCloud
    from scipy.spatial import cKDTree

    centers, corners, inners = piece.face_data_frame()
    m, k, n = corners.shape
    pc = piece._push(centers)
    pi = piece._push(inners)
    if piece.carved is None:
        pk = piece._push(corners.reshape(-1, n)).reshape(m, k, n)
        if n == 2:
            tang = pk[:, 1] - pk[:, 0]
            nu = np.stack([-tang[:, 1], tang[:, 0]], axis=1)
        else:
            nu = np.cross(pk[:, 1] - pk[:, 0], pk[:, 2] - pk[:, 0])
    else:
        res = piece.carved.grid.res / 2.0**piece.hdilate
        tree = cKDTree(centers)
        hoods = tree.query_ball_point(centers, 3.5 * res)
        nu = np.zeros((m, n))
        for i, hood in enumerate(hoods):
            hood = np.asarray(hood, int)
            if hood.shape[0] <= n:
                _, hood = tree.query(centers[i], k=min(n + 3, m))
                hood = np.atleast_1d(hood)
            try:
                pl = pca_plane(pc[hood], n - 1)
                nu[i] = pl.normal
            except DegenerateCloud:
                nu[i] = 0.0
    norms = np.linalg.norm(nu, axis=1)
    good = norms > 1e-14
    nu[good] = nu[good] / norms[good][:, None]
    flip = np.einsum("ij,ij->i", nu, pc - pi) < 0
    nu[flip] = -nu[flip]
    return pc[good], nu[good]


def _certify_piece(piece: DecompPiece, n_dirs: int, align_tol: float):
    """Certify one emitted piece.

    Star-shapedness is established on the domain side (exact voxel ray
    cast for carved pieces, trivially for boxes) and transported through
    the map; the pushed smoothed-normal alignment guards the transport and
    the Lipschitz estimate is measured on the pushed radial samples.
    """
    if piece.carved is not None and piece.carved.lipschitz_est is None:
        from .carve import certify_voxel_domain
        from .errors import CertificationFailure as CF

        ok_dom, lip_dom, *_ = certify_voxel_domain(
            piece.carved.mask, piece.carved.grid, piece.carved.center,
            max(n_dirs, 64),
        )
        if not ok_dom:
            raise CF(piece.pid, "domain-side ray crosses the boundary twice")
        piece.carved.lipschitz_est = lip_dom
    pts, normals = _push_face_normals(piece)
    center = piece._push(piece.domain_center_frame()[None, :])[0]
    ok, lip, align, dirs, vals = certify_pushed_domain(
        pts, normals, center, n_dirs, align_tol=align_tol
    )
    if not ok:
        raise CertificationFailure(
            piece.pid, f"pushed boundary back-faces (alignment {align:.3f})"
        )
    piece.center_world = center
    piece.lipschitz_est = float(lip)
    piece.star_ok = bool(ok)
    piece.meta["min_alignment"] = float(align)
    if piece.carved is not None:
        piece.meta["domain_lipschitz"] = float(piece.carved.lipschitz_est)


# --------------------------------------------------------------------------
# disjoint pipeline
# --------------------------------------------------------------------------


def theorem_a_decompose(E: BoundarySample, cfg: PipelineConfig) -> Decomposition:
    """Disjoint decomposition through one global parameterization."""
    lat, cor = prepare_lattice(E, cfg)
    if cor.bad:
        raise FlatnessFailure(sorted(cor.bad))
    ccbp = build_ccbp(
        lat, A0=cfg.A0, nu=cfg.nu, eps_threshold=cfg.eps_ccbp, k_max=cfg.k_max
    )
    up = ccbp.base_plane.base + np.eye(E.ambient)[-1]
    pm = ParamMap(ccbp, up_world=up)
    audit = ratio_audit(pm, n_pairs=cfg.ratio_pairs, seed=cfg.seed)
    l_prime = audit["l_prime"]
    p = max(int(np.floor(np.log2(l_prime))) + 1, 1)
    h_floor = cfg.h_floor_units * ccbp.r(pm.k_max)
    gw = g_whitney_coronization(
        pm, lat, cor, cfg.a_surround, p, h_floor,
        x_window=cfg.window_radius + 0.2,
    )

    pieces = []
    pid = 0
    for region, sid in gw.regions:
        mins = region.minimal()
        if not mins:
            # nothing stopped: the region's domain is one solid prism
            pieces.append(
                DecompPiece(
                    pid=pid, provenance="region-piece", pm=pm, hdilate=0,
                    carved=None, box=_full_tree_box(region, ccbp.unit),
                    meta={"surface_region": sid, "kind": "top"},
                )
            )
            pid += 1
            continue
        l_min = min(b.side for b in mins) * 2.0**p * ccbp.unit
        carved, report = carve_pieces(
            region, grid_res=l_min / cfg.grid_divisor, unit=ccbp.unit,
            hdilate=p, n_dirs=cfg.n_dirs, certify=True,
        )
        for cp in carved:
            pieces.append(
                _region_piece(
                    pid, pm, p, cp,
                    {"surface_region": sid, "kind": cp.provenance.get("kind", "")},
                )
            )
            pid += 1
    for b in sorted(gw.bad, key=lambda b: (b.n, b.k)):
        for lo, hi in _chop_bad_box(b, p, ccbp.unit):
            pieces.append(
                DecompPiece(
                    pid=pid, provenance="trivial-cube", pm=pm, hdilate=0,
                    carved=None, box=(lo, hi), meta={},
                )
            )
            pid += 1

    margin = max(
        (p_.carved.grid.res / 2.0**p if p_.carved is not None else E.spacing)
        for p_ in pieces
    ) * max(l_prime, 1.0)
    for piece in pieces:
        _certify_piece(piece, cfg.n_dirs, align_tol=0.2)
        piece.world_bbox(margin=2 * margin)

    audits = {
        "l_prime": l_prime,
        "ratio_hist": audit["hist"],
        "p_order": p,
        "n_regions": len(gw.regions),
        "n_bad_boxes": len(gw.bad),
        "ccbp_compat": pm.ccbp.compat,
        "h_floor": h_floor,
    }
    return Decomposition(
        mode="disjoint", profile=cfg.profile, pieces=pieces, audits=audits,
        cfg=cfg, extras={"pm": pm, "lat": lat, "cor": cor, "gw": gw},
    )


# --------------------------------------------------------------------------
# bounded-overlap pipeline
# --------------------------------------------------------------------------


def classify_point(p, lat: DyadicLattice, cor: Coronization, A1: float):
    """Flat (all scale-close cubes in one region) or non-flat (else/empty)."""
    p = np.asarray(p, float)
    dist = float(lat.E.nearest_dist(p[None, :])[0])
    if dist <= 0:
        raise ValueError("classification needs an interior point")
    ids_sorted, cube_idx = _cube_index(lat)
    ball = BallExtent(p, 0.5 * dist)
    hits = cube_idx.query(ball, A1)
    if not hits:
        return "nonflat", None
    sids = {cor.region_of.get(ids_sorted[i]) for i in hits}
    if None in sids or len(sids) != 1:
        return "nonflat", None
    return "flat", sids.pop()


def _oriented_normals(E: BoundarySample, pts: np.ndarray, up: np.ndarray):
    """Unit normals of local PCA planes at sample points, oriented along up."""
    from .geom import pca_plane
    from .errors import DegenerateCloud

    normals = np.zeros_like(pts)
    for i, x in enumerate(pts):
        idx = E.tree.query_ball_point(x, 12 * E.spacing)
        if len(idx) <= E.dim_d:
            _, idx = E.tree.query(x, k=min(8, len(E)))
            idx = np.atleast_1d(idx)
        try:
            pl = pca_plane(E.points[np.asarray(idx, int)], E.dim_d)
        except DegenerateCloud as exc:
            pl = exc.plane
        n = pl.normal
        if n @ up < 0:
            n = -n
        normals[i] = n
    return normals


def candidate_centers(E: BoundarySample, cfg: PipelineConfig, up=None):
    """Layered interior nets: offsets of boundary nets at dyadic distances."""
    from .geom import greedy_net_indices

    up = np.eye(E.ambient)[-1] if up is None else np.asarray(up, float)
    unit_min = cfg.nu * cfg.rho**cfg.depth
    layers = []
    n = 3
    while True:
        s_n = 6.0 * 2.0**-n
        if s_n / 6.0 < unit_min:
            break
        if s_n <= 2.0 * cfg.window_radius:
            base_idx = greedy_net_indices(E.points, s_n / 2.0)
            base = E.points[base_idx]
            normals = _oriented_normals(E, base, up)
            cand = base + s_n * normals
            dist = E.nearest_dist(cand)
            keep = (np.abs(dist - s_n) <= 0.25 * s_n) & (
                np.linalg.norm(cand, axis=1) <= cfg.window_radius
            )
            cand = cand[keep]
            if cand.shape[0]:
                thin = greedy_net_indices(cand, s_n)
                layers.append((n, s_n, cand[thin]))
        n += 1
    return layers


def theorem_bc_decompose(E: BoundarySample, cfg: PipelineConfig) -> Decomposition:
    """Bounded-overlap decomposition through local parameterizations."""
    lat, cor = prepare_lattice(E, cfg)
    up = np.eye(E.ambient)[-1]

    pieces: list[DecompPiece] = []
    pid = 0
    built_samples: list[np.ndarray] = []  # core-domain boundary samples per center
    flat_recs, nonflat_recs = [], []
    rejected = demoted = 0
    whitney_cache = _whitney_cubes_of_domain(E, cfg, up)

    for n, s_n, cands in candidate_centers(E, cfg, up):
        for p in cands:
            dist_p = float(E.nearest_dist(p[None, :])[0])
            if built_samples:
                gap = min(
                    float(np.min(np.linalg.norm(arr - p, axis=1)))
                    for arr in built_samples
                )
                if gap < cfg.reject_factor * dist_p:
                    rejected += 1
                    continue
            kind, sid = classify_point(p, lat, cor, cfg.a_classify)
            new_pieces = None
            if kind == "flat":
                try:
                    new_pieces, core_samples = _flat_center_pieces(
                        E, lat, cor, cfg, p, dist_p, sid, pid
                    )
                except (CCBPViolation, InsufficientResolution):
                    demoted += 1
                    kind = "nonflat"
            if kind == "nonflat":
                new_pieces, core_samples = _nonflat_center_pieces(
                    E, cfg, p, dist_p, pid, whitney_cache
                )
                nonflat_recs.append({"p": p, "scale": dist_p})
            else:
                flat_recs.append({"p": p, "scale": dist_p, "region": sid})
            if new_pieces:
                pieces.extend(new_pieces)
                pid += len(new_pieces)
                built_samples.append(core_samples)

    # identical trivial cubes emitted for different centers are one domain
    seen_boxes = {}
    deduped = []
    for pc in pieces:
        if pc.provenance == "trivial-cube" and pc.pm is None:
            key = (tuple(np.round(pc.box[0], 12)), tuple(np.round(pc.box[1], 12)))
            if key in seen_boxes:
                continue
            seen_boxes[key] = pc.pid
        deduped.append(pc)
    pieces = deduped

    for piece in pieces:
        margin = (piece.carved.grid.res if piece.carved is not None else
                  float(np.min(np.subtract(piece.box[1], piece.box[0]))) / 6.0)
        _certify_piece(piece, max(cfg.n_dirs // 2, 64), align_tol=0.2)
        piece.world_bbox(margin=2 * margin)

    centers = CenterSet(
        flat=flat_recs, nonflat=nonflat_recs, rejected=rejected, demoted=demoted
    )
    audits = {
        "n_flat": len(flat_recs),
        "n_nonflat": len(nonflat_recs),
        "n_rejected": rejected,
        "n_demoted": demoted,
        "n_bad_cubes": len(cor.bad),
    }
    return Decomposition(
        mode="bounded-overlap", profile=cfg.profile, pieces=pieces, audits=audits,
        cfg=cfg, extras={"lat": lat, "cor": cor, "centers": centers},
    )


def _flat_center_pieces(E, lat, cor, cfg, p, dist_p, sid, pid0):
    """Carved core pieces plus buffer boxes for one flat center."""
    unit = dist_p / 6.0
    region = cor.regions[sid]
    from .geom import Plane
    from .reifmap import s_of_k

    # anchor plane: the region cube at the center's own scale nearest to
    # the center's boundary foot
    level = min(s_of_k(0, lat.rho, cfg.nu, unit), lat.depth)
    foot = lat.E.points[int(lat.E.tree.query(p)[1])]
    anchor = None
    best = np.inf
    for cid in lat.level_ids(level):
        if cid not in region.members:
            continue
        gap = float(np.linalg.norm(lat.cubes[cid].center - foot))
        if gap < best:
            best, anchor = gap, cid
    if anchor is None:
        raise InsufficientResolution("no region cube at the center's scale")
    anchor_plane = lat.cubes[anchor].plane
    base = anchor_plane.project(p[None, :])[0]
    base_plane = Plane(base, anchor_plane.frame)
    ccbp = build_ccbp(
        lat, region=region, A0=cfg.A0, unit=unit, origin=base,
        nu=cfg.nu, eps_threshold=cfg.eps_ccbp, base_plane=base_plane,
        k_max=cfg.k_max,
    )
    pm = ParamMap(ccbp, up_world=p)

    floor_n = _box_floor_n(unit, cfg.h_floor_units * ccbp.r(pm.k_max))
    w0 = root_boxes(0, cfg.dim_d)[0]

    member_ids = sorted(region.members)
    member_exts = [cube_extent(lat, cid) for cid in member_ids]
    region_idx = CloseIndex(member_exts)
    all_ids, all_idx = _cube_index(lat)

    def box_good(b):
        samples = b.surface_samples(unit=unit, per_axis=3)
        images = pm.g_eval_many(samples, strict=False)
        ext = PointsExtent(images)
        if ext.diam <= 0:
            return False
        hits = all_idx.query(ext, cfg.a_surround)
        if not hits:
            return False
        return all(all_ids[i] in region.members for i in hits)

    if not box_good(w0):
        raise CCBPViolation("window", "w0", 1.0)
    members = {w0}
    frontier = [w0]
    while frontier:
        cur = frontier.pop(0)
        if cur.n >= floor_n:
            continue
        kids = cur.children()
        if all(box_good(k) for k in kids):
            members.update(kids)
            frontier.extend(kids)
    t_p = WhitneyRegion(top=w0, members=frozenset(members), floor_n=floor_n)

    mins = t_p.minimal()
    out = []
    pid = pid0
    if not mins:
        out.append(
            DecompPiece(
                pid=pid, provenance="region-piece", pm=pm, hdilate=0,
                carved=None, box=_full_tree_box(t_p, unit),
                meta={"center_scale": dist_p, "kind": "top"},
            )
        )
        pid += 1
    else:
        l_min = min(b.side for b in mins)
        carved, report = carve_pieces(
            t_p, grid_res=l_min * unit / cfg.grid_divisor, unit=unit, hdilate=0,
            n_dirs=cfg.n_dirs, certify=True,
        )
        for cp in carved:
            out.append(
                _region_piece(
                    pid, pm, 0, cp,
                    {"center_scale": dist_p, "kind": cp.provenance.get("kind", "")},
                )
            )
            pid += 1

    for b in _buffer_boxes(t_p, cfg.a_buffer, floor_n):
        lo, hi = b.bounds(unit)
        out.append(
            DecompPiece(
                pid=pid, provenance="buffer-cube", pm=pm, hdilate=0,
                carved=None, box=(lo, hi), meta={"center_scale": dist_p},
            )
        )
        pid += 1

    core = np.concatenate(
        [pc.boundary_samples_world() for pc in out if pc.provenance == "region-piece"]
    )
    return out, core


def _buffer_boxes(region: WhitneyRegion, a_buf: float, floor_n: int) -> list:
    """Boxes of the ambient lattice close to a member but outside the region."""
    member_exts = [BoxExtent(*b.bounds()) for b in region.members]
    idx = CloseIndex(member_exts)
    d = region.top.d
    seen = set(region.members)
    out = []
    h_ratio = int(np.ceil(np.log2(a_buf * np.sqrt(d + 1)))) + 1
    lo_all = np.min([e.lo for e in member_exts], axis=0)
    hi_all = np.max([e.hi for e in member_exts], axis=0)
    for n in range(region.top.n - h_ratio, floor_n + h_ratio + 1):
        probe = WhitneyBox(region.top.p, n, tuple([0] * d))
        side = probe.side
        diam = probe.diam
        reach = a_buf * (diam + diam * a_buf * np.sqrt(d + 1)) + diam
        k_lo = np.floor((lo_all[:-1] - reach + 2.0) / side).astype(int)
        k_hi = np.ceil((hi_all[:-1] + reach + 2.0) / side).astype(int)
        for k in np.ndindex(*(k_hi - k_lo)):
            box = WhitneyBox(probe.p, n, tuple(int(v + l) for v, l in zip(k, k_lo)))
            if box in seen:
                continue
            ext = BoxExtent(*box.bounds())
            if idx.query(ext, a_buf):
                out.append(box)
                seen.add(box)
    return sorted(out, key=lambda b: (b.n, b.k))


def _whitney_cubes_of_domain(E: BoundarySample, cfg: PipelineConfig, up):
    """Dyadic Whitney cubes of the domain side within the working window."""
    out = []
    root_side = 4.0
    floor = 8.0 * E.spacing

    def recurse(lo, side):
        center = lo + side / 2.0
        d_center = float(E.nearest_dist(center[None, :])[0])
        diam = side * np.sqrt(E.ambient)
        if d_center - diam / 2.0 >= diam:
            rel = center - E.points[int(E.tree.query(center)[1])]
            if rel @ up > 0:  # keep the upper side of the boundary
                out.append((lo.copy(), lo + side))
            return
        if side / 2.0 < floor:
            return
        for bits in np.ndindex(*([2] * E.ambient)):
            recurse(lo + np.asarray(bits) * side / 2.0, side / 2.0)

    root_lo = np.full(E.ambient, -root_side / 2.0)
    recurse(root_lo, root_side)
    return out


def _nonflat_center_pieces(E, cfg, p, dist_p, pid0, cubes):
    """Trivial cube pieces around a non-flat center."""
    if not cubes:
        return [], p[None, :]
    homes = [
        (lo, hi) for lo, hi in cubes if np.all(p >= lo) and np.all(p <= hi)
    ]
    if not homes:
        # nearest cube by center
        centers = np.array([0.5 * (lo + hi) for lo, hi in cubes])
        homes = [cubes[int(np.argmin(np.linalg.norm(centers - p, axis=1)))]]
    wq = homes[0]
    wq_ext = BoxExtent(*wq)
    out = []
    pid = pid0
    for lo, hi in cubes:
        ext = BoxExtent(lo, hi)
        if a_close(ext, wq_ext, cfg.a_buffer):
            out.append(
                DecompPiece(
                    pid=pid, provenance="trivial-cube", pm=None, hdilate=0,
                    carved=None, box=(lo, hi), meta={"center_scale": dist_p},
                )
            )
            pid += 1
    # the core for the greedy spacing is the home cube itself
    g = np.linspace(0.0, 1.0, 3)
    mesh = np.stack(np.meshgrid(*([g] * wq[0].shape[0]), indexing="ij"), axis=-1)
    core = wq[0] + mesh.reshape(-1, wq[0].shape[0]) * (wq[1] - wq[0])
    return out, core


# --------------------------------------------------------------------------
# audits
# --------------------------------------------------------------------------


def overlap_audit(D: Decomposition, trials: int, inside_fn, seed: int = 0,
                  floor: float = 0.0) -> dict:
    """Histogram of per-point piece multiplicities over the working window."""
    cfg = D.cfg
    E = D.extras["lat"].E if "lat" in D.extras else None
    rng = np.random.default_rng(seed)
    amb = D.pieces[0].center_world.shape[0]
    lo_arr = np.stack([p.bbox[0] for p in D.pieces])
    hi_arr = np.stack([p.bbox[1] for p in D.pieces])
    counts = []
    budget = 0
    while len(counts) < trials and budget < trials * 400:
        budget += 1
        z = rng.uniform(-cfg.window_radius, cfg.window_radius, size=amb)
        if np.linalg.norm(z) > cfg.window_radius:
            continue
        if not inside_fn(z):
            continue
        if E is not None and float(E.nearest_dist(z[None, :])[0]) < floor:
            continue
        cand = np.flatnonzero(np.all((z >= lo_arr) & (z <= hi_arr), axis=1))
        c = 0
        for i in cand:
            piece = D.pieces[i]
            w = z if piece.pm is None else piece.pm.g_inverse(z)
            if piece._frame_contains(w):
                c += 1
        counts.append(c)
    counts = np.asarray(counts)
    hist = np.bincount(counts) if counts.size else np.zeros(1, dtype=int)
    return {
        "max": int(counts.max()) if counts.size else 0,
        "covered_fraction": float(np.mean(counts > 0)) if counts.size else 0.0,
        "histogram": hist.tolist(),
        "n_points": int(counts.size),
    }


def surface_audit(D: Decomposition, y, r: float, A1: float = None) -> tuple:
    """(sum of piece-boundary measure in B(y,r), boundary content in B(y,A1 r))."""
    y = np.asarray(y, float)
    A1 = D.cfg.A1 if A1 is None else A1
    total = 0.0
    for piece in D.pieces:
        if piece.bbox is not None:
            lo, hi = piece.bbox
            gap = np.maximum(np.maximum(lo - y, y - hi), 0.0)
            if np.linalg.norm(gap) > r:
                continue
        sims = piece.boundary_simplices_world()
        cent = sims.mean(axis=1)
        keep = np.linalg.norm(cent - y, axis=1) <= r
        if not np.any(keep):
            continue
        sims = sims[keep]
        if sims.shape[1] == 2:
            total += float(np.linalg.norm(sims[:, 1] - sims[:, 0], axis=1).sum())
        else:
            u = sims[:, 1] - sims[:, 0]
            v = sims[:, 2] - sims[:, 0]
            total += float(0.5 * np.linalg.norm(np.cross(u, v), axis=1).sum())
    E = D.extras["lat"].E
    ref = content_estimate(
        E, lambda q: np.ones(len(q), bool), Ball(y, A1 * r), E.spacing
    )
    return total, ref
