"""Carving of half-space box regions into star-shaped pieces.

Every minimal (stopped) box of a coherent box region sheds two surfaces:
a cover (the lower envelope of 2d+1 planes over three times its footprint,
sloping down at 45 degrees from its bottom face) and a divider (vertical
walls over the faces of dyadic ring cubes tiling successive sup-norm
annuli under the cover).  Cutting the region's domain along these
surfaces yields pieces that are star-shaped about explicit centers.

Pieces are extracted by rasterized flood fill.  All box corners, wall
positions, and the carving grid share one dyadic lattice, so occupancy
and blocking tests are exact; voxel centers sit at half-offsets and never
touch a wall or a box face.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    CenterOutside,
    CertificationFailure,
    IncoherentRegion,
    ResolutionTooCoarse,
)
from .lattice import WhitneyBox

RING_LIMIT = 12  # hard cap on realized divider rings per stopped box


# --------------------------------------------------------------------------
# box regions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WhitneyRegion:
    """Coherent set of boxes below a top box, realized down to floor_n."""

    top: WhitneyBox
    members: frozenset
    floor_n: int

    def minimal(self) -> list:
        """Members owning a realized child outside the region."""
        out = []
        for b in self.members:
            if b.n >= self.floor_n:
                continue
            if any(c not in self.members for c in b.children()):
                out.append(b)
        return sorted(out, key=lambda b: (b.n, b.k))

    def audit(self) -> None:
        if self.top not in self.members:
            raise IncoherentRegion("top box missing from the region")
        for b in self.members:
            if not (self.top.footprint_contains(b) and b.n >= self.top.n):
                raise IncoherentRegion(f"{b} escapes the top box")
            if b != self.top:
                if b.parent() not in self.members:
                    raise IncoherentRegion(f"{b} lacks its parent")
            if b.n < self.floor_n:
                kids_in = [c in self.members for c in b.children()]
                if any(kids_in) and not all(kids_in):
                    raise IncoherentRegion(f"children of {b} are split")


def full_tree_region(top: WhitneyBox, depth: int) -> WhitneyRegion:
    boxes = [top]
    frontier = [top]
    for _ in range(depth):
        frontier = [c for b in frontier for c in b.children()]
        boxes.extend(frontier)
    return WhitneyRegion(top=top, members=frozenset(boxes), floor_n=top.n + depth)


# --------------------------------------------------------------------------
# cover and divider geometry (normalized frame of one stopped box)
# --------------------------------------------------------------------------


def cover_height_normalized(x: np.ndarray, d: int) -> np.ndarray:
    """Lower envelope height at normalized horizontal coordinates x."""
    x = np.atleast_2d(np.asarray(x, float))
    vals = np.full(x.shape[0], 2.0)
    for j in range(d):
        vals = np.minimum(vals, 3.0 + x[:, j])
        vals = np.minimum(vals, 3.0 - x[:, j])
    return np.maximum(vals, 0.0)


@dataclass
class BoxFrame:
    """Similarity between a stopped box's real frame and its normalized one.

    The box maps to [-1,1]^d x [2,4]; horizontal coordinates shift by the
    box center and scale by 2/side, heights scale by the same factor.
    """

    center_x: np.ndarray
    scale: float  # real length of one normalized unit = side/2

    def to_normalized(self, x_real: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x_real) - self.center_x) / self.scale

    def height_to_real(self, h_norm):
        return h_norm * self.scale


def box_frame(box: WhitneyBox, unit: float = 1.0, hdilate: int = 0) -> BoxFrame:
    lo, hi = box.bounds(unit)
    lo = lo.copy()
    hi = hi.copy()
    lo[:-1] *= 2.0**hdilate
    hi[:-1] *= 2.0**hdilate
    cx = 0.5 * (lo[:-1] + hi[:-1])
    return BoxFrame(center_x=cx, scale=0.5 * float(hi[0] - lo[0]))


def cover_height(box: WhitneyBox, x, unit: float = 1.0, frame: str = "real"):
    """Envelope height over horizontal point(s) x; real or normalized frame."""
    d = box.d
    if frame == "normalized":
        return cover_height_normalized(x, d)
    bf = box_frame(box, unit)
    h_norm = cover_height_normalized(bf.to_normalized(x), d)
    return bf.height_to_real(h_norm)


def cover_facets_normalized(d: int) -> list:
    """The 2d+1 planar pieces of the envelope over [-3,3]^d (normalized)."""
    if d == 1:
        return [
            {"kind": "flat", "poly": np.array([[-1.0, 2.0], [1.0, 2.0]])},
            {"kind": "slope", "poly": np.array([[1.0, 2.0], [3.0, 0.0]])},
            {"kind": "slope", "poly": np.array([[-3.0, 0.0], [-1.0, 2.0]])},
        ]
    if d == 2:
        facets = [
            {
                "kind": "flat",
                "poly": np.array(
                    [[-1, -1, 2.0], [1, -1, 2.0], [1, 1, 2.0], [-1, 1, 2.0]]
                ),
            }
        ]
        quads = [
            [[1, -1, 2], [3, -3, 0], [3, 3, 0], [1, 1, 2]],
            [[-3, -3, 0], [-1, -1, 2], [-1, 1, 2], [-3, 3, 0]],
            [[-1, -1, 2], [-3, -3, 0], [3, -3, 0], [1, -1, 2]],
            [[1, 1, 2], [3, 3, 0], [-3, 3, 0], [-1, 1, 2]],
        ]
        for q in quads:
            facets.append({"kind": "slope", "poly": np.asarray(q, float)})
        return facets
    raise ValueError("carving supports d in {1, 2}")


def cover_measure(d: int) -> float:
    """Exact d-measure of the normalized envelope (arc length for d=1)."""
    if d == 1:
        return 2.0 + 4.0 * np.sqrt(2.0)
    # flat 2x2 square plus four slope trapezoids with parallel sides 2 and 6
    return 4.0 + 4.0 * (0.5 * (2.0 + 6.0) * 2.0 * np.sqrt(2.0))


def ring_t(n: int) -> float:
    """Sup-norm radius of the n-th ring boundary: 1 + sum_{j<n} 2^-j."""
    return 1.0 + sum(2.0**-j for j in range(n))


@dataclass
class DividerSurface:
    owner: WhitneyBox
    rings: dict  # n -> list of (lo, hi) normalized ring cubes
    walls: list  # records with axis, pos, span, cap (normalized)

    def preclip_measure(self) -> float:
        """Total wall d-measure before envelope clipping (normalized)."""
        total = 0.0
        for w in self.walls:
            if len(w["span_lo"]) == 0:
                total += w["cap"]
            else:
                total += float(np.prod(np.subtract(w["span_hi"], w["span_lo"]))) * w["cap"]
        return total


def divider_rings(box: WhitneyBox, n_max: int) -> DividerSurface:
    """Rings 0..n_max with their dyadic cubes and deduplicated walls.

    Ring 0 (side-1 cubes between sup-norm radii 1 and 2) is load-bearing:
    without its walls the first collar under the cover is an annulus
    around the stopped box and cannot be star-shaped for d = 2.  Its
    walls also complete the geometric series that pins the pre-clip
    divider measure at 16 for d = 1.
    """
    if n_max < 1:
        raise ValueError("need n_max >= 1")
    d = box.d
    rings = {}
    walls = {}
    for n in range(0, n_max + 1):
        s = 2.0**-n
        t0, t1 = ring_t(n), ring_t(n + 1)
        cells = []
        m = int(round(t1 / s))
        for idx in np.ndindex(*([2 * m] * d)):
            lo = np.array([(i - m) * s for i in idx])
            hi = lo + s
            minabs = np.maximum(np.minimum(np.abs(lo), np.abs(hi)), 0.0)
            minabs[(lo < 0) & (hi > 0)] = 0.0
            near = float(np.max(minabs))
            far = float(np.max(np.maximum(np.abs(lo), np.abs(hi))))
            if near >= t0 - 1e-12 and far <= t1 + 1e-12:
                cells.append((lo, hi))
        rings[n] = cells
        for lo, hi in cells:
            for j in range(d):
                for pos in (lo[j], hi[j]):
                    span_lo = tuple(np.delete(lo, j))
                    span_hi = tuple(np.delete(hi, j))
                    key = (j, float(pos), span_lo, span_hi)
                    cap = 2.0 * s
                    if key in walls:
                        # rings share faces; the union keeps the taller wall
                        walls[key]["cap"] = max(walls[key]["cap"], cap)
                    else:
                        walls[key] = {
                            "axis": j,
                            "pos": float(pos),
                            "span_lo": span_lo,
                            "span_hi": span_hi,
                            "cap": cap,
                        }
    return DividerSurface(owner=box, rings=rings, walls=list(walls.values()))


# --------------------------------------------------------------------------
# facet soup of one region's carving surface, clipped to the domain
# --------------------------------------------------------------------------


def _clip_segment_to_box(p0, p1, lo, hi):
    """Liang-Barsky clip; returns clipped endpoints or None."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for i in range(p0.shape[0]):
        if abs(d[i]) < 1e-15:
            if p0[i] < lo[i] - 1e-12 or p0[i] > hi[i] + 1e-12:
                return None
            continue
        ta = (lo[i] - p0[i]) / d[i]
        tb = (hi[i] - p0[i]) / d[i]
        ta, tb = min(ta, tb), max(ta, tb)
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return None
    return p0 + t0 * d, p0 + t1 * d


def _clip_polygon_halfspace(poly, normal, offset):
    """Keep the part of the polygon with normal . x <= offset."""
    out = []
    m = poly.shape[0]
    vals = poly @ normal - offset
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        fa, fb = vals[i], vals[(i + 1) % m]
        if fa <= 1e-12:
            out.append(a)
        if (fa < -1e-12 < fb) or (fb < -1e-12 < fa):
            t = fa / (fa - fb)
            out.append(a + t * (b - a))
    return np.asarray(out) if len(out) >= 3 else None


def _clip_polygon_to_box(poly, lo, hi):
    cur = poly
    n = poly.shape[1]
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cur = _clip_polygon_halfspace(cur, e, hi[i])
        if cur is None:
            return None
        cur = _clip_polygon_halfspace(cur, -e, -lo[i])
        if cur is None:
            return None
    return cur


def _polygon_area(poly) -> float:
    if poly is None or poly.shape[0] < 3:
        return 0.0
    total = np.zeros(3) if poly.shape[1] == 3 else 0.0
    for i in range(1, poly.shape[0] - 1):
        u = poly[i] - poly[0]
        v = poly[i + 1] - poly[0]
        if poly.shape[1] == 3:
            total = total + 0.5 * np.cross(u, v)
        else:
            total = total + 0.5 * (u[0] * v[1] - u[1] * v[0])
    return float(np.linalg.norm(total)) if poly.shape[1] == 3 else abs(float(total))


def _facet_measure(geom) -> float:
    if geom.shape[0] == 2 and geom.shape[1] == 2:
        return float(np.linalg.norm(geom[1] - geom[0]))
    return _polygon_area(geom)


def _wall_polygons(wall, bf: BoxFrame, d: int):
    """Materialize a wall as real-coordinate facets under the envelope cap."""
    cap = bf.height_to_real(wall["cap"])
    if d == 1:
        x = bf.center_x[0] + wall["pos"] * bf.scale
        h_env = bf.height_to_real(
            cover_height_normalized(np.array([[wall["pos"]]]), 1)[0]
        )
        top = min(cap, h_env)
        if top <= 0:
            return []
        return [np.array([[x, 0.0], [x, top]])]
    # d = 2: profile of min(cap, envelope) along the span, subdivided at the
    # envelope's affine breakpoints so each facet is a planar polygon
    j = wall["axis"]
    o = 1 - j
    pos = wall["pos"]
    lo, hi = wall["span_lo"][0], wall["span_hi"][0]
    bps = {lo, hi}
    # envelope breakpoints along the span: sign changes and the diagonal seams
    for b in (-3.0, -abs(pos), 0.0, abs(pos), 3.0):
        if lo < b < hi:
            bps.add(b)
    bps = sorted(bps)
    polys = []
    for a, b in zip(bps[:-1], bps[1:]):
        for t_split in _cap_switches(pos, a, b, wall["cap"]):
            if a < t_split < b:
                bps2 = [a, t_split, b]
                break
        else:
            bps2 = [a, b]
        for aa, bb in zip(bps2[:-1], bps2[1:]):
            ya = _wall_top(pos, aa, wall["cap"])
            yb = _wall_top(pos, bb, wall["cap"])
            if ya <= 0 and yb <= 0:
                continue
            pts_norm = []
            for t, y in ((aa, ya), (bb, yb)):
                xy = [0.0, 0.0]
                xy[j] = pos
                xy[o] = t
                pts_norm.append((xy, max(y, 0.0)))
            quad = []
            for xy, y in pts_norm:
                x_real = bf.center_x + np.asarray(xy) * bf.scale
                quad.append(np.concatenate([x_real, [0.0]]))
            for xy, y in reversed(pts_norm):
                x_real = bf.center_x + np.asarray(xy) * bf.scale
                quad.append(np.concatenate([x_real, [bf.height_to_real(y)]]))
            poly = np.asarray(quad)
            if _polygon_area(poly) > 1e-15:
                polys.append(poly)
    return polys


def _wall_top(pos: float, t: float, cap: float) -> float:
    env = float(cover_height_normalized(np.array([[pos, t]]), 2)[0])
    return min(cap, env)


def _cap_switches(pos: float, a: float, b: float, cap: float):
    """Points in (a,b) where the envelope crosses the cap level."""
    out = []
    for sgn in (1.0, -1.0):
        t = sgn * (3.0 - cap)
        if a < t < b and abs(t) >= abs(pos) - 1e-12:
            out.append(t)
    return sorted(out)


def sigma_surface(region: WhitneyRegion, unit: float = 1.0, hdilate: int = 0,
                  ring_depth=None) -> list:
    """Clipped facet soup of the region's carving surface with exact areas.

    Returns records {kind, owner, geom (real coords), area, area_raw};
    areas are summed box-by-box with half-open boundary conventions so
    walls sitting on shared box faces are not double counted.
    """
    region.audit()
    d = region.top.d
    mins = region.minimal()
    member_bounds = []
    for b in sorted(region.members, key=lambda b: (b.n, b.k)):
        lo, hi = b.bounds(unit)
        lo[:-1] *= 2.0**hdilate
        hi[:-1] *= 2.0**hdilate
        member_bounds.append((lo, hi))

    out = []
    for w in mins:
        bf = box_frame(w, unit, hdilate)
        n_max = RING_LIMIT if ring_depth is None else ring_depth
        facets = []
        for f in cover_facets_normalized(d):
            geom = f["poly"].copy()
            real = np.column_stack(
                [bf.center_x + geom[:, :d] * bf.scale, bf.height_to_real(geom[:, -1])]
            ) if d == 2 else np.column_stack(
                [bf.center_x[0] + geom[:, 0] * bf.scale, bf.height_to_real(geom[:, 1])]
            )
            facets.append({"kind": f"cover-{f['kind']}", "geom": real})
        div = divider_rings(w, n_max)
        for wall in div.walls:
            for poly in _wall_polygons(wall, bf, d):
                facets.append({"kind": "divider", "geom": poly})

        for f in facets:
            geom = f["geom"]
            raw = _facet_measure(geom)
            clipped = 0.0
            const_axis, const_val = _constant_axis(geom)
            for lo, hi in member_bounds:
                if const_axis is not None:
                    # half-open convention on the facet's own plane axis
                    if not (lo[const_axis] <= const_val < hi[const_axis]):
                        continue
                if d == 1:
                    seg = _clip_segment_to_box(geom[0], geom[1], lo, hi)
                    if seg is not None:
                        clipped += float(np.linalg.norm(seg[1] - seg[0]))
                else:
                    poly = _clip_polygon_to_box(geom, lo, hi)
                    clipped += _polygon_area(poly)
            out.append(
                {
                    "kind": f["kind"],
                    "owner": w,
                    "geom": geom,
                    "area_raw": raw,
                    "area": clipped,
                }
            )
    return out


def _constant_axis(geom):
    for ax in range(geom.shape[1]):
        if np.allclose(geom[:, ax], geom[0, ax], atol=1e-12):
            return ax, float(geom[0, ax])
    return None, None


def sigma_measure_bound(d: int) -> float:
    """Analytic per-box bound on the normalized carving-surface measure."""
    if d == 1:
        return cover_measure(1) + 16.0
    return cover_measure(2) + 16.0 * 8.0  # generous wall bound per ring sum


def upper_regularity_audit(facets: list, trials: int = 100, seed: int = 0,
                           radii=(0.5, 1.0, 2.0)) -> float:
    """Worst observed measure(surface ∩ ball)/radius^d over random probes."""
    if not facets:
        return 0.0
    rng = np.random.default_rng(seed)
    areas = np.array([f["area"] for f in facets])
    if areas.sum() <= 0:
        return 0.0
    probs = areas / areas.sum()
    worst = 0.0
    d = facets[0]["geom"].shape[1] - 1
    for _ in range(trials):
        f = facets[int(rng.choice(len(facets), p=probs))]
        x = _point_on_facet(f["geom"], rng)
        r = float(rng.choice(radii)) * max(f["area_raw"] ** (1.0 / d), 1e-9)
        total = sum(_facet_ball_measure(g["geom"], x, r) for g in facets)
        worst = max(worst, total / r**d)
    return worst


def _point_on_facet(geom, rng):
    if geom.shape[0] == 2:
        t = rng.uniform()
        return geom[0] + t * (geom[1] - geom[0])
    # triangle fan sample
    i = int(rng.integers(1, geom.shape[0] - 1))
    a, b = rng.uniform(), rng.uniform()
    if a + b > 1:
        a, b = 1 - a, 1 - b
    return geom[0] + a * (geom[i] - geom[0]) + b * (geom[i + 1] - geom[0])


def _facet_ball_measure(geom, center, r, depth=6):
    if geom.shape[0] == 2:  # segment-disc intersection, exact
        p0, p1 = geom
        dvec = p1 - p0
        a = float(dvec @ dvec)
        if a < 1e-30:
            return 0.0
        b = 2.0 * float((p0 - center) @ dvec)
        c = float((p0 - center) @ (p0 - center)) - r * r
        disc = b * b - 4 * a * c
        if disc <= 0:
            return 0.0
        t0 = (-b - np.sqrt(disc)) / (2 * a)
        t1 = (-b + np.sqrt(disc)) / (2 * a)
        t0, t1 = max(t0, 0.0), min(t1, 1.0)
        return max(t1 - t0, 0.0) * np.sqrt(a)
    total = 0.0
    for i in range(1, geom.shape[0] - 1):
        total += _tri_ball_area(geom[0], geom[i], geom[i + 1], center, r, depth)
    return total


def _tri_ball_area(a, b, c, center, r, depth):
    verts = np.stack([a, b, c])
    dist = np.linalg.norm(verts - center, axis=1)
    area = _polygon_area(verts)
    if area <= 0:
        return 0.0
    if np.all(dist <= r):
        return area
    circ = np.max(np.linalg.norm(verts - verts.mean(axis=0), axis=1))
    if np.all(dist >= r + circ):
        return 0.0
    if depth == 0:
        # six-point stencil (vertices + edge midpoints) on the leaf
        stencil = np.vstack([verts, 0.5 * (verts + np.roll(verts, -1, axis=0))])
        inside = np.mean(np.linalg.norm(stencil - center, axis=1) <= r)
        return area * inside
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return (
        _tri_ball_area(a, ab, ca, center, r, depth - 1)
        + _tri_ball_area(ab, b, bc, center, r, depth - 1)
        + _tri_ball_area(ca, bc, c, center, r, depth - 1)
        + _tri_ball_area(ab, bc, ca, center, r, depth - 1)
    )


# --------------------------------------------------------------------------
# voxel grids and rasterized piece extraction
# --------------------------------------------------------------------------


@dataclass
class VoxGrid:
    origin: np.ndarray
    res: float
    shape: tuple

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * self.res

    def index_of(self, pts: np.ndarray):
        pts = np.atleast_2d(np.asarray(pts, float))
        f = (pts - self.origin) / self.res
        idx = np.floor(f).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=1)
        return idx, ok

    def center_of(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, float) + 0.5) * self.res

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.shape, float) * self.res


@dataclass
class CarvedPiece:
    """One star-shaped piece: voxel mask, center, and certification data."""

    grid: VoxGrid
    mask: np.ndarray
    center: np.ndarray
    provenance: dict
    lipschitz_est: float = None
    radial_dirs: np.ndarray = None
    radial_vals: np.ndarray = None
    piece_cubes: list = field(default_factory=list)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        idx, ok = self.grid.index_of(pts)
        out = np.zeros(idx.shape[0], dtype=bool)
        sel = np.flatnonzero(ok)
        if sel.shape[0]:
            out[sel] = self.mask[tuple(idx[sel].T)]
        return out

    def volume(self) -> float:
        return float(self.mask.sum()) * self.res_d1

    @property
    def res_d1(self) -> float:
        return self.grid.res ** len(self.grid.shape)

    def boundary_faces(self) -> list:
        """(axis, cell-index, outward-sign) triples of exposed voxel faces."""
        faces = []
        m = self.mask
        nd = m.ndim
        for ax in range(nd):
            lo = np.zeros_like(m)
            hi = np.zeros_like(m)
            sl_a = [slice(None)] * nd
            sl_b = [slice(None)] * nd
            sl_a[ax] = slice(1, None)
            sl_b[ax] = slice(None, -1)
            inner_hi = m[tuple(sl_b)] & ~m[tuple(sl_a)]
            inner_lo = m[tuple(sl_a)] & ~m[tuple(sl_b)]
            hi[tuple(sl_b)] = inner_hi
            lo[tuple(sl_a)] = inner_lo
            edge_lo = [slice(None)] * nd
            edge_lo[ax] = 0
            lo[tuple(edge_lo)] |= m[tuple(edge_lo)]
            edge_hi = [slice(None)] * nd
            edge_hi[ax] = m.shape[ax] - 1
            hi[tuple(edge_hi)] |= m[tuple(edge_hi)]
            for sign, arr in ((-1, lo), (1, hi)):
                for idx in np.argwhere(arr):
                    faces.append((ax, tuple(int(v) for v in idx), sign))
        return faces

    def boundary_points(self, per_face: int = 1) -> np.ndarray:
        """Point samples of the voxel boundary (face centers, optionally more)."""
        pts = []
        res = self.grid.res
        for ax, idx, sign in self.boundary_faces():
            c = self.grid.center_of(idx)
            c[ax] += sign * res / 2.0
            pts.append(c)
            if per_face > 1:
                others = [a for a in range(len(idx)) if a != ax]
                for off in np.linspace(-0.4, 0.4, per_face - 1):
                    q = c.copy()
                    q[others[0]] += off * res
                    pts.append(q)
        return np.asarray(pts)

    def boundary_area(self) -> float:
        d = len(self.grid.shape) - 1
        return len(self.boundary_faces()) * self.grid.res**d

    def to_graph_domain(self):
        return GraphDomain(
            center=self.center.copy(),
            radial_dirs=self.radial_dirs,
            radial_vals=self.radial_vals,
            lipschitz_est=self.lipschitz_est,
            piece_cubes=list(self.piece_cubes),
        )


@dataclass
class GraphDomain:
    """Certified star-shaped piece: center, radial samples, Lipschitz bound."""

    center: np.ndarray
    radial_dirs: np.ndarray
    radial_vals: np.ndarray
    lipschitz_est: float
    piece_cubes: list


def sphere_directions(n_dirs: int, dim: int) -> np.ndarray:
    """Quasi-uniform directions: uniform angles (d=1), Fibonacci (d=2)."""
    if dim == 2:
        th = 2 * np.pi * np.arange(n_dirs) / n_dirs
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if dim == 3:
        i = np.arange(n_dirs) + 0.5
        phi = np.arccos(1 - 2 * i / n_dirs)
        golden = np.pi * (1 + np.sqrt(5.0))
        th = golden * i
        return np.stack(
            [np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=1
        )
    raise ValueError("directions implemented for ambient 2 and 3")


def certify_voxel_domain(mask, grid: VoxGrid, center, n_dirs: int,
                         pair_window=(0.05, 0.2)):
    """Ray-cast star-shape certification of a voxel piece.

    Returns (star_ok, lipschitz_est, dirs, radii).  A ray passes when its
    occupancy along the march is one run up to single-voxel rasterization
    gaps; the Lipschitz estimate uses direction pairs with angular gap
    inside ``pair_window`` after the radial normalization.
    """
    center = np.asarray(center, float)
    idx, ok = grid.index_of(center[None, :])
    if not ok[0] or not mask[tuple(idx[0])]:
        raise CenterOutside(f"center {center} not inside the piece")
    dim = len(grid.shape)
    dirs = sphere_directions(n_dirs, dim)
    step = grid.res / 3.0
    t_max = float(np.linalg.norm(grid.extent)) + grid.res
    ts = np.arange(step, t_max, step)
    gap_tol = 3  # samples: one voxel of rasterization noise
    radii = np.zeros(n_dirs)
    star_ok = True
    bad_dir = -1
    for i in range(n_dirs):
        pts = center[None, :] + ts[:, None] * dirs[i][None, :]
        pidx, pok = grid.index_of(pts)
        occ = np.zeros(ts.shape[0], dtype=bool)
        sel = np.flatnonzero(pok)
        occ[sel] = mask[tuple(pidx[sel].T)]
        on = np.flatnonzero(occ)
        if on.shape[0] == 0:
            radii[i] = step
            continue
        # merge runs separated by sub-voxel gaps
        breaks = np.flatnonzero(np.diff(on) > gap_tol)
        first_end = on[breaks[0]] if breaks.shape[0] else on[-1]
        if breaks.shape[0]:
            star_ok = False
            bad_dir = i
        radii[i] = ts[first_end] + 0.5 * step
    r_max = float(radii.max())
    r_hat = radii / r_max
    lo, hi = pair_window
    lip = 0.0
    from scipy.spatial import cKDTree

    tree = cKDTree(dirs)
    pairs = tree.query_pairs(hi)
    for a, b in pairs:
        gap = float(np.linalg.norm(dirs[a] - dirs[b]))
        if gap < lo:
            continue
        lip = max(lip, abs(r_hat[a] - r_hat[b]) / gap)
    m_final = max(lip, 1.0 / max(r_hat.min(), 1e-9) - 1.0)
    return star_ok, float(m_final), dirs, radii, bad_dir


def certify_sampled_domain(boundary_pts, center, n_dirs: int, res_tol: float,
                           pair_window=(0.05, 0.2)):
    """Certification from boundary point samples by directional binning.

    Bins boundary samples by nearest certified direction; a bin whose hit
    radii spread beyond the grid tolerance witnesses a ray crossing the
    boundary more than once.
    """
    boundary_pts = np.atleast_2d(np.asarray(boundary_pts, float))
    center = np.asarray(center, float)
    rel = boundary_pts - center
    rr = np.linalg.norm(rel, axis=1)
    keep = rr > 1e-12
    rel, rr = rel[keep], rr[keep]
    dirs_pts = rel / rr[:, None]
    dirs = sphere_directions(n_dirs, center.shape[0])
    from scipy.spatial import cKDTree

    _, bins = cKDTree(dirs).query(dirs_pts)
    radii = np.full(n_dirs, np.nan)
    star_ok = True
    spread_tol = 4.0 * res_tol
    for b in range(n_dirs):
        hits = rr[bins == b]
        if hits.shape[0] == 0:
            continue
        if hits.max() - hits.min() > max(spread_tol, 0.1 * np.median(hits)):
            star_ok = False
        radii[b] = hits.max()
    filled = ~np.isnan(radii)
    if not np.any(filled):
        raise CenterOutside("no boundary samples around the center")
    # empty bins inherit the nearest filled direction's radius
    tree_f = cKDTree(dirs[filled])
    _, j = tree_f.query(dirs[~filled]) if np.any(~filled) else (None, None)
    vals = radii.copy()
    if j is not None:
        vals[~filled] = radii[filled][j]
    r_max = float(np.nanmax(vals))
    r_hat = vals / r_max
    lo, hi = pair_window
    lip = 0.0
    pairs = cKDTree(dirs).query_pairs(hi)
    for a, b in pairs:
        gap = float(np.linalg.norm(dirs[a] - dirs[b]))
        if gap < lo or not (filled[a] and filled[b]):
            continue
        lip = max(lip, abs(r_hat[a] - r_hat[b]) / gap)
    m_final = max(lip, 1.0 / max(np.nanmin(r_hat), 1e-9) - 1.0)
    return star_ok, float(m_final), dirs, vals


def certify_graph_domain(piece, center, n_dirs: int):
    """Spec-facing wrapper: certify a voxel piece about ``center``."""
    star_ok, lip, dirs, radii, _ = certify_voxel_domain(
        piece.mask, piece.grid, np.asarray(center, float), n_dirs
    )
    return star_ok, lip


# --------------------------------------------------------------------------
# carve_pieces
# --------------------------------------------------------------------------


def _snap_resolution(requested: float, s_floor: float) -> float:
    """Largest s_floor / 2^m not exceeding the requested resolution."""
    m = 0
    while s_floor / 2.0**m > requested * (1 + 1e-12):
        m += 1
        if m > 40:
            raise ResolutionTooCoarse("resolution snap underflow")
    return s_floor / 2.0**m


def carve_pieces(region: WhitneyRegion, grid_res: float, unit: float = 1.0,
                 hdilate: int = 0, n_dirs: int = None, certify: bool = True):
    """Flood-fill extraction and certification of the carved pieces.

    Returns (pieces, report).  Coordinates are the region's own frame with
    horizontal axes stretched by 2^hdilate (the dilation making order-p
    boxes cubes); callers undo the dilation on the way out.
    """
    region.audit()
    d = region.top.d
    mins = region.minimal()
    if n_dirs is None:
        n_dirs = 128 if d == 1 else 1024

    member_list = sorted(region.members, key=lambda b: (b.n, b.k))
    sides = [b.side * unit * 2.0**hdilate for b in member_list]  # dilated: side = h
    s_floor = min(sides)
    if mins:
        l_min = min(b.side * unit * 2.0**hdilate for b in mins)
        if grid_res > l_min / 8.0 + 1e-12:
            raise ResolutionTooCoarse(
                f"grid_res {grid_res:.3g} exceeds an eighth of the smallest "
                f"stopped side {l_min:.3g}"
            )
    res = _snap_resolution(min(grid_res, s_floor / 2.0), s_floor)

    top_lo, top_hi = region.top.bounds(unit)
    top_lo[:-1] *= 2.0**hdilate
    top_hi[:-1] *= 2.0**hdilate
    h_min = min(b.bounds(unit)[0][-1] for b in member_list)
    origin = np.concatenate([top_lo[:-1], [h_min]])
    span = np.concatenate([top_hi[:-1] - top_lo[:-1], [top_hi[-1] - h_min]])
    shape = tuple(int(round(s / res)) for s in span)

    grid = VoxGrid(origin=origin, res=res, shape=shape)

    occ = np.zeros(shape, dtype=bool)
    for b in member_list:
        lo, hi = b.bounds(unit)
        lo[:-1] *= 2.0**hdilate
        hi[:-1] *= 2.0**hdilate
        i_lo = np.round((lo - origin) / res).astype(int)
        i_hi = np.round((hi - origin) / res).astype(int)
        sl = tuple(slice(a, b_) for a, b_ in zip(i_lo, i_hi))
        occ[sl] = True

    blocked = [np.zeros([s - 1 if a == ax else s for a, s in enumerate(shape)],
                        dtype=bool) for ax in range(d + 1)]

    h_centers = grid.axis_centers(d)
    x_axes = [grid.axis_centers(a) for a in range(d)]
    if d == 1:
        x_grid = x_axes[0][:, None]
    else:
        xx, yy = np.meshgrid(x_axes[0], x_axes[1], indexing="ij")
        x_grid = np.stack([xx.ravel(), yy.ravel()], axis=1)

    dividers = {}
    for w in mins:
        bf = box_frame(w, unit, hdilate)
        n_max = int(np.floor(np.log2(max(bf.scale / res, 1.0)))) if bf.scale > res else 0
        n_max = max(1, min(RING_LIMIT, n_max))
        dividers[w] = (bf, divider_rings(w, n_max))

        h_real = bf.height_to_real(
            cover_height_normalized(bf.to_normalized(x_grid), d)
        )
        h_field = h_real.reshape(shape[:-1]) if d == 2 else h_real

        # vertical edges crossing the envelope: convention puts a voxel
        # center lying exactly on the surface with the upper side
        f = (h_field - origin[-1]) / res - 0.5
        ih = np.ceil(f).astype(int) - 1
        valid = (ih >= 0) & (ih < shape[-1] - 1) & (h_field > 0)
        if d == 1:
            for i in np.flatnonzero(valid):
                blocked[d][i, ih[i]] = True
        else:
            for i, j in np.argwhere(valid):
                blocked[d][i, j, ih[i, j]] = True

        # horizontal edges: blocked where the above/below classification flips
        above = h_centers[None, :] >= h_field.reshape(-1)[:, None]
        above = above.reshape(*shape[:-1], shape[-1])
        for ax in range(d):
            sl_a = [slice(None)] * (d + 1)
            sl_b = [slice(None)] * (d + 1)
            sl_a[ax] = slice(None, -1)
            sl_b[ax] = slice(1, None)
            flip = above[tuple(sl_a)] != above[tuple(sl_b)]
            blocked[ax] |= flip

    for w, (bf, div) in dividers.items():
        for wall in div.walls:
            ax = wall["axis"]
            pos_real = bf.center_x[ax] + wall["pos"] * bf.scale
            ie = int(round((pos_real - origin[ax]) / res)) - 1
            if not (0 <= ie < shape[ax] - 1):
                continue
            cap_real = bf.height_to_real(wall["cap"])
            if d == 1:
                env = bf.height_to_real(
                    cover_height_normalized(np.array([[wall["pos"]]]), 1)[0]
                )
                top = min(cap_real, env)
                n_blk = int(np.ceil((top - origin[-1]) / res - 0.5))
                if n_blk > 0:
                    blocked[0][ie, : min(n_blk, shape[-1])] = True
            else:
                o = 1 - ax
                o_lo = bf.center_x[o] + wall["span_lo"][0] * bf.scale
                o_hi = bf.center_x[o] + wall["span_hi"][0] * bf.scale
                centers_o = grid.axis_centers(o)
                js = np.flatnonzero((centers_o > o_lo) & (centers_o < o_hi))
                if js.shape[0] == 0:
                    continue
                cross = np.zeros((js.shape[0], 2))
                cross[:, ax] = wall["pos"]
                cross[:, o] = (centers_o[js] - bf.center_x[o]) / bf.scale
                env = bf.height_to_real(cover_height_normalized(cross, 2))
                tops = np.minimum(cap_real, env)
                n_blk = np.ceil((tops - origin[-1]) / res - 0.5).astype(int)
                for jj, nb in zip(js, n_blk):
                    if nb > 0:
                        if ax == 0:
                            blocked[0][ie, jj, : min(nb, shape[-1])] = True
                        else:
                            blocked[1][jj, ie, : min(nb, shape[-1])] = True

    flat = occ.reshape(-1)
    n_cells = flat.shape[0]
    strides = np.array(
        [int(np.prod(shape[a + 1 :])) for a in range(d + 1)], dtype=np.int64
    )
    rows, cols = [], []
    for ax in range(d + 1):
        sl_a = [slice(None)] * (d + 1)
        sl_b = [slice(None)] * (d + 1)
        sl_a[ax] = slice(None, -1)
        sl_b[ax] = slice(1, None)
        open_edge = occ[tuple(sl_a)] & occ[tuple(sl_b)] & ~blocked[ax]
        idx = np.argwhere(open_edge)
        if idx.shape[0] == 0:
            continue
        a_flat = idx @ strides
        b_flat = a_flat + strides[ax]
        rows.append(a_flat)
        cols.append(b_flat)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
    else:
        rows = np.zeros(0, dtype=np.int64)
        cols = np.zeros(0, dtype=np.int64)
    adj = coo_matrix(
        (np.ones(rows.shape[0], dtype=np.int8), (rows, cols)), shape=(n_cells, n_cells)
    )
    n_comp, labels = connected_components(adj, directed=False)
    labels = labels.reshape(shape)
    piece_labels = sorted(set(labels[occ].tolist()))

    top_center = 0.5 * (top_lo + top_hi)
    t_idx, t_ok = grid.index_of(top_center[None, :])
    top_label = int(labels[tuple(t_idx[0])]) if t_ok[0] else None

    ring_candidates = {}
    for w, (bf, div) in dividers.items():
        for n, cells in div.rings.items():
            l_real = (2.0**-n) * bf.scale
            for lo_n, hi_n in cells:
                lo_r = np.concatenate([bf.center_x + lo_n * bf.scale, [l_real]])
                hi_r = np.concatenate([bf.center_x + hi_n * bf.scale, [2 * l_real]])
                i_lo = np.maximum(np.floor((lo_r - origin) / res).astype(int), 0)
                i_hi = np.minimum(
                    np.ceil((hi_r - origin) / res).astype(int), np.asarray(shape)
                )
                if np.any(i_lo >= i_hi):
                    continue
                sl = tuple(slice(a, b_) for a, b_ in zip(i_lo, i_hi))
                sub_occ = occ[sl]
                found = np.unique(labels[sl][sub_occ])
                for lab in found:
                    cand = ring_candidates.setdefault(int(lab), [])
                    cand.append(
                        {
                            "l_real": l_real,
                            "owner": w,
                            "center": np.concatenate(
                                [bf.center_x + 0.5 * (lo_n + hi_n) * bf.scale,
                                 [1.25 * l_real]]
                            ),
                        }
                    )

    pieces = []
    report = {"ties": 0, "fallback_centers": 0, "piece_count": 0}
    from scipy.ndimage import distance_transform_edt

    for lab in piece_labels:
        mask = (labels == lab) & occ
        if not mask.any():
            continue
        prov = {}
        if lab == top_label:
            center = top_center.copy()
            prov = {"kind": "top", "owner": region.top}
        else:
            cands = ring_candidates.get(int(lab), [])
            if cands:
                l_best = max(c["l_real"] for c in cands)
                best = [c for c in cands if c["l_real"] == l_best]
                if len(best) > 1:
                    report["ties"] += 1
                    best.sort(key=lambda c: (c["owner"].n, c["owner"].k,
                                             tuple(c["center"])))
                center = best[0]["center"]
                prov = {"kind": "ring", "owner": best[0]["owner"]}
                cidx, cok = grid.index_of(center[None, :])
                if not cok[0] or not mask[tuple(cidx[0])]:
                    center = None
            else:
                center = None
            if center is None:
                dt = distance_transform_edt(mask)
                best_idx = np.unravel_index(int(np.argmax(dt)), mask.shape)
                center = grid.center_of(best_idx)
                prov = {"kind": "block", "owner": None}
                report["fallback_centers"] += 1
        piece = CarvedPiece(grid=grid, mask=mask, center=center, provenance=prov)
        if certify:
            ok, lip, dirs, radii, bad = certify_voxel_domain(
                mask, grid, center, n_dirs
            )
            if not ok:
                dt = distance_transform_edt(mask)
                best_idx = np.unravel_index(int(np.argmax(dt)), mask.shape)
                center2 = grid.center_of(best_idx)
                ok, lip, dirs, radii, bad = certify_voxel_domain(
                    mask, grid, center2, n_dirs
                )
                if ok:
                    piece.center = center2
                    piece.provenance = dict(prov, kind=prov["kind"] + "-recentered")
                    report["fallback_centers"] += 1
            if not ok:
                raise CertificationFailure(
                    lab, f"ray {bad} crosses the boundary twice"
                )
            piece.lipschitz_est = lip
            piece.radial_dirs = dirs
            piece.radial_vals = radii
        pieces.append(piece)

    # contributing boxes per piece
    for b in member_list:
        lo, hi = b.bounds(unit)
        lo[:-1] *= 2.0**hdilate
        hi[:-1] *= 2.0**hdilate
        i_lo = np.round((lo - origin) / res).astype(int)
        i_hi = np.round((hi - origin) / res).astype(int)
        sl = tuple(slice(a, b_) for a, b_ in zip(i_lo, i_hi))
        for piece in pieces:
            if piece.mask[sl].any():
                piece.piece_cubes.append(b)

    report["piece_count"] = len(pieces)
    report["occupied_voxels"] = int(occ.sum())
    report["piece_voxels"] = int(sum(p.mask.sum() for p in pieces))
    report["resolution"] = res
    return pieces, report


def certify_pushed_domain(face_pts, face_normals, radii_center, n_dirs: int,
                          align_tol: float = 0.05, pair_window=(0.05, 0.2)):
    """Certification of a mapped polytopal boundary by the outward-normal test.

    A closed polytopal boundary is star-shaped about the center exactly when
    every face's outward normal has a nonnegative component along the radial
    direction; ``align_tol`` absorbs facet linearization error.  The
    Lipschitz estimate uses the binned radial samples as usual.
    """
    q = np.atleast_2d(np.asarray(face_pts, float))
    nu = np.atleast_2d(np.asarray(face_normals, float))
    c = np.asarray(radii_center, float)
    rel = q - c
    rr = np.linalg.norm(rel, axis=1)
    keep = rr > 1e-12
    rel, rr, nu = rel[keep], rr[keep], nu[keep]
    rad = rel / rr[:, None]
    align = np.einsum("ij,ij->i", rad, nu)
    star_ok = bool(np.min(align) >= -align_tol)

    dirs = sphere_directions(n_dirs, c.shape[0])
    from scipy.spatial import cKDTree

    _, bins = cKDTree(dirs).query(rad)
    radii = np.full(n_dirs, -np.inf)
    np.maximum.at(radii, bins, rr)
    filled = np.isfinite(radii)
    if not np.any(filled):
        raise CenterOutside("no boundary samples around the center")
    if np.any(~filled):
        tree_f = cKDTree(dirs[filled])
        _, j = tree_f.query(dirs[~filled])
        radii[~filled] = radii[filled][j]
    r_max = float(radii.max())
    r_hat = radii / r_max
    lo, hi = pair_window
    lip = 0.0
    pairs = cKDTree(dirs).query_pairs(hi)
    for a, b in pairs:
        gap = float(np.linalg.norm(dirs[a] - dirs[b]))
        if gap < lo:
            continue
        lip = max(lip, abs(r_hat[a] - r_hat[b]) / gap)
    m_final = max(lip, 1.0 / max(r_hat.min(), 1e-9) - 1.0)
    return star_ok, float(m_final), float(np.min(align)), dirs, radii
