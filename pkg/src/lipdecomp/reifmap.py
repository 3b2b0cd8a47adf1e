"""Numerical flat-to-boundary parameterization built from a cube lattice.

The construction realizes coherent generations of balls and planes over
the lattice (net radii shrinking by a factor 10 per generation), iterates
the smoothed-projection maps across generations, tracks the rotations
aligning tangent planes, and interpolates everything into the map ``g``
that carries the flat reference plane (plus vertical offsets) onto a
neighborhood of the boundary sample.

Frame coordinates: the map's domain is R^d x R with the reference plane
at y = 0; ``ParamMap.to_world`` converts to ambient coordinates.  All
radii scale with ``unit`` (one map unit in world length).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    CCBPViolation,
    DegenerateCloud,
    DegenerateTangent,
    IllConditioned,
    InsufficientResolution,
    LeftCoveredRegion,
    MissingPlane,
    OutOfWindow,
    PartitionGap,
)
from .geom import (
    Ball,
    Isometry,
    Plane,
    frame_isometry,
    pca_plane,
    plane_ball_distance,
)

NET_SCALE_PAPER = 50.0  # net-to-cube scale factor in the generation ladder
NET_SCALE_TOY = 5.0
_PAIR_CAP = 3000  # compatibility-validation pairs per generation (strided)


def smoothstep01(t):
    """C^2 monotone ramp: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def zeta(u):
    """Cutoff used by the radial interpolation: 0 below 1, 1 above 2."""
    return smoothstep01(np.asarray(u, float) - 1.0)


def s_of_k(k: int, rho: float, nu: float, unit: float = 1.0) -> int:
    """Lattice level carrying generation k: nu*rho^s <= unit*10^-k < nu*rho^(s-1).

    ``unit`` rescales the ladder for maps built at a local scale.
    """
    s = int(np.ceil(np.log(unit * 10.0**-k / nu) / np.log(rho)))
    return max(s, 0)


@dataclass
class Generation:
    points: np.ndarray  # net centers, world coordinates
    planes: list
    cube_ids: list
    tree: cKDTree = None

    def __post_init__(self):
        if self.tree is None and self.points.shape[0]:
            self.tree = cKDTree(self.points)


@dataclass
class CCBP:
    """Coherent generations of net points, balls, and planes over the lattice."""

    base_plane: Plane
    unit: float
    generations: list
    s_map: list
    compat: dict = field(default_factory=dict)  # measured condition maxima

    @property
    def k_max(self) -> int:
        return len(self.generations) - 1

    def r(self, k: int) -> float:
        """World radius of generation-k balls (r_{-1} backs the radial tail)."""
        return self.unit * 10.0 ** (-k)


def build_ccbp(
    lat,
    region=None,
    A0: float = 8.0,
    unit: float = 1.0,
    origin=None,
    nu: float = NET_SCALE_TOY,
    k_max: int = None,
    eps_threshold: float = 0.35,
    base_plane: Plane = None,
) -> CCBP:
    """Assemble and validate the generation ladder from lattice cubes.

    Global mode (``region=None``) draws net candidates from every cube of
    the right level meeting B(origin, A0*unit); region mode restricts to the
    region's members.  Validation measures every compatibility condition and
    raises CCBPViolation naming the worst one past ``eps_threshold``.
    """
    from .geom import greedy_net_indices

    E = lat.E
    n_amb = E.ambient
    origin = np.zeros(n_amb) if origin is None else np.asarray(origin, float)

    depth = lat.depth
    ks = []
    k = 0
    while s_of_k(k, lat.rho, nu, unit) <= depth:
        ks.append(k)
        k += 1
        if k_max is not None and k > k_max:
            break
    if k_max is not None:
        ks = ks[: k_max + 1]
    if not ks:
        raise InsufficientResolution("lattice too shallow for any map generation")
    s_map = [s_of_k(k, lat.rho, nu, unit) for k in ks]

    def candidates(k):
        level = s_map[k]
        out = []
        for cid in lat.level_ids(level):
            c = lat.cubes[cid]
            if region is not None and cid not in region.members:
                continue
            gap = np.linalg.norm(c.center - origin)
            if gap > A0 * unit + c.side:
                # outside the selection ball the map is never evaluated,
                # and far cubes would poison the base-plane condition
                continue
            if c.plane is None:
                raise MissingPlane(f"cube {cid} carries no plane")
            out.append(cid)
        return out

    if base_plane is None:
        if region is not None:
            base_plane = lat.cubes[region.top].plane
        else:
            sel = candidates(0)
            if not sel:
                raise InsufficientResolution("no cubes meet the selection ball")
            pts = np.vstack([lat.cubes[cid].points(E) for cid in sel])
            try:
                base_plane = pca_plane(pts, E.dim_d)
            except DegenerateCloud as exc:
                base_plane = exc.plane

    gens = []
    prev_net_pts = None
    for k in ks:
        cids = candidates(k)
        if not cids:
            break
        centers = np.array([lat.cubes[cid].center for cid in cids])
        rk = unit * 10.0**-k
        seed = None
        if prev_net_pts is not None:
            # nested nets put every coarser center among the candidates
            prev_set = {tuple(p) for p in map(tuple, centers)}
            seed_rows = [
                i for i, p in enumerate(map(tuple, centers)) if p in prev_net_pts
            ]
            seed = np.asarray(seed_rows, dtype=int) if seed_rows else None
        keep = greedy_net_indices(centers, rk, seed_idx=seed)
        gen = Generation(
            points=centers[keep],
            planes=[lat.cubes[cids[i]].plane for i in keep],
            cube_ids=[cids[i] for i in keep],
        )
        gens.append(gen)
        prev_net_pts = {tuple(p) for p in map(tuple, gen.points)}

    if not gens:
        raise InsufficientResolution("no generations could be assembled")

    ccbp = CCBP(base_plane=base_plane, unit=unit, generations=gens, s_map=s_map[: len(gens)])
    _validate_ccbp(ccbp, eps_threshold)
    return ccbp


def _strided_pairs(pairs, cap):
    pairs = sorted(pairs)
    if len(pairs) <= cap:
        return pairs
    stride = len(pairs) // cap + 1
    return pairs[::stride]


def _validate_ccbp(ccbp: CCBP, eps_threshold: float) -> None:
    gens = ccbp.generations
    unit = ccbp.unit
    worst = {}

    def record(cond, offender, value):
        if cond not in worst or value > worst[cond][1]:
            worst[cond] = (offender, value)

    # net separation within each generation
    for k, gen in enumerate(gens):
        rk = ccbp.r(k)
        if gen.points.shape[0] > 1:
            d, _ = gen.tree.query(gen.points, k=2)
            i = int(np.argmin(d[:, 1]))
            record("net-separation", (k, i), float(rk / max(d[i, 1], 1e-300)))
    # nesting into the previous generation's doubled balls
    for k in range(1, len(gens)):
        d, _ = gens[k - 1].tree.query(gens[k].points)
        i = int(np.argmax(d))
        record("net-nesting", (k, i), float(np.max(d) / (2.0 * ccbp.r(k - 1))))
    # base generation hugs the reference plane
    d0 = ccbp.base_plane.dist(gens[0].points)
    record("base-distance", (0, int(np.argmax(d0))), float(np.max(d0) / unit))
    # plane compatibility within a generation
    for k, gen in enumerate(gens):
        rk = ccbp.r(k)
        pairs = gen.tree.query_pairs(100.0 * rk)
        for i, j in _strided_pairs(pairs, _PAIR_CAP):
            val = plane_ball_distance(
                gen.planes[i], gen.planes[j], Ball(gen.points[j], 100.0 * rk)
            )
            record("same-generation", (k, i, j), val)
    # base planes against the reference plane
    for i, x in enumerate(gens[0].points):
        if float(ccbp.base_plane.dist(x[None, :])[0]) <= 2.0 * unit:
            val = plane_ball_distance(
                gens[0].planes[i], ccbp.base_plane, Ball(x, 100.0 * unit)
            )
            record("base-plane", (0, i), val)
    # plane compatibility across consecutive generations
    for k in range(len(gens) - 1):
        rk = ccbp.r(k)
        hits = gens[k + 1].tree.query_ball_point(gens[k].points, 2.0 * rk)
        pairs = [(i, j) for i, js in enumerate(hits) for j in js]
        for i, j in _strided_pairs(pairs, _PAIR_CAP):
            val = plane_ball_distance(
                gens[k].planes[i], gens[k + 1].planes[j], Ball(gens[k].points[i], 20.0 * rk)
            )
            record("cross-generation", (k, i, j), val)

    ccbp.compat = {cond: val for cond, (off, val) in worst.items()}
    for cond in ("net-separation", "net-nesting"):
        if cond in worst and worst[cond][1] > 1.0 + 1e-9:
            off, val = worst[cond]
            raise CCBPViolation(cond, off, val)
    for cond in ("base-distance", "same-generation", "base-plane", "cross-generation"):
        if cond in worst and worst[cond][1] > eps_threshold:
            off, val = worst[cond]
            raise CCBPViolation(cond, off, val)


# --------------------------------------------------------------------------
# the parameterization
# --------------------------------------------------------------------------


def _minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Orthogonal map rotating unit vector a to b in their common plane."""
    c = float(a @ b)
    if c < -0.5:
        raise DegenerateTangent("tangent normals nearly opposite")
    s = a + b
    return np.eye(a.shape[0]) - np.outer(s, s) / (1.0 + c) + 2.0 * np.outer(b, a)


def _polar_orthonormalize(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    return u @ vt


@dataclass
class _Chain:
    fs: np.ndarray  # (k_max+1, n) iterated images of the seed point
    normals: np.ndarray  # (k_max+1, n) oriented normals of the tangent planes
    rotations: np.ndarray  # (k_max+1, n, n)
    increments: np.ndarray  # (k_max,) rotation increment norms
    tangent_frames: list  # per generation, the fitted tangent plane


class ParamMap:
    """Evaluator for the interpolated parameterization of one ladder.

    ``bump_profile`` fixes the cutoff shapes: the radial weights use the
    [1,2] ramp, the projection weights a [0,1] ramp with plateau inside
    5 of 10 ball radii.  Chains of iterated images and rotations are
    memoized per exact seed point.
    """

    def __init__(self, ccbp: CCBP, k_max: int = None, stencil_scale: float = 0.5,
                 up_world=None):
        self.ccbp = ccbp
        self.k_max = ccbp.k_max if k_max is None else min(k_max, ccbp.k_max)
        self.stencil_scale = stencil_scale
        self.frame: Isometry = frame_isometry(ccbp.base_plane)
        if up_world is not None:
            # orient the frame's vertical axis toward the given world point
            rel = np.asarray(up_world, float) - ccbp.base_plane.base
            if rel @ self.frame.q[:, -1] < 0:
                q = self.frame.q.copy()
                q[:, -1] = -q[:, -1]
                self.frame = Isometry(q, self.frame.t)
        self._chains: dict[bytes, _Chain] = {}
        d = ccbp.base_plane.dim
        offs = np.stack(
            np.meshgrid(*([np.array([-1.0, 0.0, 1.0])] * d), indexing="ij"), axis=-1
        ).reshape(-1, d)
        self._stencil = offs

    # -- coordinates ---------------------------------------------------------

    @property
    def dim_d(self) -> int:
        return self.ccbp.base_plane.dim

    def to_world(self, z):
        return self.frame(np.asarray(z, float))

    def to_frame(self, pts):
        return self.frame.inverse()(np.asarray(pts, float))

    # -- radial weights ------------------------------------------------------

    def rho_weights(self, dist: float) -> np.ndarray:
        """Radial interpolation weights per generation at |y| = dist (world)."""
        t = dist / self.ccbp.unit
        ks = np.arange(self.k_max + 1)
        w = np.zeros(self.k_max + 1)
        for k in ks:
            rk = 10.0**-k
            r_prev = 10.0 ** -(k - 1)
            if k < self.k_max:
                w[k] = zeta(t / rk) - zeta(t / r_prev)
            else:
                w[k] = 1.0 - zeta(t / r_prev)
        return w

    def active_indices(self, dist: float):
        w = self.rho_weights(dist)
        nz = np.flatnonzero(w > 0.0)
        if nz.shape[0] == 0:
            return None, None
        return int(nz.min()), int(nz.max())

    # -- smoothed projections --------------------------------------------------

    def _partition(self, k: int, y: np.ndarray):
        """Weights (theta_j over neighbors, psi) of the projection blend at y."""
        gen = self.ccbp.generations[k]
        rk = self.ccbp.r(k)
        js = gen.tree.query_ball_point(y, 10.0 * rk)
        if not js:
            return [], np.array([]), 1.0
        dist = np.linalg.norm(gen.points[js] - y, axis=1)
        raw = smoothstep01(2.0 - dist / (5.0 * rk))
        psi_raw = float(np.prod(1.0 - raw))
        denom = psi_raw + float(raw.sum())
        if denom <= 1e-12:
            raise PartitionGap(f"degenerate projection weights at {y}")
        return js, raw / denom, psi_raw / denom

    def sigma_apply(self, k: int, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        gen = self.ccbp.generations[k]
        out = pts.copy()
        for row in range(pts.shape[0]):
            y = pts[row]
            js, theta, psi = self._partition(k, y)
            if len(js) == 0:
                continue
            acc = psi * y
            for j, w in zip(js, theta):
                acc = acc + w * gen.planes[j].project(y[None, :])[0]
            out[row] = acc
        return out

    def sigma_step(self, k: int, y) -> np.ndarray:
        """One smoothed-projection step; checks the partition of unity."""
        y = np.asarray(y, float)
        js, theta, psi = self._partition(k, y)
        total = psi + float(np.sum(theta))
        if len(js) and abs(total - 1.0) > 1e-6:
            raise PartitionGap(f"weights sum to {total}")
        return self.sigma_apply(k, y[None, :])[0]

    # -- chains ----------------------------------------------------------------

    def chain(self, x_frame) -> _Chain:
        """Iterated images, tangent normals, and rotations seeded at (x, 0)."""
        x_frame = np.asarray(x_frame, float)
        if x_frame.shape[0] == self.dim_d:
            z = np.concatenate([x_frame, [0.0]])
        else:
            z = x_frame.copy()
            z[-1] = 0.0
        key = z.tobytes()
        hit = self._chains.get(key)
        if hit is not None:
            return hit
        if len(self._chains) > 120_000:
            self._chains.clear()  # bounded memoization; entries are cheap to redo

        x0 = self.to_world(z)
        n = x0.shape[0]
        fs = np.zeros((self.k_max + 1, n))
        fs[0] = x0
        for k in range(self.k_max):
            fs[k + 1] = self.sigma_apply(k, fs[k][None, :])[0]

        base_n = self.ccbp.base_plane.normal
        up = self.frame.q[:, -1]
        if base_n @ up < 0:
            base_n = -base_n
        normals = np.zeros((self.k_max + 1, n))
        normals[0] = base_n
        rots = np.zeros((self.k_max + 1, n, n))
        rots[0] = np.eye(n)
        incs = np.zeros(self.k_max)
        tangents = [self.ccbp.base_plane]
        for k in range(1, self.k_max + 1):
            rk = self.ccbp.r(k)
            sten = z[None, : ] * np.ones((self._stencil.shape[0], z.shape[0]))
            sten[:, : self.dim_d] = z[: self.dim_d] + self._stencil * (
                self.stencil_scale * rk
            )
            sten[:, -1] = 0.0
            pts = self.to_world(sten)
            for m in range(k):
                pts = self.sigma_apply(m, pts)
            cloud = np.vstack([pts, fs[k][None, :]])
            try:
                t_plane = pca_plane(cloud, self.dim_d)
            except DegenerateCloud as exc:
                raise DegenerateTangent(
                    f"generation {k} stencil collapsed at {fs[k]}"
                ) from exc
            nk = t_plane.normal
            if nk @ normals[k - 1] < 0:
                nk = -nk
            rot = _minimal_rotation(normals[k - 1], nk)
            rots[k] = _polar_orthonormalize(rot @ rots[k - 1])
            normals[k] = nk
            incs[k - 1] = float(np.linalg.norm(rots[k] - rots[k - 1], 2))
            tangents.append(t_plane)

        ch = _Chain(fs=fs, normals=normals, rotations=rots, increments=incs,
                    tangent_frames=tangents)
        self._chains[key] = ch
        return ch

    def f_eval(self, k: int, x_frame, check_cover: bool = False) -> np.ndarray:
        """k-fold composed image of the frame point (x, 0)."""
        if k > self.k_max:
            raise ValueError("k beyond the realized generations")
        ch = self.chain(x_frame)
        if check_cover:
            for m in range(k + 1):
                gen = self.ccbp.generations[m]
                d, _ = gen.tree.query(ch.fs[m])
                if d > 8.0 * self.ccbp.r(m):
                    raise LeftCoveredRegion(
                        f"f_{m} image strayed {d:.3g} from the generation net"
                    )
        return ch.fs[k]

    def rotation_chain(self, x_frame, k: int) -> np.ndarray:
        ch = self.chain(x_frame)
        return ch.rotations[k]

    # -- the interpolated map ---------------------------------------------------

    def g_eval(self, z, strict: bool = True) -> np.ndarray:
        """Image of the frame point z = (x, y); identity far above the window."""
        z = np.asarray(z, float)
        y = float(z[-1])
        ay = abs(y)
        if ay > 10.0 * self.ccbp.unit:
            if strict:
                raise OutOfWindow(f"|y| = {ay:.3g} beyond 10 map units")
            return self.to_world(z)
        ch = self.chain(z)
        if ay == 0.0:
            return ch.fs[self.k_max]
        w = self.rho_weights(ay)
        out = np.zeros(z.shape[0])
        for k in np.flatnonzero(w > 0.0):
            out = out + w[k] * (ch.fs[k] + y * ch.normals[k])
        return out

    def g_eval_many(self, zs: np.ndarray, strict: bool = True) -> np.ndarray:
        zs = np.atleast_2d(np.asarray(zs, float))
        return np.array([self.g_eval(z, strict=strict) for z in zs])

    def g_inverse(self, target_world, z0=None, tol: float = 1e-8, max_iter: int = 40):
        """Frame preimage of a world point by damped fixed-point iteration."""
        target = np.asarray(target_world, float)
        z = self.to_frame(target) if z0 is None else np.asarray(z0, float).copy()
        for _ in range(max_iter):
            gz = self.g_eval(z, strict=False)
            delta = self.to_frame(gz) - self.to_frame(target)
            # to_frame is an isometry, so the residual transfers exactly
            z = z - delta
            if np.linalg.norm(delta) < tol:
                return z
        return z

    # -- diagnostics -------------------------------------------------------------

    def epsilon_prime(self, k: int, y_world) -> float:
        """Worst plane disagreement among nearby balls of generations k-1, k."""
        if k < 1:
            raise ValueError("defined for k >= 1")
        if k > self.k_max:
            return 0.0
        y = np.asarray(y_world, float)
        genk = self.ccbp.generations[k]
        rk = self.ccbp.r(k)
        js = genk.tree.query_ball_point(y, 10.0 * rk)
        best = 0.0
        for l in (k - 1, k):
            genl = self.ccbp.generations[l]
            rl = self.ccbp.r(l)
            is_ = genl.tree.query_ball_point(y, 11.0 * rl)
            for j in js:
                for i in is_:
                    ball = Ball(genl.points[i], 100.0 * rl)
                    best = max(
                        best,
                        plane_ball_distance(genk.planes[j], genl.planes[i], ball),
                    )
        return best

    def dg_jacobian(self, z, h: float):
        """Central-difference Jacobian with a Richardson consistency figure."""
        z = np.asarray(z, float)
        n = z.shape[0]

        def fd(step):
            cols = []
            for i in range(n):
                e = np.zeros(n)
                e[i] = step
                cols.append(
                    (self.g_eval(z + e, strict=False) - self.g_eval(z - e, strict=False))
                    / (2.0 * step)
                )
            return np.stack(cols, axis=1)

        j1 = fd(h)
        j2 = fd(h / 2.0)
        rel = float(
            np.linalg.norm(j2 - j1) / max(np.linalg.norm(j2), 1e-300)
        )
        return (4.0 * j2 - j1) / 3.0, rel

    def dg_variation(self, z, w, h: float):
        """Operator norm of Dg(w) Dg(z)^-1 - I from finite differences."""
        jz, rel_z = self.dg_jacobian(z, h)
        jw, rel_w = self.dg_jacobian(w, h)
        if np.linalg.cond(jz) > 1e6:
            raise IllConditioned("Jacobian at the anchor is not invertible")
        m = jw @ np.linalg.inv(jz) - np.eye(jz.shape[0])
        return float(np.linalg.norm(m, 2)), max(rel_z, rel_w)

    def gz_membership(self, z, w, M0: float, eps: float, delta: float) -> bool:
        """Whether w sits in the good comparison set anchored at z.

        Three clauses: the iterated images stay M0-close at the anchor's
        scale, the squared plane-compatibility sum over the spanned
        generations stays below eps, and the tangent planes tilt at most
        delta (inclusive) from the anchor generation's.
        """
        z = np.asarray(z, float)
        w = np.asarray(w, float)
        if abs(w[-1]) > abs(z[-1]):
            raise ValueError("expected |y_w| <= |y_z|")
        _, n_z = self.active_indices(abs(z[-1]))
        _, n_w = self.active_indices(abs(w[-1]))
        if n_z is None or n_w is None:
            return False
        ch_z = self.chain(z)
        ch_w = self.chain(w)
        rn = self.ccbp.r(n_z)
        if np.linalg.norm(ch_z.fs[n_z] - ch_w.fs[n_z]) >= M0 * rn:
            return False
        total = 0.0
        for k in range(max(n_z, 1), n_w + 1):
            total += self.epsilon_prime(k, ch_w.fs[k]) ** 2
        if total >= eps:
            return False
        from .geom import plane_angle

        anchor = ch_w.tangent_frames[n_z]
        for k in range(n_z, n_w + 1):
            if plane_angle(ch_w.tangent_frames[k], anchor) > delta:
                return False
        return True


# --------------------------------------------------------------------------
# audits
# --------------------------------------------------------------------------


def ratio_audit(pm: ParamMap, n_pairs: int = 2000, seed: int = 0, y_range=(0.05, 8.0)):
    """Distortion ratios |g(z)-g(z')|/|z-z'| over random window pairs.

    Returns the empirical two-sided Lipschitz constant and a histogram.
    """
    rng = np.random.default_rng(seed)
    d = pm.dim_d
    u = pm.ccbp.unit
    zs = np.column_stack(
        [rng.uniform(-2 * u, 2 * u, size=(2 * n_pairs, d)),
         rng.uniform(y_range[0] * u, y_range[1] * u, size=2 * n_pairs)]
    )
    ratios = []
    for i in range(n_pairs):
        a, b = zs[2 * i], zs[2 * i + 1]
        gap = np.linalg.norm(a - b)
        if gap < 1e-9:
            continue
        ratios.append(
            float(np.linalg.norm(pm.g_eval(a, strict=False) - pm.g_eval(b, strict=False)) / gap)
        )
    ratios = np.asarray(ratios)
    l_prime = float(max(ratios.max(), 1.0 / ratios.min()))
    span = (float(ratios.min()) - 1e-9, float(ratios.max()) + 1e-9)
    hist, edges = np.histogram(ratios, bins=24, range=span)
    return {
        "l_prime": l_prime,
        "min_ratio": float(ratios.min()),
        "max_ratio": float(ratios.max()),
        "hist": hist.tolist(),
        "edges": edges.tolist(),
    }


def reverse_triangle_holds(u: np.ndarray, v: np.ndarray) -> bool:
    """Test predicate: |u| + |v| <= 2|u+v| whenever <u,v> >= -|u||v|/2."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    if u @ v < -0.5 * np.linalg.norm(u) * np.linalg.norm(v):
        raise ValueError("predicate assumes <u,v> >= -|u||v|/2")
    return np.linalg.norm(u) + np.linalg.norm(v) <= 2.0 * np.linalg.norm(u + v) + 1e-12
