"""Stopping-time regions and coronizations of a boundary lattice.

A coronization splits the cube lattice into bad cubes (where two-sided
flatness fails at the working threshold) and good cubes grouped into
coherent stopping-time regions whose planes stay within a small angle of
the top cube's plane and whose flatness-squared sums stay bounded along
descending chains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .beta import beta_value, bilateral_beta, fit_plane
from .errors import IncoherentRegion, MissingPlane
from .geom import Ball
from .lattice import DyadicLattice


@dataclass
class StoppingRegion:
    top: int
    members: set
    minimal: set

    def __contains__(self, cube_id) -> bool:
        return cube_id in self.members


@dataclass
class CoronaParams:
    M: float = 16.0
    eps: float = 0.15
    delta: float = 0.30
    alpha: float = 0.15
    tau: float = 0.30
    eta: float = None
    refine_iters: int = 0

    def __post_init__(self):
        if self.eta is None:
            self.eta = self.eps**2


@dataclass
class Coronization:
    good: set
    bad: set
    regions: list
    params: CoronaParams
    region_of: dict = field(default_factory=dict)

    def dump_record(self) -> dict:
        return {
            "regions": [
                {
                    "top": r.top,
                    "members": sorted(r.members),
                    "minimal": sorted(r.minimal),
                }
                for r in self.regions
            ],
            "bad": sorted(self.bad),
            "params": {
                "M": self.params.M,
                "eps": self.params.eps,
                "delta": self.params.delta,
                "alpha": self.params.alpha,
                "tau": self.params.tau,
                "eta": self.params.eta,
            },
        }

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.dump_record(), fh, sort_keys=True, indent=1)


# --------------------------------------------------------------------------
# cube-family primitives
# --------------------------------------------------------------------------


def bwgl_set(lat: DyadicLattice, E, M: float, eps: float, refine_iters: int = 20) -> set:
    """Cubes whose bilateral beta over the M-inflated ball exceeds eps."""
    if eps >= 2.0:
        return set()
    out = set()
    for k in range(lat.depth + 1):
        for cid in lat.level_ids(k):
            if cube_bilateral(lat, E, cid, M, refine_iters) > eps:
                out.add(cid)
    return out


def cube_bilateral(lat: DyadicLattice, E, cid: int, M: float, refine_iters: int = 20) -> float:
    """bilateral beta of the sample in M*B_Q, seeded by the cube plane."""
    c = lat.cubes[cid]
    ball = Ball(c.center, M * c.side)
    vals = []
    if c.plane is not None:
        vals.append(beta_value(E, ball, c.plane, "bilateral"))
    if refine_iters > 0 or not vals:
        vals.append(bilateral_beta(E, ball, refine_iters=refine_iters).value)
    return min(vals)


def carleson_sum(family, q0: int, lat: DyadicLattice) -> float:
    """Sum of side^d over family members contained in the cube ``q0``."""
    d = lat.E.dim_d
    total = 0.0
    for cid in family:
        if lat.contains(cid, q0):
            total += lat.cubes[cid].side ** d
    return total


def _require_plane(lat, cid):
    p = lat.cubes[cid].plane
    if p is None:
        raise MissingPlane(f"cube {cid} has no plane")
    return p


def alpha_region(q0: int, lat: DyadicLattice, alpha: float) -> StoppingRegion:
    """Maximal coherent region below ``q0`` with the sibling-angle stop.

    A child group joins only when every sibling's plane makes an angle
    strictly below ``alpha`` with the top plane.
    """
    from .geom import plane_angle

    p_top = _require_plane(lat, q0)
    members = {q0}
    frontier = [q0]
    while frontier:
        cid = frontier.pop(0)
        kids = lat.cubes[cid].children
        if not kids:
            continue
        ok = True
        for ch in kids:
            if plane_angle(_require_plane(lat, ch), p_top) >= alpha:
                ok = False
                break
        if ok:
            members.update(kids)
            frontier.extend(kids)
    minimal = {
        cid for cid in members
        if not any(ch in members for ch in lat.cubes[cid].children)
    }
    return StoppingRegion(top=q0, members=members, minimal=minimal)


def cube_set_distance(lat: DyadicLattice, qa: int, qb: int) -> float:
    """Exact distance between the member point sets of two cubes."""
    from scipy.spatial import cKDTree

    a = lat.cubes[qa]
    b = lat.cubes[qb]
    pa = lat.E.points[a.point_idx]
    pb = lat.E.points[b.point_idx]
    if pa.shape[0] > pb.shape[0]:
        pa, pb = pb, pa
    d, _ = cKDTree(pb).query(pa)
    return float(np.min(d))


def layer_distance(lat: DyadicLattice, q: int, layer) -> float:
    """inf over layer cubes R of side(R) + dist(Q, R), with exact set distances."""
    layer = list(layer)
    if not layer:
        return np.inf
    c_q = lat.cubes[q]
    centers = np.array([lat.cubes[r].center for r in layer])
    sides = np.array([lat.cubes[r].side for r in layer])
    gaps = np.linalg.norm(centers - c_q.center, axis=1)
    lower = sides + np.maximum(0.0, gaps - c_q.side - sides)
    best = np.inf
    for i in np.argsort(lower):
        if lower[i] >= best:
            break
        cand = sides[i] + cube_set_distance(lat, q, layer[i])
        best = min(best, cand)
    return float(best)


def _sibling_group(lat: DyadicLattice, cid: int) -> list:
    c = lat.cubes[cid]
    if c.parent is None:
        return list(lat.level_ids(0))
    return list(lat.cubes[c.parent].children)


def layer_smooth(stopped, lat: DyadicLattice, tau: float) -> set:
    """Maximal cubes owning a sibling much smaller than its layer distance.

    Realizes the smoothing step that turns a layer of regions into the next
    generation of stopped cubes: a cube qualifies when some sibling Q'
    (itself included) has side(Q') < tau * (inf over layer of side + dist).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    qualifying = set()
    for k in range(lat.depth + 1):
        for cid in lat.level_ids(k):
            for sib in _sibling_group(lat, cid):
                if lat.cubes[sib].side < tau * layer_distance(lat, sib, stopped):
                    qualifying.add(cid)
                    break
    maximal = set()
    for cid in qualifying:
        c = lat.cubes[cid]
        anc = c.parent
        has_anc = False
        while anc is not None:
            if anc in qualifying:
                has_anc = True
                break
            anc = lat.cubes[anc].parent
        if not has_anc:
            maximal.add(cid)
    return maximal


# --------------------------------------------------------------------------
# graph coronization
# --------------------------------------------------------------------------


def graph_coronization(lat: DyadicLattice, E, params: CoronaParams = None) -> Coronization:
    """Partition the lattice into bad cubes and coherent graph regions.

    Region growth from each unassigned good top stops a child group when a
    sibling tilts past the angle threshold against the top plane, when the
    cumulative squared flatness along the chain would pass ``eta``, when a
    child is bad, or when a child is far smaller than the nearby stopped
    scale (the tau-comparability rule).
    """
    from .geom import plane_angle

    params = params or CoronaParams()
    bad = bwgl_set(lat, E, params.M, params.eps, refine_iters=params.refine_iters)
    angle_cap = min(params.alpha, params.delta)

    beta_sq: dict[int, float] = {}

    def beta_sq_of(cid: int) -> float:
        if cid not in beta_sq:
            c = lat.cubes[cid]
            ball = Ball(c.center, params.M * c.side)
            beta_sq[cid] = beta_value(E, ball, _require_plane(lat, cid), "lp", p=1) ** 2
        return beta_sq[cid]

    all_ids = [cid for k in range(lat.depth + 1) for cid in lat.level_ids(k)]
    assigned: set = set()
    regions: list[StoppingRegion] = []
    stopped_frontier: list[int] = []  # minimal cubes of finished regions

    for cid in all_ids:
        if cid in assigned or cid in bad:
            continue
        top = cid
        p_top = _require_plane(lat, top)
        members = {top}
        cum = {top: beta_sq_of(top)}
        frontier = [top]
        while frontier:
            cur = frontier.pop(0)
            kids = lat.cubes[cur].children
            if not kids:
                continue
            group_ok = True
            for ch in kids:
                if ch in bad or ch in assigned:
                    group_ok = False
                    break
                if plane_angle(_require_plane(lat, ch), p_top) >= angle_cap:
                    group_ok = False
                    break
                if cum[cur] + beta_sq_of(ch) > params.eta:
                    group_ok = False
                    break
                if params.tau > 0 and stopped_frontier:
                    d_stop = _visible_layer_distance(
                        lat, ch, stopped_frontier, params.tau
                    )
                    if d_stop is not None and lat.cubes[ch].side < params.tau * d_stop:
                        group_ok = False
                        break
            if group_ok:
                for ch in kids:
                    members.add(ch)
                    cum[ch] = cum[cur] + beta_sq_of(ch)
                    frontier.append(ch)
        minimal = {
            m for m in members
            if not any(ch in members for ch in lat.cubes[m].children)
        }
        regions.append(StoppingRegion(top=top, members=members, minimal=minimal))
        assigned |= members
        stopped_frontier.extend(sorted(minimal))

    good = set(all_ids) - bad
    cor = Coronization(good=good, bad=bad, regions=regions, params=params)
    for i, r in enumerate(regions):
        for m in r.members:
            cor.region_of[m] = i
    return cor


def _visible_layer_distance(lat: DyadicLattice, q: int, layer: list, tau: float):
    """Center-distance surrogate of ``layer_distance`` over visible stops.

    Only already-stopped cubes within 1/tau of their own size matter: the
    smoothing exists to keep adjacent stopping scales comparable, and a
    sequential frontier (unlike the appendix's everywhere-dense layer)
    must not constrain growth far away from any stop.  Returns None when
    no stop is visible.
    """
    c = lat.cubes[q]
    centers = np.array([lat.cubes[r].center for r in layer])
    sides = np.array([lat.cubes[r].side for r in layer])
    gaps = np.linalg.norm(centers - c.center, axis=1)
    dist = np.maximum(0.0, gaps - c.side - sides)
    visible = dist <= sides / tau
    if not np.any(visible):
        return None
    return float(np.min(sides[visible] + dist[visible]))


# --------------------------------------------------------------------------
# audits
# --------------------------------------------------------------------------


def audit_region_coherence(region: StoppingRegion, lat: DyadicLattice) -> None:
    """Exhaustive Def-style coherence audit; raises IncoherentRegion."""
    for m in region.members:
        if not lat.contains(m, region.top):
            raise IncoherentRegion(f"member {m} not below top {region.top}")
        # intermediate closure: walk up to the top
        cur = m
        while cur != region.top:
            cur = lat.cubes[cur].parent
            if cur is None:
                raise IncoherentRegion(f"member {m} does not chain to the top")
            if cur not in region.members:
                raise IncoherentRegion(f"intermediate cube {cur} missing")
    for m in region.members:
        kids = lat.cubes[m].children
        if kids:
            inside = [ch in region.members for ch in kids]
            if any(inside) and not all(inside):
                raise IncoherentRegion(f"children of {m} are split")


def audit_coronization(cor: Coronization, lat: DyadicLattice) -> dict:
    """Partition + coherence + angle audit; returns recorded maxima."""
    from .geom import plane_angle

    all_ids = {cid for k in range(lat.depth + 1) for cid in lat.level_ids(k)}
    assert cor.good | cor.bad == all_ids
    assert not (cor.good & cor.bad)
    seen = set()
    for r in cor.regions:
        audit_region_coherence(r, lat)
        assert not (seen & r.members), "regions overlap"
        seen |= r.members
    assert seen == cor.good, "regions do not partition the good cubes"
    max_angle = 0.0
    for r in cor.regions:
        p_top = lat.cubes[r.top].plane
        for m in r.members:
            max_angle = max(max_angle, plane_angle(lat.cubes[m].plane, p_top))
    return {"max_angle_to_top": max_angle, "n_regions": len(cor.regions),
            "n_bad": len(cor.bad)}


def edge_bad_set(cor: Coronization, lat: DyadicLattice, close_const: float) -> set:
    """Bad cubes plus good cubes close to a cube of a different region."""
    from .lattice import CloseIndex, cube_extent

    ids = sorted(cor.region_of)
    extents = [cube_extent(lat, cid) for cid in ids]
    index = CloseIndex(extents)
    out = set(cor.bad)
    for i, cid in enumerate(ids):
        mine = cor.region_of[cid]
        for j in index.query(extents[i], close_const):
            if cor.region_of[ids[j]] != mine:
                out.add(cid)
                break
    return out
