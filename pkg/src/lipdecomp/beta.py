"""Beta-number computations and best-fit plane search.

Four flatness functionals are supported over a ball or box window:

* ``sup`` — max distance to a plane, normalized by the window diameter;
* ``bilateral`` — two-sided normalized Hausdorff distance between the
  restricted sample and the restricted plane;
* ``lp`` — weighted L^p average of normalized distances;
* ``content`` — layer-cake integral of Hausdorff-content estimates.

Plane search is principal-axis initialization followed by derivative-free
local refinement (Nelder-Mead on normal tilt + offset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateCloud, EmptyWindow, MissingPlane
from .geom import (
    Ball,
    BoundarySample,
    Box,
    Plane,
    content_estimate,
    pca_plane,
    plane_ball_distance,
)

CONTENT_T_LEVELS = 20  # geometric t-grid 2^0 .. 2^-20 for the layer cake
CONTENT_T_SUBSTEPS = 4  # composite midpoint rule within each octave
_PLANE_GRID_CAP = 4096  # max plane-side samples for the bilateral sup


@dataclass(frozen=True)
class BetaReport:
    """A beta value together with the witness plane and window that produced it."""

    value: float
    witness_plane: Plane
    window: object


def _window_diam(window) -> float:
    return window.diam


def _restrict(E: BoundarySample, window) -> np.ndarray:
    idx = E.restrict(window)
    if idx.shape[0] == 0:
        raise EmptyWindow("window contains no sample points")
    return E.points[idx]


def area_weights(E: BoundarySample) -> np.ndarray:
    """Per-point d-area weights: nearest-neighbor gap to the d-th power.

    A stand-in for Voronoi cell areas on the sampled surface.
    """
    if len(E) == 1:
        return np.array([E.spacing**E.dim_d])
    d, _ = E.tree.query(E.points, k=2)
    gap = np.maximum(d[:, 1], E.spacing / 10.0)
    return gap**E.dim_d


def _plane_side_sup(E: BoundarySample, plane: Plane, ball: Ball) -> float:
    """sup over plane∩ball of the distance to the full sample.

    Probes are clipped to the sample's global bounding box (inflated by one
    spacing): a finite cloud only speaks for the underlying set within its
    own extent, and without the clip every window poking past the data
    would score as maximally non-flat.
    """
    h = float(plane.dist(ball.center[None, :])[0])
    if h > ball.radius:
        return 0.0
    rho = float(np.sqrt(max(ball.radius**2 - h**2, 0.0)))
    c = plane.project(ball.center[None, :])[0]
    if rho == 0.0:
        uv = np.zeros((1, plane.dim))
    elif plane.dim == 1:
        n = min(_PLANE_GRID_CAP, max(int(np.ceil(2 * rho / E.spacing)) + 1, 33))
        uv = np.linspace(-rho, rho, n)[:, None]
    else:
        per_axis = min(
            int(np.sqrt(_PLANE_GRID_CAP)),
            max(int(np.ceil(2 * rho / E.spacing)) + 1, 17),
        )
        g = np.linspace(-rho, rho, per_axis)
        uu, vv = np.meshgrid(g, g)
        uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
        uv = uv[np.linalg.norm(uv, axis=1) <= rho]
    pts = c + uv @ plane.frame
    lo = E.points.min(axis=0) - E.spacing
    hi = E.points.max(axis=0) + E.spacing
    keep = np.all((pts >= lo) & (pts <= hi), axis=1)
    pts = pts[keep]
    if pts.shape[0] == 0:
        return 0.0
    return float(np.max(E.nearest_dist(pts)))


def beta_value(E, window, plane, metric="sup", p=1, weights=None) -> float:
    """Evaluate the chosen flatness functional of ``plane`` on the window."""
    if metric == "sup":
        pts = _restrict(E, window)
        return float(np.max(plane.dist(pts))) / _window_diam(window)
    if metric == "bilateral":
        pts = _restrict(E, window)
        sample_side = float(np.max(plane.dist(pts)))
        plane_side = _plane_side_sup(E, plane, window)
        return (2.0 / window.diam) * max(sample_side, plane_side)
    if metric == "lp":
        pts = _restrict(E, window)
        r = window.radius
        if weights is None:
            w = area_weights(E)[E.restrict(window)]
        else:
            w = np.asarray(weights, dtype=float)[E.restrict(window)]
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        vals = (plane.dist(pts) / r) ** p
        return float((np.sum(w * vals) / r**E.dim_d) ** (1.0 / p))
    if metric == "content":
        return _content_beta_value(E, window, plane, p)
    raise ValueError(f"unknown metric {metric!r}")


def _content_beta_value(E: BoundarySample, ball: Ball, plane: Plane, p: int) -> float:
    """Layer-cake integral on the geometric grid t_i = 2^-i with midpoint rule."""
    _restrict(E, ball)  # raises EmptyWindow when the ball misses the sample
    r = ball.radius
    scale = E.spacing
    total = 0.0
    t_hi = 1.0
    for _ in range(CONTENT_T_LEVELS):
        t_lo = t_hi / 2.0
        edges = np.linspace(t_lo, t_hi, CONTENT_T_SUBSTEPS + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            t_mid = 0.5 * (a + b)
            layer = content_estimate(
                E, lambda pts: plane.dist(pts) > t_mid * r, ball, scale
            )
            if layer > 0.0:
                total += layer * (b**p - a**p) / p
        t_hi = t_lo
    return float((total / r**E.dim_d) ** (1.0 / p))


def _tilted_plane(plane0: Plane, params: np.ndarray) -> Plane:
    """Plane obtained by tilting the normal and sliding along it."""
    a, c = params[:-1], params[-1]
    nu = plane0.normal + plane0.frame.T @ a
    nu = nu / np.linalg.norm(nu)
    _, _, vt = np.linalg.svd(nu[None, :], full_matrices=True)
    return Plane(plane0.base + c * plane0.normal, vt[1:])


def fit_plane(
    E: BoundarySample,
    window,
    metric="sup",
    p=1,
    weights=None,
    refine_iters=200,
) -> Plane:
    """Search for a plane approximately minimizing the chosen functional.

    Principal-axis initialization, then Nelder-Mead refinement of the
    normal tilt and offset (at most ``refine_iters`` iterations, stopping
    when the improvement falls under 1e-10).  ``refine_iters=0`` returns
    the PCA plane, which is the exact L^2 minimizer.
    """
    pts = _restrict(E, window)
    plane0 = pca_plane(pts, E.dim_d)  # raises DegenerateCloud with a fallback

    if refine_iters <= 0:
        return plane0

    scale = max(_window_diam(window), 1e-12)

    def objective(t):
        return beta_value(E, window, _tilted_plane(plane0, t * scale_vec), metric, p, weights)

    scale_vec = np.concatenate([np.full(E.dim_d, 1.0), [scale * 0.25]])
    best_t = np.zeros(E.dim_d + 1)
    best_val = objective(best_t)
    for start in range(2):
        res = minimize(
            objective,
            best_t,
            method="Nelder-Mead",
            options={
                "maxiter": refine_iters,
                "fatol": 1e-10,
                "xatol": 1e-10,
                "initial_simplex": _initial_simplex(best_t, 0.2 / (4.0**start)),
            },
        )
        if res.fun < best_val:
            best_val, best_t = res.fun, res.x
    return _tilted_plane(plane0, best_t * scale_vec)


def _initial_simplex(x0, step):
    n = x0.shape[0]
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] += step
    return simplex


def jones_beta(E: BoundarySample, Q: Box, refine_iters=200) -> BetaReport:
    """Sup-distance beta of the sample in a box window."""
    plane = fit_plane(E, Q, metric="sup", refine_iters=refine_iters)
    return BetaReport(beta_value(E, Q, plane, "sup"), plane, Q)


def bilateral_beta(E: BoundarySample, B: Ball, P: Plane = None, refine_iters=200) -> BetaReport:
    """Two-sided beta; minimized over the plane search when P is omitted."""
    if P is None:
        P = fit_plane(E, B, metric="bilateral", refine_iters=refine_iters)
    return BetaReport(beta_value(E, B, P, "bilateral"), P, B)


def content_beta(E: BoundarySample, B: Ball, p=1, P: Plane = None, refine_iters=60) -> BetaReport:
    """Layer-cake content beta; minimized over the plane search when P is omitted."""
    if p not in (1, 2):
        raise ValueError("content beta supports p in {1, 2}")
    if P is None:
        P = fit_plane(E, B, metric="content", p=p, refine_iters=refine_iters)
    return BetaReport(beta_value(E, B, P, "content", p), P, B)


def lp_beta(
    E: BoundarySample, B: Ball, p=1, P: Plane = None, weights=None, refine_iters=60
) -> BetaReport:
    """Weighted L^p beta; minimized over the plane search when P is omitted."""
    if p not in (1, 2):
        raise ValueError("lp beta supports p in {1, 2}")
    if P is None:
        P = fit_plane(E, B, metric="lp", p=p, weights=weights, refine_iters=refine_iters)
    return BetaReport(beta_value(E, B, P, "lp", p, weights), P, B)


def epsilon_of_cube(q_id, lattice, K: float) -> float:
    """Plane-compatibility supremum of a cube against same/coarser-level peers.

    Pairs (U, R) run over cubes with level(U) = level(Q) and level(R) in
    {level(Q), level(Q)-1} whose K/10-inflated balls capture the center of
    Q; each pair contributes the normalized plane distance inside K*B_R.
    """
    q = lattice.cubes[q_id]
    k = q.level
    xq = q.center

    def admissible(level):
        out = []
        for cid in lattice.level_ids(level):
            c = lattice.cubes[cid]
            if np.linalg.norm(xq - c.center) <= (K / 10.0) * c.side:
                if c.plane is None:
                    raise MissingPlane(f"cube {cid} has no plane")
                out.append(c)
        return out

    us = admissible(k)
    rs = list(us)
    if k - 1 >= 0:
        rs = rs + admissible(k - 1)
    best = 0.0
    for u in us:
        for r in rs:
            ball = Ball(r.center, K * r.side)
            best = max(best, plane_ball_distance(u.plane, r.plane, ball))
    return best
