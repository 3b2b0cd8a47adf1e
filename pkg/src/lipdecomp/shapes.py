"""Built-in boundary-sample generators for the pipelines and tests.

All shapes are normalized so the sample sits inside B(0, 0.9) with a
boundary point at the origin: one top lattice cube then covers the whole
cloud, which mirrors the usual normalization "work inside the unit ball
around a boundary point".  Every generator is deterministic given the
seed and returns the sample together with an inside-the-domain oracle.
"""

from __future__ import annotations

import numpy as np

from .errors import UnknownShape
from .geom import BoundarySample

EXTENT_1D = 0.9
EXTENT_2D = 0.63


def _band_limited(lam: float, seed: int, n_modes: int = 5, w_max: float = 5.0):
    """A lam-Lipschitz band-limited function of one or two variables."""
    rng = np.random.default_rng(seed)
    amps = rng.uniform(0.5, 1.0, size=n_modes)
    freqs = rng.uniform(1.0, w_max, size=(n_modes, 2))
    phases = rng.uniform(0, 2 * np.pi, size=n_modes)

    def raw(xy):
        xy = np.atleast_2d(xy)
        acc = np.zeros(xy.shape[0])
        for a, w, ph in zip(amps, freqs, phases):
            acc += a * np.sin(xy @ w[: xy.shape[1]] + ph)
        return acc

    # normalize the worst slope on a fine probe grid to exactly lam
    if lam == 0.0:
        return lambda xy: np.zeros(np.atleast_2d(xy).shape[0])
    g = np.linspace(-1.0, 1.0, 2001)
    probe = g[:, None]
    vals = raw(probe)
    slope = np.max(np.abs(np.diff(vals))) / (g[1] - g[0])
    scale = lam / max(slope, 1e-12)

    def f(xy):
        return scale * raw(xy)

    return f


def _grid_1d(n: int, rng, jitter: float):
    x = np.linspace(-EXTENT_1D, EXTENT_1D, n)
    if jitter > 0:
        x = x + rng.uniform(-jitter, jitter, size=n) * (x[1] - x[0])
        x.sort()
    return x


def _grid_2d(n: int, rng, jitter: float):
    m = int(np.ceil(np.sqrt(n)))
    g = np.linspace(-EXTENT_2D, EXTENT_2D, m)
    xx, yy = np.meshgrid(g, g)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    if jitter > 0:
        step = g[1] - g[0]
        pts = pts + rng.uniform(-jitter, jitter, size=pts.shape) * step
    return pts


def _graph_sample(f, dim_d: int, n: int, seed: int, jitter: float = 0.1):
    rng = np.random.default_rng(seed)
    if dim_d == 1:
        x = _grid_1d(n, rng, jitter)
        base = x[:, None]
    else:
        base = _grid_2d(n, rng, jitter)
    heights = f(base) - f(np.zeros((1, dim_d)))  # boundary passes through 0
    pts = np.column_stack([base, heights])
    # center-out ordering: the first greedy net point then covers the whole
    # cloud, so the lattice has a single top cube
    pts = pts[np.argsort(np.linalg.norm(pts, axis=1), kind="stable")]
    step = (2 * EXTENT_1D / (n - 1)) if dim_d == 1 else (
        2 * EXTENT_2D / (int(np.ceil(np.sqrt(n))) - 1)
    )
    # covering radius of the jittered grid, inflated a little by the slope
    cover = 0.5 * np.sqrt(dim_d) * step * (1 + 2 * jitter)
    spacing = 1.3 * cover
    sample = BoundarySample(pts, spacing=spacing, dim_d=dim_d)

    def inside(z):
        z = np.atleast_2d(np.asarray(z, float))
        return (z[:, -1] > (f(z[:, :-1]) - f(np.zeros((1, dim_d))))).squeeze()

    return sample, inside


def generate_shape(name: str, n: int, seed: int, dim_d: int = 1, **params):
    """Deterministic boundary sample plus an inside-the-domain oracle.

    Shapes: ``plane``, ``lip_graph`` (param ``lam``), ``bump`` (param ``h``),
    ``perturbed_sphere`` (param ``eta``).
    """
    if n < 100:
        raise ValueError("need n >= 100 sample points")
    if name == "plane":
        return _graph_sample(
            lambda xy: np.zeros(np.atleast_2d(xy).shape[0]), dim_d, n, seed
        )
    if name == "lip_graph":
        lam = params.get("lam", 0.05)
        return _graph_sample(_band_limited(lam, seed), dim_d, n, seed)
    if name == "bump":
        h = params.get("h", 0.3)
        w = params.get("w", 0.12)

        def f(xy):
            xy = np.atleast_2d(xy)
            return h * np.exp(-np.sum(xy**2, axis=1) / (2 * w**2))

        return _graph_sample(f, dim_d, n, seed)
    if name == "perturbed_sphere":
        eta = params.get("eta", 0.0)
        return _sphere_sample(eta, dim_d, n, seed)
    raise UnknownShape(f"no generator named {name!r}")


def _sphere_sample(eta: float, dim_d: int, n: int, seed: int):
    """Radius-0.45 sphere through the origin with a band-limited radial wobble."""
    rng = np.random.default_rng(seed)
    r0 = 0.45
    center = np.zeros(dim_d + 1)
    center[-1] = r0
    wob = _band_limited(eta, seed + 1) if eta > 0 else (lambda t: np.zeros(np.atleast_2d(t).shape[0]))
    if dim_d == 1:
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        th += rng.uniform(-0.1, 0.1, size=n) * (2 * np.pi / n)
        dirs = np.stack([np.sin(th), -np.cos(th)], axis=1)
        rr = r0 * (1.0 + wob(th[:, None]))
        spacing = 2 * np.pi * r0 / n * 1.3
    else:
        m = n
        i = np.arange(m) + 0.5
        phi = np.arccos(1 - 2 * i / m)
        golden = np.pi * (1 + np.sqrt(5.0))
        th = golden * i
        dirs = np.stack(
            [np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), -np.cos(phi)], axis=1
        )
        rr = r0 * (1.0 + wob(np.stack([phi, th % (2 * np.pi)], axis=1)))
        spacing = np.sqrt(4 * np.pi * r0**2 / m) * 1.6
    pts = center + rr[:, None] * dirs
    pts = pts[np.argsort(np.linalg.norm(pts, axis=1), kind="stable")]
    sample = BoundarySample(pts, spacing=spacing, dim_d=dim_d)

    def inside(z):
        z = np.atleast_2d(np.asarray(z, float))
        return (np.linalg.norm(z - center, axis=1) < r0).squeeze()

    return sample, inside
