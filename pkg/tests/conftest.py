import numpy as np
import pytest

from lipdecomp.geom import BoundarySample


@pytest.fixture
def rng():
    return np.random.default_rng(20240813)


def make_sample(points, dim_d=None, spacing=None):
    """BoundarySample from raw points with a measured spacing."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if dim_d is None:
        dim_d = points.shape[1] - 1
    if spacing is None:
        if points.shape[0] > 1:
            from scipy.spatial import cKDTree

            d, _ = cKDTree(points).query(points, k=2)
            # coverage gap, capped so the near-duplicate guard stays quiet
            spacing = float(min(np.max(d[:, 1]), 9.9 * np.min(d[:, 1])))
        else:
            spacing = 1.0
    return BoundarySample(points, spacing=spacing, dim_d=dim_d)


def random_rotation(n, rng):
    """Haar-ish random rotation matrix in O(n) with det +1."""
    a = rng.normal(size=(n, n))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def segment_sample(n=200, lo=-3.0, hi=3.0, f=None, rng=None, jitter=0.0):
    """Sample of a curve y = f(x) over [lo, hi] in R^2."""
    x = np.linspace(lo, hi, n)
    if jitter and rng is not None:
        x = x + rng.uniform(-jitter, jitter, size=n)
        x.sort()
    y = np.zeros_like(x) if f is None else f(x)
    return np.stack([x, y], axis=1)
