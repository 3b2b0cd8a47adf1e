import numpy as np
import pytest

from lipdecomp.beta import epsilon_of_cube
from lipdecomp.errors import (
    CCBPViolation,
    LeftCoveredRegion,
    OutOfWindow,
)
from lipdecomp.geom import Ball, Plane, plane_angle, plane_ball_distance
from lipdecomp.lattice import attach_planes, build_lattice
from lipdecomp.reifmap import (
    CCBP,
    Generation,
    ParamMap,
    build_ccbp,
    ratio_audit,
    reverse_triangle_holds,
    s_of_k,
    smoothstep01,
    zeta,
)

from conftest import make_sample, segment_sample


# ------------------------------------------------------------- scaffolding


def flat_map(n=260, depth=3, lo=-0.45, hi=0.45, f=None, eps_threshold=0.35):
    pts = segment_sample(n, lo=lo, hi=hi, f=f)
    e = make_sample(pts)
    lat = build_lattice(e, depth=depth, rho=0.25)
    attach_planes(lat, window_mult=4.0)
    ccbp = build_ccbp(lat, A0=8.0, eps_threshold=eps_threshold)
    return e, lat, ccbp, ParamMap(ccbp)


def line_ccbp(angles, half_len=4.0):
    """Handmade ladder: generation k is a dense net on a line at angles[k]."""
    base = Plane(np.zeros(2), np.array([[1.0, 0.0]]))
    gens = []
    for k, a in enumerate(angles):
        rk = 10.0**-k
        m = int(np.ceil(2 * half_len / rk))
        ts = np.linspace(-half_len, half_len, m + 1)
        d = np.array([np.cos(a), np.sin(a)])
        pts = ts[:, None] * d
        plane = Plane(np.zeros(2), d[None, :])
        gens.append(
            Generation(points=pts, planes=[plane] * len(pts), cube_ids=[None] * len(pts))
        )
    return CCBP(base_plane=base, unit=1.0, generations=gens, s_map=list(range(len(angles))))


# ------------------------------------------------------------------ ladder


def test_s_of_k_monotone():
    vals = [s_of_k(k, 0.1, 5.0) for k in range(5)]
    assert vals == [k + 1 for k in range(5)]
    vals4 = [s_of_k(k, 0.25, 5.0) for k in range(4)]
    assert all(b >= a for a, b in zip(vals4, vals4[1:]))


def test_build_ccbp_flat_all_compat_zero():
    e, lat, ccbp, pm = flat_map()
    assert ccbp.k_max >= 1
    for cond in ("base-distance", "same-generation", "cross-generation", "base-plane"):
        assert ccbp.compat.get(cond, 0.0) <= 1e-7


def test_build_ccbp_lipschitz_graph_compat_scales():
    lam = 0.05
    e, lat, ccbp, pm = flat_map(n=400, lo=-3.0, hi=3.0, f=lambda x: lam * np.sin(x))
    worst = max(
        ccbp.compat.get(c, 0.0)
        for c in ("base-distance", "same-generation", "cross-generation", "base-plane")
    )
    c_rec = worst / lam
    assert np.isfinite(c_rec)
    assert c_rec <= 12.0  # recorded constant, desk-scale ladder


def test_build_ccbp_corrupted_plane_violation():
    pts = segment_sample(260, lo=-0.45, hi=0.45)
    e = make_sample(pts)
    lat = build_lattice(e, depth=3, rho=0.25)
    attach_planes(lat, window_mult=4.0)
    clean = build_ccbp(lat, A0=8.0, eps_threshold=0.35)
    # tilt the plane of a cube that actually feeds generation 1
    victim = clean.generations[1].cube_ids[len(clean.generations[1].cube_ids) // 2]
    c = lat.cubes[victim]
    th = 0.5
    c.plane = Plane(c.plane.base, np.array([[np.cos(th), np.sin(th)]]))
    with pytest.raises(CCBPViolation) as ei:
        build_ccbp(lat, A0=8.0, eps_threshold=0.35)
    assert ei.value.condition in ("same-generation", "cross-generation", "base-plane")
    assert ei.value.magnitude > 0.35


# ------------------------------------------------------------- sigma steps


def test_sigma_identity_on_flat():
    e, lat, ccbp, pm = flat_map()
    for x in np.linspace(-0.3, 0.3, 7):
        y = np.array([x, 0.0])
        out = pm.sigma_step(0, y)
        assert np.allclose(out, y, atol=1e-12)


def test_sigma_single_ball_exact_projection():
    th = 0.3
    plane = Plane(np.zeros(2), np.array([[np.cos(th), np.sin(th)]]))
    gen = Generation(points=np.zeros((1, 2)), planes=[plane], cube_ids=[None])
    ccbp = CCBP(
        base_plane=Plane(np.zeros(2), np.array([[1.0, 0.0]])),
        unit=1.0,
        generations=[gen],
        s_map=[0],
    )
    pm = ParamMap(ccbp)
    y = np.array([0.5, 0.2])  # inside the 5-radius plateau of the single ball
    out = pm.sigma_step(0, y)
    assert np.allclose(out, plane.project(y[None, :])[0], atol=1e-14)


def test_sigma_two_balls_term_by_term():
    th1, th2 = 0.1, -0.15
    p1 = Plane(np.zeros(2), np.array([[np.cos(th1), np.sin(th1)]]))
    p2 = Plane(np.array([1.2, 0.0]), np.array([[np.cos(th2), np.sin(th2)]]))
    gen = Generation(
        points=np.array([[0.0, 0.0], [1.2, 0.0]]), planes=[p1, p2], cube_ids=[None, None]
    )
    ccbp = CCBP(
        base_plane=Plane(np.zeros(2), np.array([[1.0, 0.0]])),
        unit=1.0,
        generations=[gen],
        s_map=[0],
    )
    pm = ParamMap(ccbp)
    y = np.array([0.6, 0.1])
    # term-by-term oracle with the same cutoff shapes
    d = np.linalg.norm(gen.points - y, axis=1)
    raw = smoothstep01(2.0 - d / 5.0)
    psi_raw = np.prod(1.0 - raw)
    denom = psi_raw + raw.sum()
    want = (
        psi_raw * y + raw[0] * p1.project(y[None, :])[0] + raw[1] * p2.project(y[None, :])[0]
    ) / denom
    assert np.allclose(pm.sigma_step(0, y), want, atol=1e-12)


def test_partition_of_unity_on_grid():
    e, lat, ccbp, pm = flat_map()
    for k in range(ccbp.k_max + 1):
        rk = ccbp.r(k)
        centers = ccbp.generations[k].points
        rng = np.random.default_rng(5)
        probes = centers[rng.integers(len(centers), size=50)] + rng.uniform(
            -4 * rk, 4 * rk, size=(50, 2)
        )
        for y in probes:
            js, theta, psi = pm._partition(k, y)
            assert abs(float(np.sum(theta)) + psi - 1.0) <= 1e-9


# ------------------------------------------------------------------ chains


def test_f_eval_identity_and_k0():
    e, lat, ccbp, pm = flat_map()
    x = np.array([0.1])
    for k in range(pm.k_max + 1):
        out = pm.f_eval(k, x)
        assert np.allclose(out, [0.1, 0.0], atol=1e-12)


def test_f_eval_cover_check_raises_far_out():
    e, lat, ccbp, pm = flat_map()
    with pytest.raises(LeftCoveredRegion):
        pm.f_eval(pm.k_max, np.array([500.0]), check_cover=True)


def test_f_increments_bounded_on_graph():
    lam = 0.05
    e, lat, ccbp, pm = flat_map(n=400, lo=-3.0, hi=3.0, f=lambda x: lam * np.sin(x))
    worst = 0.0
    for x in np.linspace(-1.5, 1.5, 100):
        ch = pm.chain(np.array([x]))
        for k in range(pm.k_max):
            inc = np.linalg.norm(ch.fs[k + 1] - ch.fs[k]) / ccbp.r(k)
            worst = max(worst, inc / lam)
    assert np.isfinite(worst)
    assert worst <= 30.0  # recorded constant


def test_rotation_chain_identity():
    e, lat, ccbp, pm = flat_map()
    r = pm.rotation_chain(np.array([0.05]), pm.k_max)
    assert np.allclose(r, np.eye(2), atol=1e-10)


def test_rotation_chain_constant_tilt_closed_form():
    # surfaces rotate by phi per step: generation-k planes at angle (k+1) phi
    phi = 0.08
    ccbp = line_ccbp([phi, 2 * phi, 3 * phi])
    pm = ParamMap(ccbp)
    ch = pm.chain(np.array([0.4]))
    want = 2 * np.sin(phi / 2)
    assert np.allclose(ch.increments, want, atol=1e-6)
    # rotations stay orthogonal and carry the base tangent onto each surface
    for k in range(3):
        r = ch.rotations[k]
        assert np.allclose(r @ r.T, np.eye(2), atol=1e-10)
        img = r @ np.array([1.0, 0.0])
        assert plane_angle(
            Plane(np.zeros(2), img[None, :] / np.linalg.norm(img)),
            ch.tangent_frames[k],
        ) < 1e-6


# ----------------------------------------------------------------- the map


def test_g_identity_map():
    e, lat, ccbp, pm = flat_map()
    rng = np.random.default_rng(3)
    zs = np.column_stack([rng.uniform(-0.4, 0.4, 40), rng.uniform(0.01, 8.0, 40)])
    for z in zs:
        assert np.allclose(pm.g_eval(z), z, atol=1e-10)


def test_g_out_of_window():
    e, lat, ccbp, pm = flat_map()
    with pytest.raises(OutOfWindow):
        pm.g_eval(np.array([0.0, 10.5]))
    assert np.allclose(pm.g_eval(np.array([0.0, 10.5]), strict=False), [0.0, 10.5])


def test_rho_support_boundary_single_index():
    e, lat, ccbp, pm = flat_map()
    w = pm.rho_weights(2.0 * ccbp.unit)  # |y| = 20 r_1 = 2 r_0
    active = np.flatnonzero(w > 0)
    assert active.tolist() == [0]
    assert w[0] == pytest.approx(1.0)


def test_rho_telescoping_sum():
    e, lat, ccbp, pm = flat_map()
    for t in np.geomspace(1e-4, 10.0, 200):
        assert np.sum(pm.rho_weights(t * ccbp.unit)) == pytest.approx(1.0, abs=1e-9)


def test_g_distance_preservation_on_graph():
    lam = 0.05
    e, lat, ccbp, pm = flat_map(n=500, lo=-3.0, hi=3.0, f=lambda x: lam * np.sin(x))
    rng = np.random.default_rng(11)
    worst = 0.0
    count = 0
    for _ in range(200):
        x = rng.uniform(-1.5, 1.5)
        y = rng.uniform(30 * e.spacing, 6.0)
        g = pm.g_eval(np.array([x, y]), strict=False)
        dist = float(e.nearest_dist(g[None, :])[0])
        rel = abs(dist / y - 1.0)
        worst = max(worst, rel)
        count += 1
    assert count == 200
    c_rec = worst / (0.25 * lam)
    assert worst <= 0.25
    assert np.isfinite(c_rec)


def test_bilipschitz_ratio_audit_flat_and_graph():
    e, lat, ccbp, pm = flat_map()
    out = ratio_audit(pm, n_pairs=300, seed=1)
    assert out["l_prime"] == pytest.approx(1.0, abs=1e-6)

    lam = 0.05
    e2, lat2, ccbp2, pm2 = flat_map(n=500, lo=-3.0, hi=3.0, f=lambda x: lam * np.sin(x))
    out2 = ratio_audit(pm2, n_pairs=300, seed=2)
    assert out2["l_prime"] < 1.6
    assert out2["min_ratio"] >= 1.0 / out2["l_prime"] - 1e-12
    assert out2["max_ratio"] <= out2["l_prime"] + 1e-12
    assert sum(out2["hist"]) > 0


def test_g_inverse_roundtrip():
    lam = 0.05
    e, lat, ccbp, pm = flat_map(n=400, lo=-3.0, hi=3.0, f=lambda x: lam * np.sin(x))
    for z in [np.array([0.3, 0.5]), np.array([-1.0, 2.0]), np.array([0.9, 0.07])]:
        w = pm.g_eval(z)
        back = pm.g_inverse(w)
        assert np.allclose(back, z, atol=1e-8)


# -------------------------------------------------------------- diagnostics


def test_epsilon_prime_identity_zero():
    e, lat, ccbp, pm = flat_map()
    assert pm.epsilon_prime(1, np.array([0.1, 0.0])) == 0.0


def test_epsilon_prime_two_generation_toy_matches_pairs():
    th = 0.12
    tilted = Plane(np.zeros(2), np.array([[np.cos(th), np.sin(th)]]))
    flat = Plane(np.zeros(2), np.array([[1.0, 0.0]]))
    g0 = Generation(points=np.array([[0.0, 0.0], [1.5, 0.0]]),
                    planes=[flat, flat], cube_ids=[None, None])
    g1 = Generation(points=np.array([[0.0, 0.0], [0.3, 0.0], [0.6, 0.0]]),
                    planes=[flat, tilted, flat], cube_ids=[None] * 3)
    ccbp = CCBP(base_plane=flat, unit=1.0, generations=[g0, g1], s_map=[0, 1])
    pm = ParamMap(ccbp)
    y = np.array([0.25, 0.0])
    got = pm.epsilon_prime(1, y)
    # exhaustive pair oracle
    want = 0.0
    r1, r0 = 0.1, 1.0
    for l, gen_l, rl in ((0, g0, r0), (1, g1, r1)):
        for j, pj in enumerate(g1.planes):
            if np.linalg.norm(y - g1.points[j]) > 10 * r1:
                continue
            for i, pi in enumerate(gen_l.planes):
                if np.linalg.norm(y - gen_l.points[i]) > 11 * rl:
                    continue
                want = max(
                    want, plane_ball_distance(pj, pi, Ball(gen_l.points[i], 100 * rl))
                )
    assert got == pytest.approx(want, rel=1e-12)
    assert got > 0


def test_epsilon_prime_bounded_by_cube_epsilon():
    # the lattice bound needs the inflation K large enough that the cube
    # pair set swallows every ball pair; K = 1000 does that at this scale
    lam = 0.05
    pts = segment_sample(400, lo=-3.0, hi=3.0, f=lambda x: lam * np.sin(2 * x))
    e = make_sample(pts)
    lat = build_lattice(e, depth=3, rho=0.25)
    attach_planes(lat, window_mult=4.0)
    ccbp = build_ccbp(lat, A0=8.0)
    pm = ParamMap(ccbp)
    K = 1000.0
    rng = np.random.default_rng(9)
    checked = 0
    worst = 0.0
    level = ccbp.s_map[1]
    for cid in lat.level_ids(level)[::6]:
        if checked >= 8:
            break
        q = lat.cubes[cid]
        z = q.center + rng.uniform(-0.5, 0.5, size=2) * q.side
        ep = pm.epsilon_prime(1, z)
        eq = epsilon_of_cube(cid, lat, K)
        if eq > 0:
            worst = max(worst, ep / (K * eq))
            checked += 1
    assert checked >= 5
    assert worst <= 1.0 + 1e-9  # recorded: the lattice bound dominates


def test_dg_variation_identity_and_same_point():
    e, lat, ccbp, pm = flat_map()
    z = np.array([0.1, 1.0])
    w = np.array([-0.2, 0.7])
    val, rel = pm.dg_variation(z, w, h=1e-3)
    assert val <= 1e-8
    assert rel <= 1e-4
    val_same, _ = pm.dg_variation(z, z, h=1e-3)
    assert val_same <= 1e-12


def test_dg_variation_bounded_in_good_set():
    lam = 0.05
    e, lat, ccbp, pm = flat_map(n=500, lo=-3.0, hi=3.0, f=lambda x: lam * np.sin(x))
    z = np.array([0.0, 1.5])
    delta = 0.3
    rng = np.random.default_rng(4)
    inside_vals = []
    for _ in range(30):
        w = np.array([rng.uniform(-1.0, 1.0), rng.uniform(0.05, 1.5)])
        if pm.gz_membership(z, w, M0=12.0, eps=0.25, delta=delta):
            val, rel = pm.dg_variation(z, w, h=1e-3)
            assert rel <= 1e-4
            inside_vals.append(val)
    assert inside_vals, "no sampled points landed in the good set"
    c_rec = max(inside_vals) / delta
    assert c_rec <= 10.0


def test_gz_membership_identity_and_base_clause():
    e, lat, ccbp, pm = flat_map()
    z = np.array([0.0, 1.0])
    w = np.array([0.05, 0.5])
    assert pm.gz_membership(z, w, M0=10.0, eps=0.2, delta=0.2)
    # violate the base-distance clause: images sit exactly 2*M0*r_n apart
    m0 = 0.01
    n_z = pm.active_indices(1.0)[1]
    rn = ccbp.r(n_z)
    w_far = np.array([2 * m0 * rn, 0.5])
    z0 = np.array([0.0, 1.0])
    assert not pm.gz_membership(z0, w_far, M0=m0, eps=0.2, delta=0.2)


def test_reverse_triangle_predicate(rng):
    done = 0
    while done < 50:
        u = rng.normal(size=3)
        v = rng.normal(size=3)
        if u @ v < -0.5 * np.linalg.norm(u) * np.linalg.norm(v):
            continue
        assert reverse_triangle_holds(u, v)
        done += 1


def test_slow_variation_audit_stable_across_seeds():
    # one fixed surface, five resamplings: the recorded constant measures the
    # same geometric quantity each time and must agree within +-50%
    lam = 0.03
    delta_cap = 0.3
    vals = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        pts = segment_sample(
            440 + 7 * seed, lo=-3.0, hi=3.0, f=lambda x: lam * np.sin(x),
            rng=rng, jitter=0.002,
        )
        e = make_sample(pts)
        lat = build_lattice(e, depth=3, rho=0.25)
        attach_planes(lat, window_mult=4.0)
        pm = ParamMap(build_ccbp(lat, A0=8.0))
        z0 = np.array([0.0, 1.5])
        worst = 0.0
        for wx in np.linspace(-0.8, 0.8, 5):
            for wy in (0.15, 0.5, 1.0, 1.4):
                w = np.array([wx, wy])
                if pm.gz_membership(z0, w, M0=12.0, eps=0.25, delta=delta_cap):
                    val, _ = pm.dg_variation(z0, w, h=1e-3)
                    worst = max(worst, val)
        vals.append(worst / delta_cap)
    vals = np.asarray(vals)
    assert np.all(np.isfinite(vals)) and np.all(vals > 0)
    mid = np.mean(vals)
    assert np.all(vals <= 1.5 * mid + 1e-12)
    assert np.all(vals >= 0.5 * mid - 1e-12)
