"""Command-line front end: ingestion, generators, pipelines, artifacts.

Runs are deterministic for a fixed config and seed; all outputs (JSON,
CSV, OBJ) are written with sorted keys and fixed float formatting so two
identical runs produce byte-identical files.

Exit codes: 0 all enabled audits pass, 2 audit failure, 3 input error,
4 internal certification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .beta import bilateral_beta, jones_beta
from .carve import carve_pieces, full_tree_region, sigma_surface, WhitneyRegion
from .decomp import (
    Decomposition,
    PipelineConfig,
    overlap_audit,
    surface_audit,
    theorem_a_decompose,
    theorem_bc_decompose,
)
from .errors import (
    CCBPViolation,
    CertificationFailure,
    FlatnessFailure,
    InsufficientResolution,
    LipdecompError,
    UnknownShape,
)
from .geom import Ball, BoundarySample, Box
from .lattice import attach_planes, build_lattice, root_boxes
from .reifmap import ParamMap, build_ccbp
from .shapes import generate_shape

PIPELINES = ("thmA", "thmB", "betas-only", "carve-only", "reifmap-diag")


@dataclass
class RunConfig:
    """Front-end configuration: pipeline choice, shape/input, knobs, paths."""

    pipeline: str = "thmA"
    shape: str = "lip_graph"
    input_path: str = None
    profile: str = "toy"
    dim_d: int = 1
    n: int = None
    seed: int = 0
    lam: float = 0.05
    h: float = 0.3
    eta_shape: float = 0.05
    out: str = "out"
    trials: int = 10000
    dirs: int = None
    grid_res: float = None
    overrides: dict = field(default_factory=dict)

    def pipeline_config(self) -> PipelineConfig:
        kw = dict(self.overrides)
        kw.setdefault("dim_d", self.dim_d)
        kw.setdefault("seed", self.seed)
        kw.setdefault("trials", self.trials)
        if self.dirs is not None:
            kw.setdefault("n_dirs", self.dirs)
        if self.profile == "paper":
            kw.pop("dim_d", None)
            return PipelineConfig.paper(dim_d=self.dim_d, **kw)
        return PipelineConfig(**kw)

    def default_n(self) -> int:
        if self.n is not None:
            return self.n
        return 3400 if self.dim_d == 1 else 20000


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: Path, record: dict) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return float(x)
    if isinstance(x, np.ndarray):
        return [float(v) for v in x.ravel()]
    raise TypeError(f"not JSON serializable: {type(x)}")


# --------------------------------------------------------------------------
# sample io
# --------------------------------------------------------------------------


def read_sample(path) -> BoundarySample:
    """Whitespace-separated points, '#' comments, header 'dim=<d+1> spacing=<s>'."""
    dim = None
    spacing = None
    pts = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line and ("dim" in line or "spacing" in line):
                for tok in line.split():
                    key, _, val = tok.partition("=")
                    if key == "dim":
                        dim = int(val)
                    elif key == "spacing":
                        spacing = float(val)
                continue
            pts.append([float(v) for v in line.split()])
    if dim is None or spacing is None:
        raise ValueError("input needs a header line 'dim=<d+1> spacing=<s>'")
    return BoundarySample(np.asarray(pts), spacing=spacing, dim_d=dim - 1)


def write_sample(path, sample: BoundarySample) -> None:
    with open(path, "w") as fh:
        fh.write(f"dim={sample.ambient} spacing={_fmt(sample.spacing)}\n")
        for p in sample.points:
            fh.write(" ".join(_fmt(v) for v in p) + "\n")


# --------------------------------------------------------------------------
# mesh export
# --------------------------------------------------------------------------


def export_piece_obj(path: Path, piece) -> None:
    """OBJ facet soup of one piece boundary ('l' polylines for d=1)."""
    sims = piece.boundary_simplices_world()
    verts = []
    vmap = {}
    faces = []

    def vid(v):
        key = tuple(np.round(v, 12))
        if key not in vmap:
            vmap[key] = len(verts) + 1
            verts.append(key)
        return vmap[key]

    for s in sims:
        faces.append([vid(v) for v in s])
    with open(path, "w") as fh:
        for v in verts:
            coords = " ".join(_fmt(c) for c in v)
            if len(v) == 2:
                coords += " 0"
            fh.write(f"v {coords}\n")
        for f in faces:
            tag = "l" if len(f) == 2 else "f"
            fh.write(tag + " " + " ".join(str(i) for i in f) + "\n")


# --------------------------------------------------------------------------
# pipeline runners
# --------------------------------------------------------------------------


def _load_sample(cfg: RunConfig):
    if cfg.input_path:
        sample = read_sample(cfg.input_path)
        up = np.eye(sample.ambient)[-1]

        def inside(z):
            # sign against the oriented local boundary: upper side is the domain
            z = np.atleast_2d(np.asarray(z, float))
            rel = z - sample.points[sample.tree.query(z)[1]]
            return (rel @ up > 0).squeeze()

        return sample, inside
    params = {"lam": cfg.lam, "h": cfg.h, "eta": cfg.eta_shape}
    return generate_shape(cfg.shape, cfg.default_n(), cfg.seed, cfg.dim_d, **params)


def run_betas_only(cfg: RunConfig, out: Path) -> int:
    sample, _ = _load_sample(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for _ in range(20):
        i = int(rng.integers(len(sample)))
        center = sample.points[i]
        radius = float(rng.uniform(0.05, 0.3))
        ball = Ball(center, radius)
        try:
            bil = bilateral_beta(sample, ball, refine_iters=20).value
        except LipdecompError:
            continue
        half = radius / np.sqrt(sample.ambient)
        box = Box(center - half, center + half)
        try:
            jb = jones_beta(sample, box, refine_iters=60).value
        except LipdecompError:
            jb = float("nan")
        rows.append([*(float(c) for c in center), radius, bil, jb])
    hdr = [f"c{i}" for i in range(sample.ambient)] + ["radius", "bilateral", "jones"]
    write_csv(out / "betas.csv", hdr, rows)
    return 0


def run_carve_only(cfg: RunConfig, out: Path) -> int:
    d = cfg.dim_d
    top = root_boxes(0, d)[0]
    kids = top.children()
    members = {top, *kids}
    stopped = kids[0]
    depth = 3 if d == 1 else 2
    frontier = [k for k in kids if k != stopped]
    for _ in range(depth - 1):
        frontier = [c for b in frontier for c in b.children()]
        members.update(frontier)
    region = WhitneyRegion(top=top, members=frozenset(members), floor_n=depth)
    grid_res = cfg.grid_res or (stopped.side / 16.0)
    pieces, report = carve_pieces(region, grid_res=grid_res, n_dirs=cfg.dirs or (160 if d == 1 else 600))
    facets = sigma_surface(region)
    meta = []
    for i, p in enumerate(pieces):
        from .decomp import DecompPiece

        dp = DecompPiece(pid=i, provenance="region-piece", pm=None, hdilate=0,
                         carved=p, box=None)
        export_piece_obj(out / f"piece_{i:04d}.obj", dp)
        meta.append(
            {
                "id": i,
                "center": [float(v) for v in p.center],
                "lipschitz_est": p.lipschitz_est,
                "kind": p.provenance.get("kind", ""),
                "voxels": int(p.mask.sum()),
            }
        )
    write_json(out / "carve.json", {
        "pieces": meta,
        "report": {k: v for k, v in report.items()},
        "sigma_area": sum(f["area"] for f in facets),
    })
    return 0


def run_reifmap_diag(cfg: RunConfig, out: Path) -> int:
    sample, _ = _load_sample(cfg)
    pcfg = cfg.pipeline_config()
    lat = build_lattice(sample, pcfg.depth, pcfg.rho)
    attach_planes(lat, window_mult=pcfg.M)
    ccbp = build_ccbp(lat, A0=pcfg.A0, nu=pcfg.nu, eps_threshold=pcfg.eps_ccbp)
    pm = ParamMap(ccbp, up_world=ccbp.base_plane.base + np.eye(sample.ambient)[-1])
    rng = np.random.default_rng(cfg.seed)
    anchor = np.zeros(sample.ambient)
    anchor[-1] = 1.5 * ccbp.unit
    rows = []
    d = pm.dim_d
    for _ in range(200):
        x = rng.uniform(-0.4, 0.4, size=d)
        y = float(rng.uniform(0.05, 6.0) * ccbp.unit)
        z = np.concatenate([x, [y]])
        g = pm.g_eval(z, strict=False)
        z_world = pm.to_world(z)
        n_y = pm.active_indices(abs(y))[1]
        eps_sum = sum(
            pm.epsilon_prime(k, pm.chain(z).fs[k]) ** 2
            for k in range(1, pm.k_max + 1)
        )
        try:
            dgv, _ = pm.dg_variation(anchor, z, h=1e-3 * ccbp.unit)
        except LipdecompError:
            dgv = float("nan")
        rows.append(
            [*z, *g, float(np.linalg.norm(g - z_world)), n_y, eps_sum, dgv]
        )
    hdr = (
        [f"z{i}" for i in range(sample.ambient)]
        + [f"g{i}" for i in range(sample.ambient)]
        + ["displacement", "n_of_y", "eps_prime_sq_sum", "dg_variation"]
    )
    write_csv(out / "reifmap_diag.csv", hdr, rows)
    lat.dump(out / "lattice.jsonl")
    return 0


def _boundary_probe_centers(sample: BoundarySample, seed: int, count: int = 5):
    rng = np.random.default_rng(seed + 17)
    idx = rng.integers(len(sample), size=count)
    return sample.points[idx]


def run_decomposition(cfg: RunConfig, out: Path) -> int:
    sample, inside = _load_sample(cfg)
    pcfg = cfg.pipeline_config()
    if cfg.pipeline == "thmA":
        D = theorem_a_decompose(sample, pcfg)
        floor = 2.0 * D.audits["h_floor"]
        bound = 1
    else:
        D = theorem_bc_decompose(sample, pcfg)
        floor = 4.0 * pcfg.nu * pcfg.rho**pcfg.depth
        bound = pcfg.overlap_bound

    ov = overlap_audit(D, pcfg.trials, lambda z: bool(inside(z)), seed=cfg.seed,
                       floor=floor)
    w = pcfg.window_radius
    surf_rows = []
    ratios = []
    for y in _boundary_probe_centers(sample, cfg.seed):
        sums = []
        for r in (w, w / 2, w / 4):
            s, ref = surface_audit(D, y, r)
            surf_rows.append([*(float(v) for v in y), r, s, ref])
            sums.append(s / r**sample.dim_d)
        sums = [v for v in sums if v > 0]
        if len(sums) >= 2:
            ratios.append(max(sums) / min(sums))

    lips = [p.lipschitz_est for p in D.pieces]
    audits_pass = (
        ov["max"] <= bound
        and ov["covered_fraction"] >= (1.0 if cfg.pipeline == "thmB" else 0.999)
        and all(p.star_ok for p in D.pieces)
        and (not ratios or max(ratios) <= 4.0)
    )
    D.audits.update(
        {
            "overlap": ov,
            "surface_ratio_max": max(ratios) if ratios else None,
            "lipschitz_bound": max(lips),
            "audit_floor": floor,
            "pass": bool(audits_pass),
        }
    )
    write_json(out / "decomposition.json", D.dump_record())
    write_csv(
        out / "surface_sums.csv",
        [f"y{i}" for i in range(sample.ambient)] + ["r", "sum", "reference"],
        surf_rows,
    )
    write_csv(
        out / "overlap_hist.csv",
        ["multiplicity", "count"],
        list(enumerate(ov["histogram"])),
    )
    for p in D.pieces[: min(len(D.pieces), 200)]:
        export_piece_obj(out / f"piece_{p.pid:04d}.obj", p)
    return 0 if audits_pass else 2


def run(cfg: RunConfig) -> int:
    """Execute one configured run; returns the process exit code."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    record = {"config": {k: v for k, v in vars(cfg).items() if k != "overrides"},
              "overrides": cfg.overrides}
    try:
        if cfg.pipeline not in PIPELINES:
            raise UnknownShape(f"unknown pipeline {cfg.pipeline!r}")
        if cfg.pipeline == "betas-only":
            code = run_betas_only(cfg, out)
        elif cfg.pipeline == "carve-only":
            code = run_carve_only(cfg, out)
        elif cfg.pipeline == "reifmap-diag":
            code = run_reifmap_diag(cfg, out)
        else:
            code = run_decomposition(cfg, out)
        record["status"] = "ok" if code == 0 else "audit-failure"
    except (UnknownShape, FileNotFoundError, ValueError) as exc:
        record["status"] = "input-error"
        record["failure"] = {"kind": type(exc).__name__, "detail": str(exc)}
        code = 3
    except (FlatnessFailure, CCBPViolation, InsufficientResolution) as exc:
        record["status"] = "audit-failure"
        record["failure"] = {
            "kind": type(exc).__name__,
            "detail": str(exc),
            "condition": getattr(exc, "condition", None),
        }
        code = 2
    except CertificationFailure as exc:
        record["status"] = "certification-failure"
        record["failure"] = {"kind": type(exc).__name__, "detail": str(exc)}
        code = 4
    record["exit_code"] = code
    write_json(out / "run.json", record)
    return code


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def parse_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


_NUMERIC_OVERRIDES = (
    "eps", "delta", "alpha", "tau", "eta", "M", "A0", "A1", "K",
    "rho", "nu", "eps_ccbp", "a_surround", "a_classify", "a_buffer",
    "reject_factor", "h_floor_units", "window_radius",
)
_INT_OVERRIDES = ("depth", "k_max", "grid_divisor", "ratio_pairs", "overlap_bound")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lipdecomp",
        description="Lipschitz-graph-domain decompositions of sampled boundaries",
    )
    ap.add_argument("--pipeline", choices=PIPELINES, default="thmA")
    ap.add_argument("--shape", default="lip_graph",
                    help="plane | lip_graph | bump | perturbed_sphere")
    ap.add_argument("--input", dest="input_path", default=None,
                    help="point-cloud file (overrides --shape)")
    ap.add_argument("--profile", choices=("toy", "paper"), default="toy")
    ap.add_argument("--dim", dest="dim_d", type=int, choices=(1, 2), default=1)
    ap.add_argument("--n", type=int, default=None, help="sample size")
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lambda", dest="lam", type=float, default=0.05)
    ap.add_argument("--h", type=float, default=0.3)
    ap.add_argument("--eta-shape", dest="eta_shape", type=float, default=0.05)
    ap.add_argument("--trials", type=int, default=10000)
    ap.add_argument("--dirs", type=int, default=None)
    ap.add_argument("--grid-res", dest="grid_res", type=float, default=None)
    ap.add_argument("--k-max", dest="k_max", type=int, default=None)
    ap.add_argument("--config", default=None, help="key = value override file")
    for name in ("eps", "delta", "alpha", "tau"):
        ap.add_argument(f"--{name}", type=float, default=None)
    ap.add_argument("--depth", type=int, default=None)
    return ap


def config_from_args(args) -> RunConfig:
    overrides = {}
    if args.config:
        raw = parse_config_file(args.config)
        for key, val in raw.items():
            if key in _NUMERIC_OVERRIDES:
                overrides[key] = float(val)
            elif key in _INT_OVERRIDES:
                overrides[key] = int(val)
    for name in ("eps", "delta", "alpha", "tau"):
        val = getattr(args, name)
        if val is not None:
            overrides[name] = val
    if args.depth is not None:
        overrides["depth"] = args.depth
    if args.k_max is not None:
        overrides["k_max"] = args.k_max
    return RunConfig(
        pipeline=args.pipeline,
        shape=args.shape,
        input_path=args.input_path,
        profile=args.profile,
        dim_d=args.dim_d,
        n=args.n,
        seed=args.seed,
        lam=args.lam,
        h=args.h,
        eta_shape=args.eta_shape,
        out=args.out,
        trials=args.trials,
        dirs=args.dirs,
        grid_res=args.grid_res,
        overrides=overrides,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(config_from_args(args))


if __name__ == "__main__":
    sys.exit(main())
