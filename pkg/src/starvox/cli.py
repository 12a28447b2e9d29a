"""Command-line pipeline: synth -> encode -> (loss) -> nms -> render -> eval,
plus the ray-fidelity table and the bounds-cascade benchmark.

Every command is a pure function of its input files and flags; JSON outputs
carry a version field and the exact configuration used. Exit codes:
0 success, 2 input/validation error, 3 internal assertion.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import matching, nms, synth
from ._version import __version__
from .encode import GridSpec, object_probability, radial_distances, reconstruct_labels, subsample
from .losses import LossWeights, loss_dist, loss_obj, loss_total
from .polyhedron import StarPolyhedron
from .rays import (
    Anisotropy,
    RaySystem,
    equidistant_grid_for,
    equidistant_rays,
    estimate_anisotropy,
    fibonacci_rays,
)
from .volumes import label_volume, read_volume, write_volume

log = logging.getLogger("starvox")

RENDER_POLICIES = ("higher-prob", "first-kept")


@dataclass(frozen=True)
class RenderPolicy:
    """How contested voxels are resolved when rendering overlapping shapes."""

    conflict: str = "higher-prob"

    def __post_init__(self):
        if self.conflict not in RENDER_POLICIES:
            raise ValueError(f"conflict must be one of {RENDER_POLICIES}")


def render_polyhedra(items, shape, policy: RenderPolicy | None = None):
    """Rasterize polyhedra into a label volume with ids 1..K in list order.

    Under "higher-prob" a contested voxel carries the id of the most
    probable shape; "first-kept" keeps the earliest shape in list order.
    Shapes entirely outside the volume are skipped with a warning.
    """
    policy = policy or RenderPolicy()
    shape = tuple(int(s) for s in shape)
    data = np.zeros(shape, dtype=np.uint32)
    if policy.conflict == "higher-prob":
        order = sorted(range(len(items)), key=lambda i: (-items[i].prob, i))
    else:
        order = range(len(items))
    dims = np.asarray(shape, dtype=np.int64)
    for i in order:
        p = items[i]
        lo, hi = p.geom.bbox
        lo2 = np.maximum(lo, 0)
        hi2 = np.minimum(hi, dims - 1)
        if (lo2 > hi2).any():
            log.warning("polyhedron %d lies outside the volume; skipped", i + 1)
            continue
        from . import polyhedron as poly

        mask = poly.rasterize(p, (lo2, hi2 - lo2 + 1))
        box = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo2, hi2))
        view = data[box]
        view[mask & (view == 0)] = i + 1
    return label_volume(data)


def cmd_render(polyset_path, out_dir, policy: RenderPolicy | None = None, shape=None):
    cands = nms.load_polyset(polyset_path)
    shape = tuple(shape) if shape else cands.source_shape
    vol = render_polyhedra(cands.candidates, shape, policy)
    write_volume(vol, out_dir)
    return vol


def _build_rays(kind: str, n: int, anisotropy: Anisotropy) -> RaySystem:
    if kind == "fibonacci":
        return fibonacci_rays(n, anisotropy)
    if kind == "equidistant":
        np_, na = equidistant_grid_for(n)
        return equidistant_rays(np_, na, anisotropy)
    raise ValueError(f"unknown ray kind {kind!r}")


def fidelity_table(labels, configs) -> list[dict]:
    """Mean reconstruction IoU of the ground-truth instances for each
    (kind, n, anisotropy) configuration; the ray-fidelity comparison."""
    rows = []
    for kind, n, aniso_spec in configs:
        if aniso_spec == "auto":
            aniso = estimate_anisotropy(labels)
        elif aniso_spec in ("iso", "1,1,1"):
            aniso = Anisotropy.isotropic()
        elif isinstance(aniso_spec, Anisotropy):
            aniso = aniso_spec
        else:
            aniso = Anisotropy(*aniso_spec)
        rays = _build_rays(kind, n, aniso)
        _, mean_iou = reconstruct_labels(labels, rays)
        rows.append(
            {
                "kind": kind,
                "n_requested": n,
                "n": rays.n,
                "anisotropy": [round(v, 4) for v in aniso.as_tuple()],
                "mean_iou": mean_iou,
            }
        )
    return rows


def bench_nms(shape, n_candidates, radius_range=(4.0, 9.0), seed=0, cfg: nms.NmsConfig | None = None) -> dict:
    """Run NMS on a random candidate cloud with the cascade on and off;
    reports both stat blocks and whether the kept sets agree."""
    cfg = cfg or nms.NmsConfig()
    rays = fibonacci_rays(96)
    cloud = nms.random_candidates(shape, n_candidates, rays, radius_range, seed)
    kept_on, stats_on = nms.run_nms(cloud, cfg)
    cfg_off = nms.NmsConfig(
        overlap_thresh=cfg.overlap_thresh,
        criterion=cfg.criterion,
        use_cascade=False,
        bound_margin=cfg.bound_margin,
    )
    kept_off, stats_off = nms.run_nms(cloud, cfg_off)
    same = len(kept_on) == len(kept_off) and all(
        a is b for a, b in zip(kept_on, kept_off)
    )
    return {
        "version": __version__,
        "config": {
            "shape": list(shape),
            "n_candidates": n_candidates,
            "radius_range": list(radius_range),
            "seed": seed,
            **cfg.to_dict(),
        },
        "cascade_on": stats_on.to_dict(),
        "cascade_off": stats_off.to_dict(),
        "kept_sets_identical": same,
    }


# ---------------------------------------------------------------------------
# argument helpers


def _triple(text, cast=float):
    parts = [cast(v) for v in str(text).split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 comma-separated values, got {text!r}")
    return tuple(parts)


def _pair(text, cast=float):
    parts = [cast(v) for v in str(text).split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 2 comma-separated values, got {text!r}")
    return tuple(parts)


def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


def _parse_fidelity_config(text):
    # kind:n:anisotropy, e.g. fibonacci:96:auto or equidistant:66:1,1,7.1
    parts = str(text).split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected kind:n:anisotropy, got {text!r}")
    kind, n, aniso = parts
    if aniso not in ("auto", "iso"):
        aniso = _triple(aniso)
    return kind, int(n), aniso


def _emit(doc, path=None):
    text = json.dumps(doc, indent=1)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommand implementations


def _run_synth(args) -> int:
    spec = synth.SceneSpec(
        shape=tuple(int(v) for v in args.shape),
        n_objects=args.n_objects,
        shape_kind=args.kind,
        radius_range=args.radius_range,
        aspect=args.aspect,
        min_separation=args.min_separation,
        seed=args.seed,
    )
    labels, truth = synth.generate(spec)
    write_volume(labels, args.out)
    truth_doc = {
        "version": __version__,
        "config": {
            "shape": list(spec.shape),
            "n_objects": spec.n_objects,
            "shape_kind": spec.shape_kind,
            "radius_range": list(spec.radius_range),
            "aspect": list(spec.aspect),
            "min_separation": spec.min_separation,
            "seed": spec.seed,
        },
        "objects": truth,
    }
    Path(args.out, "truth.json").write_text(json.dumps(truth_doc, indent=1))
    print(f"wrote {len(truth)} instances to {args.out}")
    return 0


def _run_encode(args) -> int:
    labels = read_volume(args.labels)
    if args.anisotropy == "auto":
        aniso = estimate_anisotropy(labels)
    elif args.anisotropy == "iso":
        aniso = Anisotropy.isotropic()
    else:
        aniso = Anisotropy(*_triple(args.anisotropy))
    rays = _build_rays(args.kind, args.n, aniso)
    prob = object_probability(labels)
    dist = radial_distances(labels, rays)
    grid = GridSpec(*[int(v) for v in args.grid])
    if not grid.is_identity:
        prob = subsample(prob, grid)
        dist = subsample(dist, grid)
    write_volume(prob, args.out_prob)
    write_volume(dist, args.out_dist)
    Path(args.out_rays).write_text(rays.to_json())
    print(
        f"encoded {args.labels}: anisotropy={tuple(round(v, 3) for v in aniso.as_tuple())}, "
        f"n={rays.n}, grid={grid.as_tuple()}"
    )
    return 0


def _run_loss(args) -> int:
    p = read_volume(args.prob)
    p_hat = read_volume(args.prob_pred)
    d = read_volume(args.dist)
    d_hat = read_volume(args.dist_pred)
    w = LossWeights(args.lambda_d, args.lambda_reg)
    doc = {
        "version": __version__,
        "config": {"lambda_d": w.lambda_d, "lambda_reg": w.lambda_reg},
        "obj": loss_obj(p, p_hat),
        "dist": loss_dist(p, d, d_hat, w),
        "total": loss_total(p, p_hat, d, d_hat, w),
    }
    _emit(doc, args.out)
    return 0


def _run_nms(args) -> int:
    p_hat = read_volume(args.prob)
    d_hat = read_volume(args.dist)
    rays = RaySystem.from_json(Path(args.rays).read_text())
    grid = GridSpec(*[int(v) for v in args.grid])
    cands = nms.extract_candidates(p_hat, d_hat, rays, grid, args.prob_thresh)
    cfg = nms.NmsConfig(
        overlap_thresh=args.nms_thresh,
        criterion=args.criterion,
        use_cascade=not args.no_cascade,
    )
    kept, stats = nms.run_nms(cands, cfg)
    nms.save_polyset(
        args.out,
        kept,
        rays,
        cands.source_shape,
        grid,
        extra={"prob_thresh": args.prob_thresh, "nms": cfg.to_dict()},
    )
    if args.stats_json:
        _emit({"version": __version__, "config": cfg.to_dict(), **stats.to_dict()}, args.stats_json)
    print(f"kept {stats.n_kept}/{stats.n_candidates} candidates -> {args.out}")
    return 0


def _run_render(args) -> int:
    policy = RenderPolicy(args.policy)
    shape = tuple(int(v) for v in args.shape) if args.shape else None
    vol = cmd_render(args.polyset, args.out, policy, shape)
    print(f"rendered {len(np.unique(vol.data)) - 1} instances -> {args.out}")
    return 0


def _run_eval(args) -> int:
    gt = read_volume(args.gt)
    pred = read_volume(args.pred)
    report = matching.accuracy_curve(gt, pred, args.taus)
    doc = {"version": __version__, "config": {"taus": list(args.taus)}, **report.to_dict()}
    _emit(doc, args.out)
    if args.csv:
        Path(args.csv).write_text("\n".join(report.csv_rows()) + "\n")
    return 0


def _run_fidelity(args) -> int:
    labels = read_volume(args.labels)
    rows = fidelity_table(labels, args.config)
    doc = {
        "version": __version__,
        "config": {"configs": [f"{k}:{n}:{a}" for k, n, a in args.config]},
        "rows": rows,
    }
    _emit(doc, args.out)
    if args.csv:
        lines = ["kind,n,anisotropy,mean_iou"] + [
            f"{r['kind']},{r['n']},\"{r['anisotropy']}\",{r['mean_iou']:.4f}" for r in rows
        ]
        Path(args.csv).write_text("\n".join(lines) + "\n")
    return 0


def _run_bench(args) -> int:
    cfg = nms.NmsConfig(overlap_thresh=args.nms_thresh, criterion=args.criterion)
    doc = bench_nms(
        tuple(int(v) for v in args.shape), args.n_candidates, args.radius_range, args.seed, cfg
    )
    _emit(doc, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="starvox", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--threads", type=int, default=None, help="cap numba worker threads")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic label volume")
    p.add_argument("--shape", type=lambda s: _triple(s, int), default=(96, 96, 96), metavar="Z,Y,X")
    p.add_argument("--n-objects", type=int, default=10)
    p.add_argument("--kind", choices=("ellipsoid", "starblob"), default="ellipsoid")
    p.add_argument("--radius-range", type=_pair, default=(8.0, 14.0), metavar="MIN,MAX")
    p.add_argument("--aspect", type=_triple, default=(1.0, 1.0, 1.0), metavar="AZ,AY,AX")
    p.add_argument("--min-separation", type=float, default=1.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output label-volume directory")
    p.set_defaults(func=_run_synth)

    p = sub.add_parser("encode", help="labels -> object probability + radial distances")
    p.add_argument("labels", help="label-volume directory")
    p.add_argument("--n", type=int, default=96, help="ray count")
    p.add_argument("--kind", choices=("fibonacci", "equidistant"), default="fibonacci")
    p.add_argument("--anisotropy", default="auto", help="'auto', 'iso', or sx,sy,sz")
    p.add_argument("--grid", type=lambda s: _triple(s, int), default=(1, 1, 1), metavar="GZ,GY,GX")
    p.add_argument("--out-prob", required=True)
    p.add_argument("--out-dist", required=True)
    p.add_argument("--out-rays", required=True)
    p.set_defaults(func=_run_encode)

    p = sub.add_parser("loss", help="reference losses between targets and predictions")
    p.add_argument("prob")
    p.add_argument("dist")
    p.add_argument("prob_pred")
    p.add_argument("dist_pred")
    p.add_argument("--lambda-d", type=float, default=0.1)
    p.add_argument("--lambda-reg", type=float, default=1e-4)
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=_run_loss)

    p = sub.add_parser("nms", help="extract candidates and suppress overlaps")
    p.add_argument("prob", help="predicted probability volume directory")
    p.add_argument("dist", help="predicted distance volume directory")
    p.add_argument("rays", help="ray-system JSON file")
    p.add_argument("--grid", type=lambda s: _triple(s, int), default=(1, 1, 1), metavar="GZ,GY,GX")
    p.add_argument("--prob-thresh", type=float, default=0.5)
    p.add_argument("--nms-thresh", type=float, default=0.4)
    p.add_argument("--criterion", choices=nms.CRITERIA, default="smaller")
    p.add_argument("--no-cascade", action="store_true")
    p.add_argument("--stats-json", default=None)
    p.add_argument("--out", required=True, help="output polyhedra-set JSON")
    p.set_defaults(func=_run_nms)

    p = sub.add_parser("render", help="rasterize a polyhedra set to labels")
    p.add_argument("polyset")
    p.add_argument("--shape", type=lambda s: _triple(s, int), default=None, metavar="Z,Y,X")
    p.add_argument("--policy", choices=RENDER_POLICIES, default="higher-prob")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_render)

    p = sub.add_parser("eval", help="matched accuracy(tau) of predictions vs ground truth")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--taus", type=_floats, default=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9))
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_run_eval)

    p = sub.add_parser("fidelity", help="reconstruction IoU per ray configuration")
    p.add_argument("labels")
    p.add_argument(
        "--config",
        action="append",
        type=_parse_fidelity_config,
        required=True,
        metavar="KIND:N:ANISO",
        help="e.g. fibonacci:96:auto (repeatable)",
    )
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_run_fidelity)

    p = sub.add_parser("bench-nms", help="cascade on/off benchmark on a random cloud")
    p.add_argument("--shape", type=lambda s: _triple(s, int), default=(1141, 140, 140), metavar="Z,Y,X")
    p.add_argument("--n-candidates", type=int, default=12000)
    p.add_argument("--radius-range", type=_pair, default=(4.0, 9.0), metavar="MIN,MAX")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nms-thresh", type=float, default=0.4)
    p.add_argument("--criterion", choices=nms.CRITERIA, default="smaller")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_run_bench)

    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    if args.threads is not None:
        import numba

        numba.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except AssertionError as e:
        print(f"internal assertion failed: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
