"""Candidate extraction and greedy non-maximum suppression.

Every voxel of the prediction grid with object probability above a
threshold contributes one polyhedron candidate; the highest-probability
candidate is kept and suppresses every remaining candidate overlapping it
substantially, repeated until no candidates remain. Deciding "overlaps
substantially" is the expensive part, so each pairwise decision runs
through a cascade of successively tighter volume bounds -- bounding
spheres (upper), inscribed spheres (lower), convex hulls (upper), kernels
(lower) -- and only pairs the bounds cannot settle are rasterized exactly.

A small conservative band (``bound_margin``) around the threshold keeps
bound-stage decisions in agreement with the rasterized exact stage, whose
voxel counts are quantized; with it, cascade on/off produce identical
kept sets.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from . import _kernels
from . import polyhedron as poly
from ._version import __version__
from .encode import GridSpec
from .polyhedron import StarPolyhedron
from .rays import RaySystem, fibonacci_rays
from .synth import blob_distances
from .volumes import DistVolume, ScalarVolume

STAGES = ("outer-sphere", "inner-sphere", "hull", "kernel", "exact")
CRITERIA = ("smaller", "iou")
_TINY = 1e-9


@dataclass
class NmsConfig:
    """``overlap_thresh`` in (0,1]; ``criterion`` is the overlap ratio
    definition: intersection over the smaller volume ("smaller", suppresses
    nested candidates aggressively) or intersection over union ("iou").
    ``raster_budget`` only flags (never changes) excessive exact work."""

    overlap_thresh: float = 0.4
    criterion: str = "smaller"
    use_cascade: bool = True
    raster_budget: int | None = None
    bound_margin: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.overlap_thresh <= 1.0:
            raise ValueError(f"overlap_thresh must be in (0,1], got {self.overlap_thresh}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.bound_margin < 0:
            raise ValueError("bound_margin must be >= 0")

    def to_dict(self) -> dict:
        return {
            "overlap_thresh": self.overlap_thresh,
            "criterion": self.criterion,
            "use_cascade": self.use_cascade,
            "raster_budget": self.raster_budget,
            "bound_margin": self.bound_margin,
        }


@dataclass
class NmsStats:
    """Where the pairwise decisions were settled, plus exact-work counters."""

    n_candidates: int = 0
    n_kept: int = 0
    stage_counts: dict = field(default_factory=lambda: {s: 0 for s in STAGES})
    n_raster: int = 0
    wall_time_s: float = 0.0
    raster_budget_exceeded: bool = False

    @property
    def total_decisions(self) -> int:
        return sum(self.stage_counts.values())

    def to_dict(self) -> dict:
        return {
            "n_candidates": self.n_candidates,
            "n_kept": self.n_kept,
            "stage_counts": dict(self.stage_counts),
            "total_decisions": self.total_decisions,
            "n_raster": self.n_raster,
            "wall_time_s": self.wall_time_s,
            "raster_budget_exceeded": self.raster_budget_exceeded,
        }


@dataclass
class CandidateSet:
    """Probability-sorted candidates awaiting suppression."""

    candidates: list
    grid: GridSpec
    prob_thresh: float
    source_shape: tuple[int, int, int]

    def __post_init__(self):
        self.candidates = _sorted_candidates(self.candidates)

    def __len__(self) -> int:
        return len(self.candidates)


def _sorted_candidates(items):
    def key(c):
        return (-c.prob, c.center[0], c.center[1], c.center[2])

    return sorted(items, key=key)


def extract_candidates(
    p_hat: ScalarVolume,
    d_hat: DistVolume,
    rays: RaySystem,
    grid: GridSpec | None = None,
    prob_thresh: float = 0.5,
    source_shape=None,
) -> CandidateSet:
    """One candidate per grid voxel with probability >= ``prob_thresh``.

    Centers are grid coordinates scaled back to full resolution; distances
    are copied unscaled (they are predicted in full-resolution voxel units
    regardless of the grid).
    """
    grid = grid or GridSpec()
    if p_hat.data.shape != d_hat.data.shape[:3]:
        raise ValueError(
            f"probability/distance grid shapes differ: {p_hat.data.shape} vs {d_hat.data.shape[:3]}"
        )
    if d_hat.n_rays != rays.n:
        raise ValueError(f"distance volume has {d_hat.n_rays} channels for {rays.n} rays")
    g = np.asarray(grid.as_tuple(), dtype=np.float64)
    mask = p_hat.data >= prob_thresh
    zz, yy, xx = np.nonzero(mask)
    probs = p_hat.data[zz, yy, xx].astype(np.float64)
    centers = np.stack([zz, yy, xx], axis=1).astype(np.float64) * g
    dists = d_hat.data[zz, yy, xx].astype(np.float64)
    items = [
        StarPolyhedron(centers[i], dists[i], float(probs[i]), rays)
        for i in range(len(probs))
    ]
    if source_shape is None:
        source_shape = tuple(int(s * f) for s, f in zip(p_hat.data.shape, grid.as_tuple()))
    return CandidateSet(items, grid, prob_thresh, tuple(source_shape))


def _lens_vec(r1: float, r2: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Vectorized sphere-sphere lens volume (one fixed radius vs arrays)."""
    r1 = np.full_like(r2, r1)
    rmin = np.minimum(r1, r2)
    out = np.where(d <= np.abs(r1 - r2), 4.0 / 3.0 * np.pi * rmin**3, 0.0)
    partial = (d > np.abs(r1 - r2)) & (d < r1 + r2) & (rmin > 0)
    dd = np.where(partial, d, 1.0)
    lens = (
        np.pi
        * (r1 + r2 - dd) ** 2
        * (dd * dd + 2 * dd * r2 - 3 * r2 * r2 + 2 * dd * r1 + 6 * r1 * r2 - 3 * r1 * r1)
        / (12 * dd)
    )
    return np.where(partial, lens, out)


# The one-sided stage bounds clip the suppressor's hull (or kernel) by a
# 32-plane polyhedron circumscribed around (inscribed in) the other
# candidate's bounding (inscribed) sphere. They are valid upper/lower
# bounds that need no per-pair polytope construction on the second side;
# the full two-sided clips run only when the pair's voxel region is large
# enough that exact rasterization would cost more. Decisions are the same
# either way, only where a pair gets resolved shifts.
_FULL_CLIP_WORTH_VOX = 30_000
_UNIT_BALL_PLANES: list = []


def _unit_ball_planes():
    """Half-space sets of a 32-direction polyhedron inscribed in (contained
    by) and circumscribed around (containing) the unit ball, cached."""
    if not _UNIT_BALL_PLANES:
        dirs = fibonacci_rays(32).rays_zyx
        hull = ConvexHull(dirs)
        inscribed = np.column_stack([hull.equations[:, :3], -hull.equations[:, 3]])
        circumscribed = np.column_stack([dirs, np.ones(len(dirs))])
        _UNIT_BALL_PLANES.append((inscribed, circumscribed))
    return _UNIT_BALL_PLANES[0]


def _pair_region_voxels(ga, gb) -> int:
    lo = np.maximum(ga.bbox[0], gb.bbox[0])
    hi = np.minimum(ga.bbox[1], gb.bbox[1])
    if (lo > hi).any():
        return 0
    return int(np.prod(hi - lo + 1))


def _ball_planes(unit: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    planes = unit.copy()
    planes[:, 3] = unit[:, 3] * radius + unit[:, :3] @ center
    return planes


def _clip_by(polytope, planes) -> float:
    scale = max(1.0, float(np.abs(polytope.vertices).max()))
    vol = float(
        _kernels.clip_volume(polytope.face_verts, polytope.face_offsets, planes, 1e-9 * scale)
    )
    return min(vol, polytope.volume)


def _decide(a: StarPolyhedron, b: StarPolyhedron, cfg: NmsConfig, mask_provider=None):
    """Full cascade for one pair; returns (suppress, stage, rasterized).

    ``mask_provider``, when given, returns a memoized (mask, anchor) raster
    of ``a`` over its own bounding box, reused across the many pairs that
    one kept candidate is tested against; counts are identical either way.
    """
    ga, gb = a.geom, b.geom
    va, vb = ga.volume, gb.volume
    small = min(va, vb)
    if small <= _TINY:
        return False, "outer-sphere", False
    iou = cfg.criterion == "iou"
    thr = cfg.overlap_thresh

    def up(u):
        u = min(u, small)
        return u / (va + vb - u) if iou else u / small

    def lo(l):
        l = min(max(l, 0.0), small)
        return l / (va + vb - l) if iou else l / small

    if cfg.use_cascade:
        m = cfg.bound_margin
        d = float(np.linalg.norm(a.center - b.center))
        u1 = poly.sphere_intersection_volume(ga.r_out, gb.r_out, d)
        u_ratio = up(u1)
        if u_ratio < thr - m:
            return False, "outer-sphere", False
        l1 = poly.sphere_intersection_volume(ga.r_in, gb.r_in, d)
        l_ratio = lo(l1)
        if l_ratio >= thr + m:
            return True, "inner-sphere", False
        inscribed, circumscribed = _unit_ball_planes()
        region_vox = _pair_region_voxels(ga, gb)
        # a tighter upper bound cannot fall below a known lower bound, so the
        # hull stage can only clear the pair if the sphere bounds left room;
        # likewise the kernel stage can only suppress if the upper bound does
        if l_ratio < thr - m and not ga.hull.is_empty:
            u2 = min(u1, _clip_by(ga.hull, _ball_planes(circumscribed, b.center, gb.r_out)))
            u_ratio = min(u_ratio, up(u2))
            if u_ratio < thr - m:
                return False, "hull", False
            if region_vox >= _FULL_CLIP_WORTH_VOX:
                u2 = min(u2, poly.convex_intersection_volume(ga.hull, gb.hull))
                u_ratio = min(u_ratio, up(u2))
                if u_ratio < thr - m:
                    return False, "hull", False
        if u_ratio >= thr + m and not ga.kernel.is_empty and gb.r_in > 0:
            # the one-sided bound cannot exceed either ingredient's volume,
            # so skip the clip when even that ceiling could not suppress
            ball_b = 4.0 / 3.0 * np.pi * gb.r_in**3
            if lo(min(ga.kernel.volume, ball_b)) >= thr + m:
                l2 = max(l1, _clip_by(ga.kernel, _ball_planes(inscribed, b.center, gb.r_in)))
                if lo(l2) >= thr + m:
                    return True, "kernel", False
            if region_vox >= _FULL_CLIP_WORTH_VOX:
                l2 = poly.convex_intersection_volume(ga.kernel, gb.kernel)
                if lo(max(l1, l2)) >= thr + m:
                    return True, "kernel", False
    cached = mask_provider() if mask_provider is not None else None
    inter, rasterized = poly._exact_with_flag(a, b, cached)
    denom = (va + vb - inter) if iou else small
    ratio = inter / max(denom, _TINY)
    return ratio >= thr, "exact", rasterized


def overlap_decision(a: StarPolyhedron, b: StarPolyhedron, cfg: NmsConfig | None = None):
    """Should the higher-probability candidate ``a`` suppress ``b``?
    Returns (suppress, stage-that-decided)."""
    cfg = cfg or NmsConfig()
    sup, stage, _ = _decide(a, b, cfg)
    return sup, stage


def run_nms(cands: CandidateSet, cfg: NmsConfig | None = None):
    """Greedy suppression over a probability-sorted candidate set.

    A uniform spatial hash on centers (cell size twice the largest bounding
    radius) restricts pairwise tests to neighbors; the cheap sphere stage is
    evaluated vectorized against all neighbors of each kept candidate and
    the survivors go through the full per-pair cascade. Returns the kept
    polyhedra in acceptance order plus the decision statistics.
    """
    cfg = cfg or NmsConfig()
    t0 = time.perf_counter()
    items = cands.candidates
    n = len(items)
    stats = NmsStats(n_candidates=n)
    if n == 0:
        stats.wall_time_s = time.perf_counter() - t0
        return [], stats

    rays = items[0].rays
    centers = np.stack([c.center for c in items])
    dvecs = np.stack([c.dists for c in items])
    bg = poly.batch_geometry(centers, dvecs, rays)
    vol, r_out, r_in = bg["volume"], bg["r_out"], bg["r_in"]
    bbox_lo, bbox_hi = bg["bbox_lo"], bg["bbox_hi"]

    cell = max(2.0 * float(r_out.max()), 1.0)
    keys = np.floor(centers / cell).astype(np.int64)
    buckets: dict[tuple, list] = {}
    for i in range(n):
        buckets.setdefault((keys[i, 0], keys[i, 1], keys[i, 2]), []).append(i)

    iou = cfg.criterion == "iou"
    thr, m = cfg.overlap_thresh, cfg.bound_margin
    suppressed = np.zeros(n, dtype=bool)
    kept: list[int] = []

    for i in range(n):
        if suppressed[i]:
            continue
        kept.append(i)
        kz, ky, kx = keys[i]
        neigh = []
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    neigh.extend(buckets.get((kz + dz, ky + dy, kx + dx), ()))
        js = np.array(sorted(j for j in neigh if j > i and not suppressed[j]), dtype=np.int64)
        if len(js) == 0:
            continue

        if cfg.use_cascade:
            # vectorized sphere stages (same arithmetic as _decide)
            va, vb = vol[i], vol[js]
            small = np.minimum(va, vb)
            d = np.linalg.norm(centers[js] - centers[i], axis=1)
            u1 = np.minimum(_lens_vec(r_out[i], r_out[js], d), small)
            denom_u = np.maximum((va + vb - u1) if iou else small, _TINY)
            clear = (u1 / denom_u < thr - m) | (small <= _TINY)
            stats.stage_counts["outer-sphere"] += int(np.count_nonzero(clear))
            l1 = np.minimum(_lens_vec(r_in[i], r_in[js], d), small)
            denom_l = np.maximum((va + vb - l1) if iou else small, _TINY)
            sup_inner = ~clear & (l1 / denom_l >= thr + m)
            if sup_inner.any():
                suppressed[js[sup_inner]] = True
                stats.stage_counts["inner-sphere"] += int(np.count_nonzero(sup_inner))
            clear |= sup_inner
        else:
            # bbox-disjoint pairs have exact intersection 0
            clear = (bbox_lo[js] > bbox_hi[i]).any(axis=1) | (bbox_hi[js] < bbox_lo[i]).any(axis=1)
            stats.stage_counts["exact"] += int(np.count_nonzero(clear))

        rest = js[~clear]
        if len(rest) == 0:
            continue

        holder: list = []

        def mask_provider(i=i, holder=holder):
            if not holder:
                lo_i, hi_i = items[i].geom.bbox
                holder.append((poly.rasterize(items[i], (lo_i, hi_i - lo_i + 1)), lo_i))
            return holder[0]

        for j in rest:
            sup, stage, rastered = _decide(items[i], items[int(j)], cfg, mask_provider)
            stats.stage_counts[stage] += 1
            if rastered:
                stats.n_raster += 1
            if sup:
                suppressed[j] = True

    stats.n_kept = len(kept)
    if cfg.raster_budget is not None and stats.n_raster > cfg.raster_budget:
        stats.raster_budget_exceeded = True
    stats.wall_time_s = time.perf_counter() - t0
    return [items[i] for i in kept], stats


def save_polyset(path, items, rays: RaySystem, source_shape, grid: GridSpec | None = None, extra: dict | None = None):
    """Write a polyhedra-set JSON file (shared by extraction and NMS output)."""
    grid = grid or GridSpec()
    doc = {
        "version": __version__,
        "rays": rays.to_dict(),
        "source_shape": [int(s) for s in source_shape],
        "grid": list(grid.as_tuple()),
        "items": [
            {
                "center": [float(v) for v in c.center],
                "prob": float(c.prob),
                "dists": [float(v) for v in c.dists],
            }
            for c in items
        ],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_polyset(path) -> CandidateSet:
    doc = json.loads(Path(path).read_text())
    rays = RaySystem.from_dict(doc["rays"])
    items = [
        StarPolyhedron(
            np.asarray(it["center"], dtype=np.float64),
            np.asarray(it["dists"], dtype=np.float64),
            float(it["prob"]),
            rays,
        )
        for it in doc["items"]
    ]
    gz, gy, gx = doc.get("grid", (1, 1, 1))
    return CandidateSet(
        items,
        GridSpec(gz, gy, gx),
        float(doc.get("prob_thresh", 0.0)),
        tuple(doc["source_shape"]),
    )


def random_candidates(
    shape,
    n: int,
    rays: RaySystem,
    radius_range=(4.0, 9.0),
    seed: int = 0,
    prob_range=(0.5, 1.0),
) -> CandidateSet:
    """Deterministic random candidate cloud for NMS tests and benchmarks:
    blob-shaped polyhedra at uniform centers with uniform probabilities."""
    rng = np.random.Generator(np.random.Philox(seed))
    shape = tuple(int(s) for s in shape)
    centers = np.stack([rng.uniform(0, s - 1, size=n) for s in shape], axis=1)
    probs = rng.uniform(prob_range[0], prob_range[1], size=n)
    base = rng.uniform(radius_range[0], radius_range[1], size=n)
    items = [
        StarPolyhedron(centers[i], blob_distances(rays, rng, base[i]), float(probs[i]), rays)
        for i in range(n)
    ]
    return CandidateSet(items, GridSpec(), float(prob_range[0]), shape)
