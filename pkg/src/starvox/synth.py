"""Deterministic synthetic scenes with known instance geometry.

Stands in for real microscopy ground truth in tests and benchmarks:
places non-overlapping ellipsoids or smoothly-perturbed star blobs in a
volume, using a counter-based RNG (Philox) so the same seed gives a
bit-identical scene on every platform. Every generated instance is
star-convex around its center, which is what makes the encode ->
reconstruct loop a meaningful self-consistency check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import polyhedron as poly
from .polyhedron import StarPolyhedron
from .rays import Anisotropy, RaySystem, fibonacci_rays
from .volumes import LabelVolume, label_volume

GENERATOR_RAYS = 192  # surface sampling used to voxelize star blobs


@dataclass
class SceneSpec:
    """Scene parameters; ``aspect`` scales each object's per-axis semi-axes
    (in (az, ay, ax) order) relative to its base radius."""

    shape: tuple[int, int, int] = (96, 96, 96)
    n_objects: int = 10
    shape_kind: str = "ellipsoid"  # or "starblob"
    radius_range: tuple[float, float] = (8.0, 14.0)
    aspect: tuple[float, float, float] = (1.0, 1.0, 1.0)
    min_separation: float = 1.1  # fraction of summed max semi-axes
    seed: int = 0

    def __post_init__(self):
        if self.shape_kind not in ("ellipsoid", "starblob"):
            raise ValueError(f"unknown shape_kind {self.shape_kind!r}")
        if self.radius_range[0] > self.radius_range[1]:
            raise ValueError("radius_range must be (min, max)")
        if self.radius_range[0] * min(self.aspect) < 2.0:
            raise ValueError("semi-axes must be >= 2 voxels")
        if self.n_objects < 1:
            raise ValueError("need n_objects >= 1")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def smooth_radial_field(rays_zyx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smooth random field over the ray directions, normalized to max |f|=1.

    A few random first- and second-order direction harmonics; smooth enough
    that 1 + 0.3*f keeps blobs star-convex and nucleus-like.
    """
    f = np.zeros(len(rays_zyx))
    for _ in range(3):
        w = random_unit_vector(rng)
        f += rng.uniform(-1.0, 1.0) * (rays_zyx @ w)
    for _ in range(3):
        w = random_unit_vector(rng)
        f += rng.uniform(-1.0, 1.0) * ((rays_zyx @ w) ** 2 - 1.0 / 3.0)
    top = np.abs(f).max()
    return f / top if top > 0 else f


def blob_distances(
    rays: RaySystem,
    rng: np.random.Generator,
    base_radius: float,
    aspect=(1.0, 1.0, 1.0),
    amplitude: float = 0.3,
) -> np.ndarray:
    """Radial distances of a perturbed ellipsoid along the given rays."""
    a = np.asarray(aspect, dtype=np.float64)
    rho = 1.0 / np.sqrt(((rays.rays_zyx / a) ** 2).sum(axis=1))
    f = smooth_radial_field(rays.rays_zyx, rng)
    return base_radius * rho * (1.0 + amplitude * f)


def _generator_rays(aspect) -> RaySystem:
    a = np.asarray(aspect, dtype=np.float64)  # (az, ay, ax)
    top = a.max()
    return fibonacci_rays(GENERATOR_RAYS, Anisotropy(top / a[2], top / a[1], top / a[0]))


def generate(spec: SceneSpec) -> tuple[LabelVolume, list[dict]]:
    """Generate a label volume plus the true parameters of each instance.

    Objects are placed by rejection sampling (centers at least
    ``min_separation`` of the summed max semi-axes apart, fully inside the
    volume); later objects never overwrite earlier voxels.
    """
    rng = _rng(spec.seed)
    shape = np.asarray(spec.shape, dtype=np.int64)
    aspect = np.asarray(spec.aspect, dtype=np.float64)
    gen_rays = _generator_rays(spec.aspect) if spec.shape_kind == "starblob" else None

    data = np.zeros(spec.shape, dtype=np.uint32)
    placed: list[tuple[np.ndarray, float]] = []
    truth: list[dict] = []
    rejections = 0
    max_rejections = 10 * spec.n_objects
    label = 0
    while label < spec.n_objects:
        base_r = rng.uniform(*spec.radius_range)
        semi = base_r * aspect
        reach = float(semi.max())
        lo = np.ceil(semi) + 1
        hi = shape - 2 - np.ceil(semi)
        if (lo > hi).any():
            raise ValueError(f"volume {spec.shape} too small for semi-axes {tuple(semi)}")
        center = np.array([rng.uniform(lo[i], hi[i]) for i in range(3)])
        ok = all(
            np.linalg.norm(center - c) >= spec.min_separation * (reach + r)
            for c, r in placed
        )
        if not ok:
            rejections += 1
            if rejections > max_rejections:
                raise ValueError(
                    f"placement failed after {rejections} rejections "
                    f"({label}/{spec.n_objects} objects placed)"
                )
            continue
        label += 1
        placed.append((center, reach))
        entry = {
            "id": label,
            "kind": spec.shape_kind,
            "center": center.tolist(),
            "base_radius": float(base_r),
            "semi_axes": semi.tolist(),
        }
        if spec.shape_kind == "ellipsoid":
            _paint_ellipsoid(data, center, semi, label)
        else:
            dists = blob_distances(gen_rays, rng, base_r, aspect)
            p = StarPolyhedron(center, dists, 1.0, gen_rays)
            _paint_polyhedron(data, p, label)
            entry["dists"] = dists.tolist()
        truth.append(entry)
    return label_volume(data), truth


def _paint_ellipsoid(data: np.ndarray, center: np.ndarray, semi: np.ndarray, label: int):
    lo = np.maximum(np.floor(center - semi).astype(np.int64), 0)
    hi = np.minimum(np.ceil(center + semi).astype(np.int64), np.asarray(data.shape) - 1)
    grids = np.ix_(*[np.arange(a, b + 1) for a, b in zip(lo, hi)])
    q = sum(((g - c) / s) ** 2 for g, c, s in zip(grids, center, semi))
    box = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))
    view = data[box]
    sel = (q <= 1.0) & (view == 0)
    view[sel] = label


def _paint_polyhedron(data: np.ndarray, p: StarPolyhedron, label: int):
    lo, hi = p.geom.bbox
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(data.shape) - 1)
    if (lo > hi).any():
        return
    mask = poly.rasterize(p, (lo, hi - lo + 1))
    box = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))
    view = data[box]
    view[mask & (view == 0)] = label
