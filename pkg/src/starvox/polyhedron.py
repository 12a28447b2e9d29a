"""Geometry of a single star-convex polyhedron and pairwise intersection
primitives.

A polyhedron is (center, n radial distances, probability) over a shared
:class:`~starvox.rays.RaySystem`; its surface triangles are the ray-hull
faces with vertices ``center + d_k * r_k``, and the solid is exactly the
union of the tetrahedra (center, face). Everything here works in (z, y, x)
voxel coordinates with float64.

The non-maximum suppression cascade uses, in order of increasing cost:
bounding spheres (upper bound), inscribed spheres (lower bound), convex
hulls (upper), kernels (lower; the set of valid star centers, bounded by
the facet-plane half-spaces), and finally the exact rasterized
intersection of both shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from . import _kernels
from .rays import RaySystem

_PLANE_EPS = 1e-12


@dataclass
class ConvexPolytope:
    """Bounded convex polytope: vertex list, half-space list (n.x <= b),
    volume, and an outward-oriented triangle soup for clipping. An empty
    polytope has volume 0 and no vertices."""

    vertices: np.ndarray  # (k, 3)
    halfspaces: np.ndarray  # (m, 4) rows (nz, ny, nx, b)
    volume: float
    face_verts: np.ndarray  # (3F, 3) triangle soup
    face_offsets: np.ndarray  # (F+1,) int64

    @property
    def is_empty(self) -> bool:
        return self.volume <= 0.0 or len(self.vertices) < 4

    @classmethod
    def empty(cls) -> "ConvexPolytope":
        return cls(
            vertices=np.zeros((0, 3)),
            halfspaces=np.zeros((0, 4)),
            volume=0.0,
            face_verts=np.zeros((0, 3)),
            face_offsets=np.zeros(1, np.int64),
        )

    @classmethod
    def from_points(cls, points: np.ndarray) -> "ConvexPolytope":
        """Convex hull of a point set; degenerate inputs give the empty polytope."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) < 4:
            return cls.empty()
        try:
            hull = ConvexHull(points)
        except QhullError:
            try:
                hull = ConvexHull(points, qhull_options="QJ1e-10")
            except QhullError:
                return cls.empty()
        if hull.volume < 1e-9:  # flat input survived the joggle retry
            return cls.empty()
        faces = hull.simplices.copy()
        centroid = points[hull.vertices].mean(axis=0)
        v0, v1, v2 = points[faces[:, 0]], points[faces[:, 1]], points[faces[:, 2]]
        n = np.cross(v1 - v0, v2 - v0)
        flip = np.einsum("fi,fi->f", n, v0 - centroid) < 0
        faces[flip] = faces[flip][:, [0, 2, 1]]
        face_verts = np.ascontiguousarray(points[faces].reshape(-1, 3))
        offsets = np.arange(0, 3 * len(faces) + 1, 3, dtype=np.int64)
        halfspaces = np.column_stack([hull.equations[:, :3], -hull.equations[:, 3]])
        return cls(
            vertices=np.ascontiguousarray(points[hull.vertices]),
            halfspaces=np.ascontiguousarray(halfspaces),
            volume=float(hull.volume),
            face_verts=face_verts,
            face_offsets=offsets,
        )


@dataclass
class StarPolyhedron:
    """One candidate/instance: center (z,y,x), n radii, probability.

    Treated as immutable after construction; derived geometry is cached on
    first use and shared safely across threads.
    """

    center: np.ndarray
    dists: np.ndarray
    prob: float
    rays: RaySystem

    _geom: "GeomCache" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.dists = np.asarray(self.dists, dtype=np.float64).reshape(-1)
        if len(self.dists) != self.rays.n:
            raise ValueError(f"got {len(self.dists)} dists for {self.rays.n} rays")
        if np.any(self.dists < 0):
            raise ValueError("radial distances must be >= 0")

    @property
    def geom(self) -> "GeomCache":
        if self._geom is None:
            self._geom = GeomCache(self)
        return self._geom


class GeomCache:
    """Derived geometry of one polyhedron: vertices, volume, bounding and
    inscribed sphere radii, facet planes, and (lazily) hull and kernel."""

    def __init__(self, p: StarPolyhedron):
        rays = p.rays
        if len(rays.faces) == 0:
            raise ValueError("polyhedron geometry requires a triangulated ray system (n >= 4)")
        c = p.center
        verts = c + p.dists[:, None] * rays.rays_zyx
        faces = rays.faces
        va, vb, vc = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
        dets = np.einsum("fi,fi->f", va - c, np.cross(vb - c, vc - c))
        # consistent face orientation makes all terms one sign
        volume = abs(float(dets.sum())) / 6.0

        normals = np.cross(vb - va, vc - va)
        h = np.einsum("fi,fi->f", normals, va - c)
        neg = h < 0
        normals[neg] = -normals[neg]
        h = np.abs(h)
        ln = np.linalg.norm(normals, axis=1)
        valid = ln > _PLANE_EPS
        plane_dist = np.full(len(faces), np.inf)
        plane_dist[valid] = h[valid] / ln[valid]

        self.polyhedron = p
        self.vertices = verts
        self.volume = volume
        self.r_out = float(p.dists.max()) if len(p.dists) else 0.0
        self.r_in = float(max(0.0, plane_dist.min())) if valid.any() else 0.0
        if not np.isfinite(self.r_in):
            self.r_in = 0.0
        self._plane_normals = normals[valid] / ln[valid, None]
        self._plane_offsets = np.einsum("fi,fi->f", self._plane_normals, va[valid])
        self._hull = None
        self._kernel = None
        for a in (self.vertices, self._plane_normals, self._plane_offsets):
            a.setflags(write=False)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Inclusive integer voxel bounds covering the polyhedron."""
        lo = np.minimum(self.vertices.min(axis=0), self.polyhedron.center)
        hi = np.maximum(self.vertices.max(axis=0), self.polyhedron.center)
        return (
            np.ceil(lo - 1e-9).astype(np.int64),
            np.floor(hi + 1e-9).astype(np.int64),
        )

    @property
    def hull(self) -> ConvexPolytope:
        if self._hull is None:
            self._hull = ConvexPolytope.from_points(self.vertices)
        return self._hull

    @property
    def kernel(self) -> ConvexPolytope:
        """Intersection of the facet-plane half-spaces around the center;
        numerically degenerate kernels collapse to the empty polytope (a
        looser but still valid lower bound)."""
        if self._kernel is None:
            self._kernel = self._compute_kernel()
        return self._kernel

    def _compute_kernel(self) -> ConvexPolytope:
        if self.r_in <= 1e-7 or len(self._plane_normals) < 4:
            return ConvexPolytope.empty()
        hs = np.column_stack([self._plane_normals, -self._plane_offsets])
        try:
            inter = HalfspaceIntersection(hs, self.polyhedron.center.copy())
        except QhullError:
            return ConvexPolytope.empty()
        return ConvexPolytope.from_points(inter.intersections)


def vertices(p: StarPolyhedron) -> np.ndarray:
    """The n surface vertices center + d_k * r_k, in (z,y,x)."""
    return p.geom.vertices


def volume(p: StarPolyhedron) -> float:
    """Enclosed volume (sum of signed tetrahedra over the surface faces)."""
    return p.geom.volume


def bounding_radius(p: StarPolyhedron) -> float:
    """max_k d_k; the solid lies inside this sphere around the center."""
    return p.geom.r_out


def inscribed_radius(p: StarPolyhedron) -> float:
    """Least distance from the center to a facet plane (conservative: the
    sphere of this radius is contained in the polyhedron)."""
    return p.geom.r_in


def convex_hull(p: StarPolyhedron) -> ConvexPolytope:
    return p.geom.hull


def kernel(p: StarPolyhedron) -> ConvexPolytope:
    return p.geom.kernel


def contains(p: StarPolyhedron, points) -> bool | np.ndarray:
    """Membership of one point (3,) or many points (m,3) in the closed solid."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(pts.reshape(-1, 3))
    out = np.empty(len(pts), dtype=np.bool_)
    g = p.geom
    _kernels.contains_points(
        p.center, g.vertices, p.rays.faces, g.r_out, g.r_in, pts, out
    )
    return bool(out[0]) if single else out


def rasterize(p: StarPolyhedron, region) -> np.ndarray:
    """Binary mask of the voxels of ``region`` = (lo, shape) whose integer
    centers lie inside the polyhedron."""
    lo, shape = region
    lo = np.asarray(lo, dtype=np.int64).reshape(3)
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ValueError(f"empty region shape {shape}")
    mask = np.zeros(shape, dtype=np.bool_)
    _kernels.fill_mask(p.center, p.geom.vertices, p.rays.faces, lo, mask)
    return mask


def sphere_intersection_volume(r1: float, r2: float, dist: float) -> float:
    """Exact volume of the lens formed by two spheres at center distance
    ``dist`` (0 when separated, the smaller sphere when contained)."""
    if r1 < 0 or r2 < 0 or dist < 0:
        raise ValueError("radii and distance must be >= 0")
    if r1 == 0.0 or r2 == 0.0 or dist >= r1 + r2:
        return 0.0
    if dist <= abs(r1 - r2):
        return 4.0 / 3.0 * np.pi * min(r1, r2) ** 3
    d = dist
    return (
        np.pi
        * (r1 + r2 - d) ** 2
        * (d * d + 2 * d * r2 - 3 * r2 * r2 + 2 * d * r1 + 6 * r1 * r2 - 3 * r1 * r1)
        / (12 * d)
    )


def convex_intersection_volume(a: ConvexPolytope, b: ConvexPolytope) -> float:
    """Volume of the intersection of two convex polytopes (a clipped by b's
    half-spaces); 0 if either is empty or they do not meet."""
    if a.is_empty or b.is_empty:
        return 0.0
    if (a.vertices.min(axis=0) > b.vertices.max(axis=0) + 1e-12).any() or (
        b.vertices.min(axis=0) > a.vertices.max(axis=0) + 1e-12
    ).any():
        return 0.0
    scale = max(
        1.0, float(np.abs(a.vertices).max()), float(np.abs(b.vertices).max())
    )
    vol = _kernels.clip_volume(a.face_verts, a.face_offsets, b.halfspaces, 1e-9 * scale)
    return float(min(vol, a.volume, b.volume))


def _exact_with_flag(p: StarPolyhedron, q: StarPolyhedron, cached_mask=None) -> tuple[float, bool]:
    lo_p, hi_p = p.geom.bbox
    lo_q, hi_q = q.geom.bbox
    lo = np.maximum(lo_p, lo_q)
    hi = np.minimum(hi_p, hi_q)
    if (lo > hi).any():
        return 0.0, False
    shape = hi - lo + 1
    if cached_mask is not None:
        mask_p, anchor = cached_mask
        count = _kernels.pair_intersection_count_cached(
            mask_p, anchor, q.center, q.geom.vertices, q.rays.faces, lo, shape
        )
    else:
        count = _kernels.pair_intersection_count(
            p.center, p.geom.vertices, p.rays.faces,
            q.center, q.geom.vertices, q.rays.faces,
            lo, shape,
        )
    return float(count), True


def exact_intersection_volume(p: StarPolyhedron, q: StarPolyhedron) -> float:
    """Voxel count of the rasterized intersection over the shared bounding
    box (voxel centers at integer coordinates); symmetric in (p, q)."""
    return _exact_with_flag(p, q)[0]


def batch_geometry(centers: np.ndarray, dists: np.ndarray, rays: RaySystem, chunk: int = 2048):
    """Vectorized per-candidate scalars for large candidate sets.

    Returns dict with centers, volume, r_out, r_in, bbox_lo, bbox_hi arrays;
    identical values to the per-polyhedron GeomCache.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    dists = np.asarray(dists, dtype=np.float64).reshape(len(centers), -1)
    faces = rays.faces
    rz = rays.rays_zyx
    n = len(centers)
    out = {
        "centers": centers,
        "volume": np.empty(n),
        "r_out": dists.max(axis=1) if dists.size else np.zeros(n),
        "r_in": np.empty(n),
        "bbox_lo": np.empty((n, 3), np.int64),
        "bbox_hi": np.empty((n, 3), np.int64),
    }
    i0, i1, i2 = faces[:, 0], faces[:, 1], faces[:, 2]
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        v = dists[sl, :, None] * rz[None, :, :]  # relative to center
        va, vb, vc = v[:, i0], v[:, i1], v[:, i2]
        dets = np.einsum("cfi,cfi->cf", va, np.cross(vb, vc))
        out["volume"][sl] = np.abs(dets.sum(axis=1)) / 6.0
        nrm = np.cross(vb - va, vc - va)
        h = np.einsum("cfi,cfi->cf", nrm, va)
        h = np.abs(h)
        ln = np.linalg.norm(nrm, axis=2)
        pd = np.where(ln > _PLANE_EPS, h / np.maximum(ln, _PLANE_EPS), np.inf)
        r_in = pd.min(axis=1)
        r_in[~np.isfinite(r_in)] = 0.0
        out["r_in"][sl] = np.maximum(r_in, 0.0)
        av = centers[sl, None, :] + v
        blo = np.minimum(av.min(axis=1), centers[sl])
        bhi = np.maximum(av.max(axis=1), centers[sl])
        out["bbox_lo"][sl] = np.ceil(blo - 1e-9).astype(np.int64)
        out["bbox_hi"][sl] = np.floor(bhi + 1e-9).astype(np.int64)
    return out
