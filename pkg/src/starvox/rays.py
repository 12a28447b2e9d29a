"""Fixed unit-ray systems shared by all polyhedra.

Rays are generated on a spherical Fibonacci lattice (or an equidistant
polar/azimuth grid for comparison), squeezed by a per-axis anisotropy
factor and re-normalized, so that ray density adapts to the typical
object shape of a dataset. The convex hull of the ray endpoints induces
the triangulation used for every polyhedron surface; distance channel k
always refers to ray k.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from .volumes import LabelVolume

GOLDEN_RATIO = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class Anisotropy:
    """Per-axis squeeze factor (sx, sy, sz); 1 on the largest-extent axis."""

    sx: float = 1.0
    sy: float = 1.0
    sz: float = 1.0

    def __post_init__(self):
        if min(self.sx, self.sy, self.sz) <= 0:
            raise ValueError(f"anisotropy components must be > 0, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.sx, self.sy, self.sz)

    @property
    def is_isotropic(self) -> bool:
        return self.sx == self.sy == self.sz

    @classmethod
    def isotropic(cls) -> "Anisotropy":
        return cls(1.0, 1.0, 1.0)


@dataclass
class RaySystem:
    """n fixed unit rays plus the triangulation of their direction sphere.

    ``rays`` holds (x, y, z) unit vectors in lattice order; ``faces`` is the
    convex-hull triangulation (index triples into ``rays``), oriented so that
    det[r_i, r_j, r_k] > 0 for every face. ``faces`` is empty when n < 4.
    Immutable after construction.
    """

    kind: str
    n: int
    anisotropy: Anisotropy
    rays: np.ndarray  # (n, 3) float64, (x, y, z)
    faces: np.ndarray  # (F, 3) int32

    _rays_zyx: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.rays = np.ascontiguousarray(self.rays, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32).reshape(-1, 3)
        norms = np.linalg.norm(self.rays, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("rays must be unit vectors")

    @property
    def rays_zyx(self) -> np.ndarray:
        """Rays as (z, y, x) rows, matching volume index order."""
        if self._rays_zyx is None:
            self._rays_zyx = np.ascontiguousarray(self.rays[:, ::-1])
        return self._rays_zyx

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "anisotropy": list(self.anisotropy.as_tuple()),
            "rays": self.rays.tolist(),
            "faces": self.faces.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RaySystem":
        return cls(
            kind=d["kind"],
            n=int(d["n"]),
            anisotropy=Anisotropy(*d["anisotropy"]),
            rays=np.asarray(d["rays"], dtype=np.float64),
            faces=np.asarray(d["faces"], dtype=np.int32).reshape(-1, 3),
        )

    @classmethod
    def from_json(cls, s: str) -> "RaySystem":
        return cls.from_dict(json.loads(s))


def _normalize_scaled(points_xyz: np.ndarray, anisotropy: Anisotropy) -> np.ndarray:
    s = np.array(anisotropy.as_tuple(), dtype=np.float64)
    u = points_xyz / s
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _triangulate(rays_xyz: np.ndarray) -> np.ndarray:
    """Convex-hull triangulation of the ray endpoints, outward-oriented.

    Fibonacci/equidistant points are in general position; on a degenerate
    qhull failure we retry with a tiny joggle.
    """
    try:
        hull = ConvexHull(rays_xyz)
    except Exception:
        hull = ConvexHull(rays_xyz, qhull_options="QJ1e-12")
    faces = hull.simplices.astype(np.int32)
    r = rays_xyz
    det = np.einsum("fi,fi->f", r[faces[:, 0]], np.cross(r[faces[:, 1]], r[faces[:, 2]]))
    flip = det < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    # canonical form: smallest index first (cyclic, orientation-preserving), rows sorted
    roll = np.argmin(faces, axis=1)
    for k in (1, 2):
        sel = roll == k
        faces[sel] = np.roll(faces[sel], -k, axis=1)
    order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
    return np.ascontiguousarray(faces[order])


def _finish(kind: str, rays_xyz: np.ndarray, anisotropy: Anisotropy, triangulate) -> RaySystem:
    n = len(rays_xyz)
    if triangulate == "auto":
        triangulate = n >= 4
    if triangulate and n < 4:
        raise ValueError(f"triangulation requires n >= 4, got n={n}")
    faces = _triangulate(rays_xyz) if triangulate else np.zeros((0, 3), np.int32)
    return RaySystem(kind, n, anisotropy, rays_xyz, faces)


def fibonacci_rays(n: int, anisotropy: Anisotropy | None = None, triangulate="auto") -> RaySystem:
    """n unit rays on a spherical Fibonacci lattice, squeezed by ``anisotropy``.

    Lattice points: z_k = -1 + 2k/(n-1), azimuth 2*pi*(1 - 1/phi)*k with the
    golden ratio phi; each point is divided componentwise by (sx, sy, sz) and
    re-normalized. k=0 and k=n-1 are the exact -Z / +Z poles.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    anisotropy = anisotropy or Anisotropy.isotropic()
    k = np.arange(n, dtype=np.float64)
    z = -1.0 + 2.0 * k / (n - 1)
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    ang = 2.0 * np.pi * (1.0 - 1.0 / GOLDEN_RATIO) * k
    pts = np.stack([rho * np.cos(ang), rho * np.sin(ang), z], axis=1)
    return _finish("fibonacci", _normalize_scaled(pts, anisotropy), anisotropy, triangulate)


def equidistant_rays(
    n_polar: int, n_azimuth: int, anisotropy: Anisotropy | None = None, triangulate="auto"
) -> RaySystem:
    """Uniform polar/azimuth grid plus the two poles (n = n_polar*n_azimuth + 2).

    Polar angles are uniform in the open interval (0, pi); azimuths uniform in
    [0, 2*pi). Anisotropy is applied exactly as for the Fibonacci lattice.
    """
    if n_polar < 2:
        raise ValueError(f"need n_polar >= 2, got {n_polar}")
    if n_azimuth < 3:
        raise ValueError(f"need n_azimuth >= 3, got {n_azimuth}")
    anisotropy = anisotropy or Anisotropy.isotropic()
    theta = np.pi * (np.arange(1, n_polar + 1)) / (n_polar + 1)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    t, p = np.meshgrid(theta, phi, indexing="ij")
    grid = np.stack(
        [np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1
    ).reshape(-1, 3)
    pts = np.vstack([[0.0, 0.0, -1.0], grid, [0.0, 0.0, 1.0]])
    return _finish("equidistant", _normalize_scaled(pts, anisotropy), anisotropy, triangulate)


def equidistant_grid_for(n_total: int) -> tuple[int, int]:
    """Pick (n_polar, n_azimuth) whose ray count is closest to ``n_total``.

    Azimuth count is kept near twice the polar count (the grid spans 2*pi vs
    pi). Useful for comparing ray kinds at matched n.
    """
    if n_total < 8:
        raise ValueError("need n_total >= 8")
    m = n_total - 2
    best = None
    for p in range(2, int(np.sqrt(m)) + 3):
        a = max(3, round(m / p))
        score = (abs(p * a - m), abs(a - 2 * p))
        if best is None or score < best[0]:
            best = (score, (p, a))
    return best[1]


def ray_system_from_vectors(vectors_xyz, kind: str = "custom") -> RaySystem:
    """RaySystem from explicit direction vectors (normalized, then triangulated)."""
    v = np.asarray(vectors_xyz, dtype=np.float64).reshape(-1, 3)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return _finish(kind, v, Anisotropy.isotropic(), "auto")


def median_extents(labels: LabelVolume) -> tuple[float, float, float]:
    """Per-axis median of instance bounding-box extents, in voxels, (X, Y, Z)."""
    ids, dense = np.unique(labels.data, return_inverse=True)
    dense = dense.reshape(labels.data.shape)
    if ids[0] == 0:
        n_obj = len(ids) - 1
    else:  # no background voxels
        dense = dense + 1
        n_obj = len(ids)
    if n_obj < 1:
        raise ValueError("label volume contains no instances")
    extents = []
    for sl in ndimage.find_objects(dense):
        if sl is not None:
            extents.append([s.stop - s.start for s in sl])  # (ez, ey, ex)
    med_z, med_y, med_x = np.median(np.asarray(extents, dtype=np.float64), axis=0)
    return (float(med_x), float(med_y), float(med_z))


def estimate_anisotropy(labels: LabelVolume) -> Anisotropy:
    """Anisotropy factor from the median instance bounding-box extents.

    An axis along which objects are squeezed gets a proportionally larger
    factor: s_axis = max(median extents) / median extent of that axis, so the
    largest-extent axis is normalized to 1. Feeding this into the ray
    generators concentrates ray directions toward the squeezed axes' plane,
    which is what makes squeezed shapes reconstructable. Invariant to instance
    relabeling and translation.
    """
    med_x, med_y, med_z = median_extents(labels)
    top = max(med_x, med_y, med_z)
    return Anisotropy(top / med_x, top / med_y, top / med_z)
