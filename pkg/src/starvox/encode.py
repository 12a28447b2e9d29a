"""Ground-truth encoding and its inverse.

From an instance label volume we derive the two prediction targets: the
object probability p (per-instance normalized Euclidean distance to the
nearest voxel *not* belonging to that instance, so touching instances get
low p at their shared boundary) and the n radial distances d_k (unit-step
ray marching with nearest-neighbor label lookup). ``reconstruct_labels``
closes the loop: it re-renders each instance from its best-p voxel and
reports the mean IoU against the ground truth, which is the ray-fidelity
measurement used to compare ray counts, ray kinds, and anisotropy factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from . import polyhedron as poly
from .polyhedron import StarPolyhedron
from .rays import RaySystem
from .volumes import DistVolume, LabelVolume, ScalarVolume, dist_volume, label_volume, scalar_volume


@dataclass(frozen=True)
class GridSpec:
    """Integer subsampling factors of the prediction grid, (gz, gy, gx)."""

    gz: int = 1
    gy: int = 1
    gx: int = 1

    def __post_init__(self):
        if min(self.gz, self.gy, self.gx) < 1:
            raise ValueError(f"grid factors must be >= 1, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.gz, self.gy, self.gx)

    @property
    def is_identity(self) -> bool:
        return self.as_tuple() == (1, 1, 1)


def _dense_labels(labels: LabelVolume) -> tuple[np.ndarray, np.ndarray]:
    """Relabel to 1..K (find_objects-friendly); returns (dense, original ids)."""
    ids, dense = np.unique(labels.data, return_inverse=True)
    dense = dense.reshape(labels.data.shape).astype(np.int32)
    if ids[0] == 0:
        ids = ids[1:]
    else:
        dense += 1
    return dense, ids


def object_probability(labels: LabelVolume) -> ScalarVolume:
    """Per-voxel object probability: exact EDT to the nearest non-instance
    voxel, normalized by the instance's maximum, so every instance attains
    p = 1 somewhere and p = 0 exactly on background."""
    dense, ids = _dense_labels(labels)
    out = np.zeros(labels.shape, dtype=np.float32)
    objects = ndimage.find_objects(dense)
    for k, sl in enumerate(objects):
        if sl is None:
            continue
        # pad by 1 within the volume so neighboring instances/background count
        padded = tuple(
            slice(max(s.start - 1, 0), min(s.stop + 1, dim))
            for s, dim in zip(sl, labels.shape)
        )
        mask = dense[padded] == (k + 1)
        edt = ndimage.distance_transform_edt(mask)
        top = edt.max()
        if top > 0:
            view = out[padded]
            view[mask] = (edt[mask] / top).astype(np.float32)
    return scalar_volume(out, labels.meta.voxel_size)


def radial_distances(labels: LabelVolume, rays: RaySystem) -> DistVolume:
    """Radial distances d_k for every foreground voxel: unit steps along ray
    k (nearest-neighbor lookup) until the label changes or the volume is
    exited; >= 1 on foreground, 0 on background."""
    dense, _ = _dense_labels(labels)
    out = np.zeros(labels.shape + (rays.n,), dtype=np.float32)
    _kernels.march_all(dense, rays.rays_zyx, out)
    return dist_volume(out, labels.meta.voxel_size)


def subsample(field: ScalarVolume | DistVolume, grid: GridSpec):
    """Every g-th voxel per axis starting at offset 0. Grid coordinates map
    back to full resolution by multiplication with the factors."""
    data = field.data[:: grid.gz, :: grid.gy, :: grid.gx]
    vs = field.meta.voxel_size
    if vs is not None:
        vs = (vs[0] * grid.gz, vs[1] * grid.gy, vs[2] * grid.gx)
    if isinstance(field, DistVolume):
        return dist_volume(data, vs)
    return scalar_volume(data, vs)


def instance_polyhedra(labels: LabelVolume, rays: RaySystem, prob: ScalarVolume | None = None):
    """One polyhedron per instance, centered at its maximum-p voxel (ties
    broken toward the lexicographically smallest (z,y,x))."""
    if prob is None:
        prob = object_probability(labels)
    dense, ids = _dense_labels(labels)
    result = []
    for k, sl in enumerate(ndimage.find_objects(dense)):
        if sl is None:
            continue
        mask = dense[sl] == (k + 1)
        pcrop = np.where(mask, prob.data[sl], -1.0)
        flat = int(np.argmax(pcrop))  # first max in C-order = lex smallest
        center = np.array(np.unravel_index(flat, pcrop.shape), dtype=np.int64)
        center += [s.start for s in sl]
        dists = np.empty(rays.n, dtype=np.float64)
        _kernels.march_single(dense, int(center[0]), int(center[1]), int(center[2]), rays.rays_zyx, dists)
        result.append(
            (int(ids[k]), StarPolyhedron(center.astype(np.float64), dists, 1.0, rays))
        )
    return result


def reconstruct_labels(labels: LabelVolume, rays: RaySystem) -> tuple[LabelVolume, float]:
    """Re-render every ground-truth instance from its encoded polyhedron and
    return the rendered volume plus the mean per-instance IoU against the
    ground-truth masks (the larger, the more faithful the ray system)."""
    pairs = instance_polyhedra(labels, rays)
    if not pairs:
        raise ValueError("label volume contains no instances")
    shape = labels.shape
    recon = np.zeros(shape, dtype=np.uint32)
    ious = []
    for label_id, p in pairs:
        lo, hi = p.geom.bbox
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, np.asarray(shape) - 1)
        if (lo > hi).any():
            ious.append(0.0)
            continue
        box = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))
        mask = poly.rasterize(p, (lo, hi - lo + 1))
        gt_box = labels.data[box] == label_id
        inter = int(np.count_nonzero(mask & gt_box))
        gt_total = int(np.count_nonzero(labels.data == label_id))
        union = gt_total + int(np.count_nonzero(mask)) - inter
        ious.append(inter / union if union else 0.0)
        view = recon[box]
        view[mask & (view == 0)] = label_id
    return label_volume(recon, labels.meta.voxel_size), float(np.mean(ious))
