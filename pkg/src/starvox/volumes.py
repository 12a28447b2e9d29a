"""Dense 3D volume containers and a minimal on-disk format.

A volume on disk is a directory holding ``meta.json`` and ``data.raw``.
The header declares shape (Z, Y, X), channel count, dtype, and axis order;
the raw file is little-endian, C-order with layout [Z][Y][X][C] (X varies
faster than Y and Z; the channel index is contiguous within a voxel).

Three volume kinds are used throughout the pipeline:

* ``LabelVolume``  -- integer instance labels, 0 = background.
* ``ScalarVolume`` -- one float32 value per voxel (e.g. object probability).
* ``DistVolume``   -- n float32 channels per voxel (radial distances).

Volumes are treated as immutable after construction; share them freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DTYPES = {
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "u32": np.dtype("<u4"),
    "f32": np.dtype("<f4"),
}
_DTYPE_NAMES = {v: k for k, v in DTYPES.items()}


@dataclass
class VolumeMeta:
    """Header of an on-disk volume."""

    shape: tuple[int, int, int]  # (Z, Y, X) in voxels
    channels: int = 0  # 0 = scalar per voxel
    dtype: str = "f32"
    axes: str = "ZYX"
    voxel_size: tuple[float, float, float] | None = None  # (sz, sy, sx)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.shape) != 3 or any(s < 1 for s in self.shape):
            raise ValueError(f"shape must be 3 positive ints (Z,Y,X), got {self.shape}")
        if self.channels < 0:
            raise ValueError("channels must be >= 0")
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}, expected one of {sorted(DTYPES)}")
        expected_axes = "ZYXC" if self.channels > 0 else "ZYX"
        if self.axes != expected_axes:
            raise ValueError(f"axes must be {expected_axes!r} for channels={self.channels}")
        if self.voxel_size is not None:
            self.voxel_size = tuple(float(v) for v in self.voxel_size)
            if len(self.voxel_size) != 3 or any(v <= 0 for v in self.voxel_size):
                raise ValueError("voxel_size must be 3 positive floats (sz,sy,sx)")

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape)) * max(self.channels, 1) * DTYPES[self.dtype].itemsize

    @property
    def array_shape(self) -> tuple[int, ...]:
        return self.shape + (self.channels,) if self.channels > 0 else self.shape

    def to_dict(self) -> dict:
        d = {
            "shape": list(self.shape),
            "channels": self.channels,
            "dtype": self.dtype,
            "axes": self.axes,
        }
        if self.voxel_size is not None:
            d["voxel_size"] = list(self.voxel_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VolumeMeta":
        return cls(
            shape=tuple(d["shape"]),
            channels=int(d.get("channels", 0)),
            dtype=d["dtype"],
            axes=d.get("axes", "ZYXC" if d.get("channels", 0) > 0 else "ZYX"),
            voxel_size=tuple(d["voxel_size"]) if d.get("voxel_size") else None,
        )


class _Volume:
    """Shared behaviour of the three volume kinds."""

    def __init__(self, meta: VolumeMeta, data: np.ndarray):
        if tuple(data.shape) != meta.array_shape:
            raise ValueError(f"data shape {data.shape} does not match meta {meta.array_shape}")
        if data.dtype != DTYPES[meta.dtype]:
            data = data.astype(DTYPES[meta.dtype])
        self.meta = meta
        self.data = np.ascontiguousarray(data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.meta.shape

    def __eq__(self, other) -> bool:
        return (
            type(self) is type(other)
            and self.meta == other.meta
            and np.array_equal(self.data, other.data)
        )


class LabelVolume(_Volume):
    """Integer instance labels; 0 is background, ids need not be contiguous."""

    def __init__(self, meta: VolumeMeta, data: np.ndarray):
        if meta.dtype == "f32" or meta.channels != 0:
            raise ValueError("LabelVolume requires an integer dtype and channels=0")
        super().__init__(meta, data)

    def instance_ids(self) -> np.ndarray:
        ids = np.unique(self.data)
        return ids[ids > 0]


class ScalarVolume(_Volume):
    """One float32 value per voxel."""

    def __init__(self, meta: VolumeMeta, data: np.ndarray):
        if meta.dtype != "f32" or meta.channels != 0:
            raise ValueError("ScalarVolume requires dtype f32 and channels=0")
        super().__init__(meta, data)


class DistVolume(_Volume):
    """n float32 radial-distance channels per voxel; channel k belongs to ray k."""

    def __init__(self, meta: VolumeMeta, data: np.ndarray):
        if meta.dtype != "f32" or meta.channels < 1:
            raise ValueError("DistVolume requires dtype f32 and channels>=1")
        super().__init__(meta, data)

    @property
    def n_rays(self) -> int:
        return self.meta.channels


def label_volume(data: np.ndarray, voxel_size=None) -> LabelVolume:
    """Wrap an integer (Z,Y,X) array as a LabelVolume."""
    data = np.asarray(data)
    if data.dtype not in (np.uint8, np.uint16, np.uint32):
        if data.min() < 0 or data.max() > np.iinfo(np.uint32).max:
            raise ValueError("label data out of range for u32")
        data = data.astype(np.uint32)
    name = _DTYPE_NAMES[np.dtype(data.dtype).newbyteorder("<")]
    return LabelVolume(VolumeMeta(data.shape, 0, name, "ZYX", voxel_size), data)


def scalar_volume(data: np.ndarray, voxel_size=None) -> ScalarVolume:
    """Wrap a float (Z,Y,X) array as a ScalarVolume."""
    data = np.asarray(data, dtype=np.float32)
    return ScalarVolume(VolumeMeta(data.shape, 0, "f32", "ZYX", voxel_size), data)


def dist_volume(data: np.ndarray, voxel_size=None) -> DistVolume:
    """Wrap a float (Z,Y,X,n) array as a DistVolume."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 4:
        raise ValueError("DistVolume data must be 4D (Z,Y,X,n)")
    meta = VolumeMeta(data.shape[:3], data.shape[3], "f32", "ZYXC", voxel_size)
    return DistVolume(meta, data)


def _wrap(meta: VolumeMeta, data: np.ndarray):
    if meta.channels > 0:
        return DistVolume(meta, data)
    if meta.dtype == "f32":
        return ScalarVolume(meta, data)
    return LabelVolume(meta, data)


def read_volume(path) -> LabelVolume | ScalarVolume | DistVolume:
    """Read a volume directory (``meta.json`` + ``data.raw``).

    The volume kind is inferred from the header: integer dtype gives a
    LabelVolume, f32 with channels=0 a ScalarVolume, f32 with channels>0
    a DistVolume.
    """
    path = Path(path)
    meta_path = path / "meta.json"
    raw_path = path / "data.raw"
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing {meta_path}")
    if not raw_path.is_file():
        raise FileNotFoundError(f"missing {raw_path}")
    meta = VolumeMeta.from_dict(json.loads(meta_path.read_text()))
    raw = raw_path.read_bytes()
    if len(raw) != meta.nbytes:
        raise ValueError(f"data.raw size mismatch (expected {meta.nbytes}, got {len(raw)})")
    data = np.frombuffer(raw, dtype=DTYPES[meta.dtype]).reshape(meta.array_shape)
    return _wrap(meta, data.copy())


def write_volume(vol: _Volume, path) -> None:
    """Write a volume so that :func:`read_volume` inverts it bit-exactly."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "meta.json").write_text(json.dumps(vol.meta.to_dict(), indent=1) + "\n")
    data = np.ascontiguousarray(vol.data, dtype=DTYPES[vol.meta.dtype])
    (path / "data.raw").write_bytes(data.tobytes(order="C"))
