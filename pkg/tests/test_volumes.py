import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starvox.volumes import (
    DTYPES,
    DistVolume,
    LabelVolume,
    ScalarVolume,
    VolumeMeta,
    dist_volume,
    label_volume,
    read_volume,
    scalar_volume,
    write_volume,
)


def test_single_voxel_round_trip(tmp_path):
    path = tmp_path / "vol"
    path.mkdir()
    (path / "meta.json").write_text(
        json.dumps({"shape": [1, 1, 1], "channels": 0, "dtype": "u16", "axes": "ZYX"})
    )
    (path / "data.raw").write_bytes(bytes([0x05, 0x00]))
    vol = read_volume(path)
    assert isinstance(vol, LabelVolume)
    assert vol.data[0, 0, 0] == 5


def test_size_mismatch_message(tmp_path):
    path = tmp_path / "vol"
    path.mkdir()
    (path / "meta.json").write_text(
        json.dumps({"shape": [2, 3, 4], "channels": 0, "dtype": "u8", "axes": "ZYX"})
    )
    (path / "data.raw").write_bytes(bytes(23))
    with pytest.raises(ValueError, match=r"size mismatch \(expected 24"):
        read_volume(path)


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_volume(tmp_path / "nope")


def test_unknown_dtype_rejected():
    with pytest.raises(ValueError, match="dtype"):
        VolumeMeta((2, 2, 2), 0, "f64")


def test_empty_shape_rejected():
    with pytest.raises(ValueError, match="shape"):
        VolumeMeta((0, 4, 4), 0, "u8")


def test_channel_volume_byte_count(tmp_path):
    data = np.zeros((8, 8, 8, 96), np.float32)
    write_volume(dist_volume(data), tmp_path / "d")
    raw = (tmp_path / "d" / "data.raw").read_bytes()
    assert len(raw) == 8 * 8 * 8 * 96 * 4


def test_round_trip_random_volumes(tmp_path):
    rng = np.random.Generator(np.random.Philox(11))
    for i in range(100):
        shape = tuple(int(rng.integers(1, 7)) for _ in range(3))
        kind = i % 3
        if kind == 0:
            data = rng.integers(0, 1000, size=shape).astype(np.uint32)
            vol = label_volume(data)
        elif kind == 1:
            vol = scalar_volume(rng.random(shape, dtype=np.float32))
        else:
            n = int(rng.integers(1, 5))
            vol = dist_volume(rng.random(shape + (n,), dtype=np.float32))
        write_volume(vol, tmp_path / f"v{i}")
        back = read_volume(tmp_path / f"v{i}")
        assert type(back) is type(vol)
        assert back.meta == vol.meta
        assert np.array_equal(back.data, vol.data)


@settings(max_examples=40, deadline=None)
@given(
    dtype=st.sampled_from(sorted(DTYPES)),
    shape=st.tuples(*[st.integers(1, 5)] * 3),
    channels=st.integers(0, 4),
)
def test_declared_byte_length_property(dtype, shape, channels):
    axes = "ZYXC" if channels else "ZYX"
    meta = VolumeMeta(shape, channels, dtype, axes)
    assert meta.nbytes == np.prod(shape) * max(channels, 1) * DTYPES[dtype].itemsize


def test_voxel_size_round_trip(tmp_path):
    vol = scalar_volume(np.zeros((2, 3, 4), np.float32), voxel_size=(2.0, 0.5, 0.5))
    write_volume(vol, tmp_path / "v")
    back = read_volume(tmp_path / "v")
    assert back.meta.voxel_size == (2.0, 0.5, 0.5)


def test_label_volume_rejects_float_meta():
    with pytest.raises(ValueError):
        LabelVolume(VolumeMeta((1, 1, 1), 0, "f32"), np.zeros((1, 1, 1), np.float32))


def test_type_dispatch(tmp_path):
    write_volume(scalar_volume(np.zeros((2, 2, 2), np.float32)), tmp_path / "s")
    write_volume(dist_volume(np.zeros((2, 2, 2, 3), np.float32)), tmp_path / "d")
    assert isinstance(read_volume(tmp_path / "s"), ScalarVolume)
    assert isinstance(read_volume(tmp_path / "d"), DistVolume)
