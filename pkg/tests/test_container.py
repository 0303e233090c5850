import json

import numpy as np
import pytest

from mono3d import container
from mono3d.kitti_io import CameraIntrinsics, FrameRecord, ObjectLabel
from mono3d.targets import encode_frame


def test_roundtrip_dtypes_and_alignment():
    arrays = {
        "a": np.arange(7, dtype=np.float64).reshape(7, 1) / 3,
        "mask": np.array([[True, False, True]]),
        "idx": np.array([-1, 2, 3], dtype=np.int64),
    }
    buf = container.dumps(arrays, {"frame_id": "000001"})
    end = buf.index(b"\0")
    header = json.loads(buf[:end])
    assert header["a"]["dtype"] == "f32"
    assert header["mask"]["dtype"] == "u8"
    assert header["idx"]["dtype"] == "i32"
    base = end + 1 + (-(end + 1) % 64)
    assert base % 64 == 0
    for name in arrays:
        assert header[name]["byte_offset"] % 64 == 0
    out, meta = container.loads(buf)
    assert meta == {"frame_id": "000001"}
    np.testing.assert_array_equal(out["a"], arrays["a"].astype(np.float32))
    np.testing.assert_array_equal(out["mask"], arrays["mask"].astype(np.uint8))
    np.testing.assert_array_equal(out["idx"], arrays["idx"])


def test_little_endian_payload():
    buf = container.dumps({"x": np.array([1.0], dtype=np.float32)})
    end = buf.index(b"\0")
    base = end + 1 + (-(end + 1) % 64)
    assert buf[base:base + 4] == np.array([1.0], dtype="<f4").tobytes()


def test_deterministic_bytes():
    k = CameraIntrinsics.pinhole(700.0, 640.0, 192.0)
    lab = ObjectLabel(0, 0.0, 0, 0.1, (500.0, 150.0, 640.0, 230.0), (1.5, 1.6, 3.9), (-2.0, 1.6, 15.0), 0.0)
    t = encode_frame(FrameRecord("0", (384, 1280), (lab,), k))
    assert container.dumps(t.arrays(), {"m": 1}) == container.dumps(t.arrays(), {"m": 1})


def test_corrupt_inputs():
    with pytest.raises(container.ContainerError):
        container.loads(b'{"a": 1}')
    buf = container.dumps({"x": np.zeros(4, dtype=np.float32)})
    with pytest.raises(container.ContainerError):
        container.loads(buf[:70])
