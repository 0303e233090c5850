import math

import numpy as np
import pytest

from mono3d.decode import DecoderConfig, assemble_detections, decode_maps, extract_peaks, peak_mask
from mono3d.geometry import yaw_to_alpha
from mono3d.kitti_io import CameraIntrinsics, FrameRecord, ObjectLabel
from mono3d.targets import EncoderConfig, depth_to_net, encode_frame
from oracles import brute_force_peaks

K = CameraIntrinsics.pinhole(700.0, 640.0, 192.0)


def _label(bbox, loc=(1.0, 1.5, 20.0), dims=(1.5, 1.6, 3.9), yaw=0.3, cls=0):
    return ObjectLabel(cls, 0.0, 0, float(yaw_to_alpha(yaw, loc[0], loc[2])), bbox, dims, loc, yaw)


def _frame(*labels):
    return FrameRecord("000000", (384, 1280), labels, K)


def test_single_peak():
    h = np.zeros((1, 5, 5))
    h[0, 2, 3] = 0.9
    peaks = extract_peaks(h)
    assert [(p.x, p.y, p.score) for p in peaks] == [(3, 2, 0.9)]


def test_plateau_keeps_first_pixel():
    h = np.zeros((1, 6, 6))
    h[0, 2:4, 2:4] = 0.5
    assert [(p.x, p.y) for p in extract_peaks(h)] == [(2, 2)]


def test_below_threshold_ignored():
    h = np.full((1, 3, 3), 0.2)
    assert extract_peaks(h) == []


def test_peaks_match_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h = np.round(rng.random((3, 24, 40)) * 6) / 6
        mine = sorted((c, x, y) for c in range(3) for y, x in zip(*np.nonzero(peak_mask(h[c], 0.2))))
        ref = sorted((c, x, y) for c, x, y, _ in brute_force_peaks(h, 0.2))
        assert mine == ref


def test_top_k_and_ordering():
    h = np.zeros((2, 10, 10))
    h[1, 1, 1] = 0.9
    h[0, 5, 5] = 0.9
    h[0, 8, 1] = 0.5
    h[1, 8, 8] = 0.7
    peaks = extract_peaks(h, DecoderConfig(top_k=3))
    assert [(p.class_id, p.x, p.y) for p in peaks] == [(0, 5, 5), (1, 1, 1), (1, 8, 8)]


def test_all_zero_maps_empty():
    pred = encode_frame(_frame()).to_prediction(12)
    dets, drops = decode_maps(pred, K)
    assert dets == [] and drops.total == 0


def test_perfect_single_box():
    lab = _label((500.0, 150.0, 640.0, 230.0), loc=(-2.0, 1.6, 15.0), yaw=-2.2)
    pred = encode_frame(_frame(lab)).to_prediction(12)
    (det,), drops = decode_maps(pred, K)
    assert drops.total == 0
    assert det.score == 1.0
    assert np.linalg.norm(np.subtract(det.box3d.center_bottom, lab.location)) < 1e-6
    assert det.box3d.dims == lab.dims
    assert abs(det.alpha - lab.alpha) < 1e-12
    assert abs(math.remainder(det.box3d.yaw - lab.yaw, 2 * math.pi)) < 1e-12
    # bbox center (570, 190) is exactly the center of anchor cell (142, 47)
    assert det.anchor == (142, 47)
    assert det.bbox2d == pytest.approx(lab.bbox2d, abs=1e-12)


def test_default_bbox_uses_cell_center():
    lab = _label((501.0, 151.0, 641.0, 233.0), loc=(-2.0, 1.6, 15.0))
    (det,), _ = decode_maps(encode_frame(_frame(lab)).to_prediction(12), K)
    # center (571, 192) -> anchor (142, 48) -> cell center (570, 194); size 140 x 82
    assert det.bbox2d == pytest.approx((500.0, 153.0, 640.0, 235.0), abs=1e-12)


def test_keypoint_residual_path_recovers_bbox():
    lab = _label((501.0, 151.0, 641.0, 233.0), loc=(-2.0, 1.6, 15.0))
    pred = encode_frame(_frame(lab)).to_prediction(12)
    (det,), _ = decode_maps(pred, K, DecoderConfig(use_keypoint_residual=True))
    np.testing.assert_allclose(det.bbox2d, lab.bbox2d, atol=1e-9)


def test_collision_gives_one_detection():
    a = _label((80.0, 80.0, 120.0, 120.0), loc=(1.0, 1.5, 20.0))
    b = _label((81.0, 81.0, 121.0, 121.0), loc=(1.2, 1.5, 30.0))
    t = encode_frame(_frame(a, b))
    dets, drops = decode_maps(t.to_prediction(12), K)
    assert len(dets) == 1 and drops.total == 0 and t.collisions == 1
    assert dets[0].box3d.center_bottom[2] == pytest.approx(30.0)


def test_negative_depth_dropped():
    lab = _label((500.0, 150.0, 640.0, 230.0))
    pred = encode_frame(_frame(lab)).to_prediction(12)
    pred.depth[0][pred.center_heatmap[0] == 1.0] = 50.0  # sigmoid ~ 1 -> z ~ -1e-4
    dets, drops = decode_maps(pred, K)
    assert dets == [] and drops.non_positive_depth == 1


def test_no_shared_class_anchor():
    labels = [_label((40.0 * i + 1, 80.0 + 7 * i, 40.0 * i + 30, 120.0 + 9 * i), cls=i % 3) for i in range(8)]
    dets, _ = decode_maps(encode_frame(_frame(*labels)).to_prediction(12), K)
    keys = [(d.class_id, d.anchor) for d in dets]
    assert len(keys) == len(set(keys)) == 8
    assert [d.score for d in dets] == sorted((d.score for d in dets), reverse=True)


def test_depth_sigma_reported():
    pred = encode_frame(_frame(_label((500.0, 150.0, 640.0, 230.0)))).to_prediction(12)
    (det,), _ = decode_maps(pred, K)
    assert det.depth_sigma == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(threshold=1.5)
    with pytest.raises(ValueError):
        DecoderConfig(top_k=0)
