"""Peak extraction and 3D box assembly from prediction maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D, alpha_to_yaw, backproject, wrap_angle
from .kitti_io import CameraIntrinsics
from .targets import EncoderConfig, PredictionMaps, decode_angle_logits, net_to_depth

MIN_BOX_PX = 0.02

# (dy, dx) of the 8 neighbours; the first four precede the pixel in (y, x) order.
_PRECEDING = ((-1, -1), (-1, 0), (-1, 1), (0, -1))
_FOLLOWING = ((0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class DecoderConfig:
    threshold: float = 0.2
    top_k: int = 30
    use_keypoint_residual: bool = False

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")


@dataclass(frozen=True)
class Peak:
    class_id: int
    x: int
    y: int
    score: float


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box3d: Box3D
    bbox2d: tuple[float, float, float, float]
    alpha: float
    projected_center: tuple[float, float]
    anchor: tuple[int, int]
    depth_sigma: float = float("nan")


@dataclass
class DropReport:
    non_positive_depth: int = 0
    invalid_dims: int = 0

    @property
    def total(self) -> int:
        return self.non_positive_depth + self.invalid_dims


def _shifted(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[y, x] = a[y + dy, x + dx]``, -inf outside the map."""
    h, w = a.shape
    out = np.full_like(a, -np.inf, dtype=np.float64)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = a[max(0, dy):min(h, h + dy), max(0, dx):min(w, w + dx)]
    return out


def peak_mask(channel: np.ndarray, threshold: float) -> np.ndarray:
    """Pixels above ``threshold`` that are >= their 8 neighbours.

    On plateaus only the pixel with no equal neighbour earlier in (y, x)
    order survives.
    """
    v = np.asarray(channel, dtype=np.float64)
    keep = v > threshold
    for dy, dx in _PRECEDING:
        keep &= v > _shifted(v, dy, dx)
    for dy, dx in _FOLLOWING:
        keep &= v >= _shifted(v, dy, dx)
    return keep


def extract_peaks(heatmap: np.ndarray, cfg: DecoderConfig = DecoderConfig()) -> list[Peak]:
    peaks = []
    for c in range(heatmap.shape[0]):
        ys, xs = np.nonzero(peak_mask(heatmap[c], cfg.threshold))
        peaks.extend(Peak(c, int(x), int(y), float(heatmap[c, y, x])) for y, x in zip(ys, xs))
    peaks.sort(key=lambda p: (-p.score, p.class_id, p.y, p.x))
    return peaks[: cfg.top_k]


def assemble_detections(peaks, maps: PredictionMaps, calib: CameraIntrinsics,
                        cfg: DecoderConfig = DecoderConfig(),
                        encoder_cfg: EncoderConfig = EncoderConfig()) -> tuple[list[Detection], DropReport]:
    s = encoder_cfg.stride
    report = DropReport()
    dets = []
    for pk in peaks:
        x, y = pk.x, pk.y
        xc, yc = s * (np.array([x, y], dtype=np.float64) + maps.center_offset[:, y, x])
        z = float(net_to_depth(maps.depth[0, y, x], encoder_cfg.depth_eps))
        if not z > 0:
            report.non_positive_depth += 1
            continue
        dims = tuple(float(v) for v in maps.dims3d[:, y, x])
        if min(dims) <= 0:
            report.invalid_dims += 1
            continue
        gx, gy, gz = backproject(calib, xc, yc, z)
        alpha = decode_angle_logits(maps.angle[:, y, x])
        yaw = float(alpha_to_yaw(alpha, gx, gz))
        box = Box3D((gx, gy + dims[0] / 2.0, gz), dims, yaw)

        if cfg.use_keypoint_residual and maps.residual_b is not None:
            cx, cy = s * (np.array([x, y]) + maps.residual_b[:, y, x])
        else:
            cx, cy = s * (x + 0.5), s * (y + 0.5)
        bw = max(s * float(maps.size2d[0, y, x]), MIN_BOX_PX)
        bh = max(s * float(maps.size2d[1, y, x]), MIN_BOX_PX)
        bbox = (float(cx - bw / 2), float(cy - bh / 2), float(cx + bw / 2), float(cy + bh / 2))
        sigma = float(np.exp(maps.depth[1, y, x])) if maps.depth.shape[0] > 1 else float("nan")
        dets.append(Detection(pk.class_id, pk.score, box, bbox, float(wrap_angle(alpha)),
                              (float(xc), float(yc)), (x, y), sigma))
    dets.sort(key=lambda d: (-d.score, d.class_id, d.anchor[1], d.anchor[0]))
    return dets, report


def decode_maps(maps: PredictionMaps, calib: CameraIntrinsics,
                cfg: DecoderConfig = DecoderConfig(),
                encoder_cfg: EncoderConfig = EncoderConfig()) -> tuple[list[Detection], DropReport]:
    return assemble_detections(extract_peaks(maps.center_heatmap, cfg), maps, calib, cfg, encoder_cfg)


def keypoint_reconstruction(maps: PredictionMaps, det: Detection, stride: int) -> np.ndarray:
    """(8, 2) projected corners implied by the corner-offset head at a detection's anchor."""
    if maps.corner_offsets is None:
        raise ValueError("prediction maps carry no corner offsets")
    x, y = det.anchor
    off = maps.corner_offsets[:, y, x].reshape(8, 2)
    return stride * (np.array([x, y], dtype=np.float64) + off)
