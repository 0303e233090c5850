"""Ground-truth map encoding on the stride-``s`` feature lattice.

All maps are ``(channels, h, w)`` arrays indexed ``[c, y, x]`` with
``h = ceil(H / s)`` and ``w = ceil(W / s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import expit, logit

from .geometry import NUM_KEYPOINTS, Box3D, project_box, wrap_angle
from .kitti_io import FrameRecord


@dataclass(frozen=True)
class EncoderConfig:
    stride: int = 4
    num_classes: int = 3
    num_bins: int = 12
    depth_eps: float = 1e-4
    class_agnostic_aux: bool = True
    min_gaussian_radius: int = 0
    gaussian_overlap: float = 0.7
    max_objects: int = 30

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.num_bins < 2 or self.num_bins % 2:
            raise ValueError(f"num_bins must be even and >= 2, got {self.num_bins}")
        if not self.depth_eps > 0:
            raise ValueError(f"depth_eps must be positive, got {self.depth_eps}")
        if self.min_gaussian_radius < 0:
            raise ValueError("min_gaussian_radius must be >= 0")
        if not 0 < self.gaussian_overlap < 1:
            raise ValueError(f"gaussian_overlap must lie in (0, 1), got {self.gaussian_overlap}")
        if self.max_objects < 1:
            raise ValueError("max_objects must be >= 1")

    def lattice_shape(self, image_size) -> tuple[int, int]:
        H, W = image_size
        return math.ceil(H / self.stride), math.ceil(W / self.stride)

    @property
    def keypoint_channels(self) -> int:
        return NUM_KEYPOINTS if self.class_agnostic_aux else NUM_KEYPOINTS * self.num_classes


@dataclass
class TargetMaps:
    center_heatmap: np.ndarray  # (c, h, w)
    keypoint_heatmap: np.ndarray  # (9, h, w) or (9c, h, w)
    center_offset: np.ndarray  # (2, h, w)
    corner_offsets: np.ndarray  # (16, h, w)
    size2d: np.ndarray  # (2, h, w): width, height in lattice units
    depth: np.ndarray  # (1, h, w), network space
    dims3d: np.ndarray  # (3, h, w): h, w, l in meters
    angle_bin: np.ndarray  # (1, h, w) int32
    angle_res: np.ndarray  # (1, h, w)
    residual_b: np.ndarray  # (2, h, w)
    residual_k: np.ndarray  # (2, h, w)
    mask_center: np.ndarray  # (1, h, w) bool
    mask_keypoint: np.ndarray  # (1, h, w) bool
    object_index: np.ndarray  # (1, h, w) int32, -1 where no anchor
    collisions: int = 0
    skipped_objects: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.center_heatmap.shape[1:]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), np.ndarray)}

    def to_prediction(self, num_bins: int) -> "PredictionMaps":
        """The prediction a perfect network would emit for these targets."""
        h, w = self.shape
        angle = np.zeros((2 * num_bins, h, w))
        ys, xs = np.nonzero(self.mask_center[0])
        bins = self.angle_bin[0, ys, xs]
        angle[bins, ys, xs] = 1.0
        angle[num_bins + bins, ys, xs] = self.angle_res[0, ys, xs]
        depth = np.concatenate([self.depth, np.zeros_like(self.depth)])
        return PredictionMaps(
            center_heatmap=self.center_heatmap.copy(),
            keypoint_heatmap=self.keypoint_heatmap.copy(),
            center_offset=self.center_offset.copy(),
            corner_offsets=self.corner_offsets.copy(),
            size2d=self.size2d.copy(),
            depth=depth,
            dims3d=self.dims3d.copy(),
            angle=angle,
            residual_b=self.residual_b.copy(),
            residual_k=self.residual_k.copy(),
        )


@dataclass
class PredictionMaps:
    """Head outputs; heatmaps already passed through a sigmoid.

    ``depth`` holds the raw depth output in channel 0 and log(sigma) in
    channel 1. ``angle`` holds ``b`` bin logits followed by ``b`` residuals.
    """

    center_heatmap: np.ndarray
    center_offset: np.ndarray
    size2d: np.ndarray
    depth: np.ndarray
    dims3d: np.ndarray
    angle: np.ndarray
    keypoint_heatmap: np.ndarray | None = None
    corner_offsets: np.ndarray | None = None
    residual_b: np.ndarray | None = None
    residual_k: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.center_heatmap.shape[1:]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


def gaussian_radius(box_h: float, box_w: float, overlap: float = 0.7) -> tuple[int, float]:
    """Integer Gaussian radius and sigma for a box of ``box_h x box_w`` lattice pixels.

    The radius is the largest corner displacement that keeps IoU >= ``overlap``
    in each of three cases: both corners shifted the same way, the box shrunk,
    and the box grown. Each case is a quadratic in the displacement.
    """
    if not (box_h > 0 and box_w > 0):
        raise ValueError("box size must be positive")
    if not 0 < overlap < 1:
        raise ValueError("overlap must lie in (0, 1)")
    h, w = box_h, box_w
    roots = []
    for a, b, c in (
        (1.0, -(h + w), w * h * (1 - overlap) / (1 + overlap)),
        (4.0, -2.0 * (h + w), (1 - overlap) * w * h),
        (4.0 * overlap, 2.0 * overlap * (h + w), (overlap - 1) * w * h),
    ):
        disc = math.sqrt(b * b - 4 * a * c)
        # smallest non-negative root of a*d^2 + b*d + c = 0
        r_lo, r_hi = (-b - disc) / (2 * a), (-b + disc) / (2 * a)
        roots.append(r_lo if r_lo >= 0 else r_hi)
    r = max(0, int(min(roots)))
    return r, (2 * r + 1) / 6.0


def splat_gaussian(heatmap: np.ndarray, center, sigma: float) -> np.ndarray:
    """In-place element-wise max of a 2D Gaussian at integer ``center=(x, y)``."""
    x0, y0 = center
    h, w = heatmap.shape
    if not (0 <= x0 < w and 0 <= y0 < h):
        raise ValueError(f"center {center} outside lattice {w}x{h}")
    gx = np.exp(-((np.arange(w) - x0) ** 2) / (2.0 * sigma * sigma))
    gy = np.exp(-((np.arange(h) - y0) ** 2) / (2.0 * sigma * sigma))
    np.maximum(heatmap, np.outer(gy, gx), out=heatmap)
    return heatmap


def bin_center(index, num_bins: int):
    width = 2.0 * math.pi / num_bins
    return -math.pi + (np.asarray(index) + 0.5) * width


def encode_angle(alpha, num_bins: int = 12):
    """Return (bin index, residual to the bin center); vectorised over ``alpha``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    width = 2.0 * math.pi / num_bins
    idx = np.clip(np.floor((alpha + math.pi) / width).astype(np.int64), 0, num_bins - 1)
    res = alpha - bin_center(idx, num_bins)
    if idx.ndim == 0:
        return int(idx), float(res)
    return idx, res


def decode_angle(bin_index, residual, num_bins: int = 12):
    out = wrap_angle(bin_center(bin_index, num_bins) + np.asarray(residual, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def decode_angle_logits(channels) -> float:
    """Alpha from a 2b vector: bin logits then per-bin residuals.

    Ties resolve to the lowest bin index.
    """
    channels = np.asarray(channels, dtype=np.float64)
    b = channels.shape[0] // 2
    i = int(np.argmax(channels[:b]))
    return decode_angle(i, channels[b + i], b)


class DepthRangeError(ValueError):
    pass


def net_to_depth(o, eps: float = 1e-4):
    return 1.0 / (expit(o) + eps) - 1.0


def depth_to_net(z, eps: float = 1e-4):
    q = 1.0 / (np.asarray(z, dtype=np.float64) + 1.0) - eps
    if np.any(~((q > 0) & (q < 1))):
        raise DepthRangeError(f"depth {z} cannot be encoded with eps={eps}")
    out = logit(q)
    return float(out) if np.ndim(out) == 0 else out


def _frac(v):
    return v - np.floor(v)


def empty_targets(cfg: EncoderConfig, image_size) -> TargetMaps:
    h, w = cfg.lattice_shape(image_size)

    def z(c, dtype=np.float64):
        return np.zeros((c, h, w), dtype=dtype)

    return TargetMaps(
        center_heatmap=z(cfg.num_classes),
        keypoint_heatmap=z(cfg.keypoint_channels),
        center_offset=z(2),
        corner_offsets=z(16),
        size2d=z(2),
        depth=z(1),
        dims3d=z(3),
        angle_bin=z(1, np.int32),
        angle_res=z(1),
        residual_b=z(2),
        residual_k=z(2),
        mask_center=z(1, bool),
        mask_keypoint=z(1, bool),
        object_index=np.full((1, h, w), -1, dtype=np.int32),
    )


def encode_frame(frame: FrameRecord, cfg: EncoderConfig = EncoderConfig()) -> TargetMaps:
    if frame.calib is None:
        raise ValueError(f"frame {frame.frame_id} has no calibration")
    t = empty_targets(cfg, frame.image_size)
    h, w = t.shape
    s = cfg.stride
    encoded = 0
    for idx, label in enumerate(frame.labels):
        if not (0 <= label.class_id < cfg.num_classes) or label.location[2] <= 0:
            continue
        if encoded >= cfg.max_objects:
            t.skipped_objects += 1
            continue
        encoded += 1
        box = Box3D.from_label(label)
        proj = project_box(frame.calib, box)

        left, top, right, bottom = label.bbox2d
        bc = np.array([(left + right) / 2.0, (top + bottom) / 2.0]) / s
        ax = min(max(int(math.floor(bc[0])), 0), w - 1)
        ay = min(max(int(math.floor(bc[1])), 0), h - 1)
        anchor = np.array([ax, ay], dtype=np.float64)

        bw, bh = (right - left) / s, (bottom - top) / s
        r, sigma = gaussian_radius(bh, bw, cfg.gaussian_overlap)
        if r < cfg.min_gaussian_radius:
            r = cfg.min_gaussian_radius
            sigma = (2 * r + 1) / 6.0
        splat_gaussian(t.center_heatmap[label.class_id], (ax, ay), sigma)

        if t.mask_center[0, ay, ax]:
            t.collisions += 1
        t.mask_center[0, ay, ax] = True
        t.object_index[0, ay, ax] = idx
        t.center_offset[:, ay, ax] = proj.center3d_px / s - anchor
        t.corner_offsets[:, ay, ax] = (proj.corners_px / s - anchor).ravel()
        t.size2d[:, ay, ax] = (bw, bh)
        t.depth[0, ay, ax] = depth_to_net(label.location[2], cfg.depth_eps)
        t.dims3d[:, ay, ax] = label.dims
        b, res = encode_angle(label.alpha, cfg.num_bins)
        t.angle_bin[0, ay, ax] = b
        t.angle_res[0, ay, ax] = res
        t.residual_b[:, ay, ax] = _frac(bc)

        kp_base = 0 if cfg.class_agnostic_aux else label.class_id * NUM_KEYPOINTS
        for k, (kp, depth) in enumerate(zip(proj.keypoints_px, proj.depths)):
            if depth <= 0:
                continue
            kl = kp / s
            kx, ky = int(math.floor(kl[0])), int(math.floor(kl[1]))
            if not (0 <= kx < w and 0 <= ky < h):
                continue
            splat_gaussian(t.keypoint_heatmap[kp_base + k], (kx, ky), sigma)
            t.residual_k[:, ky, kx] = _frac(kl)
            t.mask_keypoint[0, ky, kx] = True
    return t
