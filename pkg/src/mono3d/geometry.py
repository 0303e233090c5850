"""Box corners, pinhole projection and observation-angle conversions.

Camera frame: x right, y down, z forward. Boxes are stored by their
bottom-face center; the geometric center sits at ``(x, y - h/2, z)``.

Corner ``i`` of a box uses the bits of ``i``:

* bit 0 -- length axis, ``+l/2`` when clear, ``-l/2`` when set
* bit 1 -- width axis, ``+w/2`` when clear, ``-w/2`` when set
* bit 2 -- top face (``y - h``) when clear, bottom face (``y``) when set

Keypoint index 8 is the geometric center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kitti_io import CameraIntrinsics, ObjectLabel

TWO_PI = 2.0 * math.pi
DEPTH_EPS = 1e-9
NUM_KEYPOINTS = 9

_BIT_SIGNS = np.array(
    [[1 - 2 * ((i >> 0) & 1), 1 - 2 * ((i >> 1) & 1), (i >> 2) & 1] for i in range(8)],
    dtype=np.float64,
)


class DegenerateProjectionError(ValueError):
    pass


def wrap_angle(theta):
    """Wrap to the half-open range [-pi, pi)."""
    w = theta - TWO_PI * np.floor((theta + math.pi) / TWO_PI)
    # rounding can land one ulp outside the range
    w = np.where(w < -math.pi, w + TWO_PI, w)
    w = np.where(w >= math.pi, w - TWO_PI, w)
    w = np.where(w < -math.pi, -math.pi, w)
    return w[()] if np.ndim(w) == 0 else w


def yaw_to_alpha(yaw, x, z):
    return wrap_angle(yaw - np.arctan2(x, z))


def alpha_to_yaw(alpha, x, z):
    return wrap_angle(alpha + np.arctan2(x, z))


@dataclass(frozen=True)
class Box3D:
    center_bottom: tuple[float, float, float]
    dims: tuple[float, float, float]  # (h, w, l)
    yaw: float

    def __post_init__(self):
        cb = tuple(float(v) for v in self.center_bottom)
        dims = tuple(float(v) for v in self.dims)
        if min(dims) <= 0:
            raise ValueError(f"box dimensions must be positive, got {dims}")
        if cb[2] <= 0:
            raise ValueError(f"box depth must be positive, got z={cb[2]}")
        object.__setattr__(self, "center_bottom", cb)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "_alpha", float(yaw_to_alpha(self.yaw, cb[0], cb[2])))

    @property
    def alpha(self) -> float:
        return self._alpha

    @property
    def center(self) -> np.ndarray:
        """Geometric center."""
        x, y, z = self.center_bottom
        return np.array([x, y - self.dims[0] / 2.0, z])

    @property
    def volume(self) -> float:
        h, w, l = self.dims
        return h * w * l

    @classmethod
    def from_label(cls, label: ObjectLabel) -> "Box3D":
        return cls(label.location, label.dims, label.yaw)


def box_corners_3d(box: Box3D) -> np.ndarray:
    """(8, 3) camera-frame corners in the bit-indexed order."""
    h, w, l = box.dims
    x, y, z = box.center_bottom
    xl = _BIT_SIGNS[:, 0] * (l / 2.0)
    zl = _BIT_SIGNS[:, 1] * (w / 2.0)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty((8, 3))
    out[:, 0] = x + c * xl + s * zl
    out[:, 1] = y - h * (1.0 - _BIT_SIGNS[:, 2])
    out[:, 2] = z - s * xl + c * zl
    return out


def bev_corners(box: Box3D) -> np.ndarray:
    """(4, 2) footprint corners in the (x, z) plane, counter-clockwise."""
    return box_corners_3d(box)[[0, 1, 3, 2]][:, [0, 2]]


def project_points(k: CameraIntrinsics, pts) -> tuple[np.ndarray, np.ndarray]:
    """Project (N, 3) camera-frame points; returns pixels (N, 2) and depths (N,).

    Points behind the camera come back with negative depth.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    hom = pts @ k.p[:, :3].T + k.p[:, 3]
    depth = hom[:, 2]
    bad = np.flatnonzero(np.abs(depth) < DEPTH_EPS)
    if bad.size:
        raise DegenerateProjectionError(f"point {int(bad[0])} projects with |depth| < {DEPTH_EPS}")
    return hom[:, :2] / depth[:, None], depth


def backproject(k: CameraIntrinsics, u: float, v: float, z: float) -> np.ndarray:
    """Camera-frame point with camera z-coordinate ``z`` that projects to (u, v)."""
    if not z > 0:
        raise ValueError(f"backprojection needs z > 0, got {z}")
    p = k.p
    a = np.array([
        [p[0, 0] - u * p[2, 0], p[0, 1] - u * p[2, 1]],
        [p[1, 0] - v * p[2, 0], p[1, 1] - v * p[2, 1]],
    ])
    rhs = np.array([
        u * (p[2, 2] * z + p[2, 3]) - p[0, 2] * z - p[0, 3],
        v * (p[2, 2] * z + p[2, 3]) - p[1, 2] * z - p[1, 3],
    ])
    x, y = np.linalg.solve(a, rhs)
    return np.array([x, y, z])


@dataclass(frozen=True)
class ProjectedBox:
    center3d_px: np.ndarray  # (2,)
    corners_px: np.ndarray  # (8, 2)
    depths: np.ndarray  # (9,) corners 0..7 then the center

    @property
    def keypoints_px(self) -> np.ndarray:
        """(9, 2): the 8 corners followed by the projected center."""
        return np.vstack([self.corners_px, self.center3d_px[None]])

    @property
    def valid(self) -> bool:
        return bool(np.all(self.depths > 0))

    def tight_bbox(self) -> tuple[float, float, float, float]:
        c = self.corners_px
        return (float(c[:, 0].min()), float(c[:, 1].min()), float(c[:, 0].max()), float(c[:, 1].max()))


def project_box(k: CameraIntrinsics, box: Box3D) -> ProjectedBox:
    pts = np.vstack([box_corners_3d(box), box.center[None]])
    px, depth = project_points(k, pts)
    return ProjectedBox(px[8].copy(), px[:8].copy(), depth)
