"""KITTI label / calib / result file I/O and the per-frame data model.

Label columns (15, results add a 16th score column)::

    type truncation occlusion alpha left top right bottom h w l x y z rotation_y [score]

``location`` is the bottom-face center of the box in the camera frame (y down).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CAR, PEDESTRIAN, CYCLIST = 0, 1, 2
DONTCARE = -1
# Other KITTI categories (Van, Truck, ...); parsed but never encoded or matched.
OTHER = -2

CLASS_NAMES = ("Car", "Pedestrian", "Cyclist")
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}
_OTHER_KITTI_TYPES = {"Van", "Truck", "Person_sitting", "Tram", "Misc"}

_FIELD_NAMES = (
    "type", "truncation", "occlusion", "alpha",
    "left", "top", "right", "bottom",
    "h", "w", "l", "x", "y", "z", "rotation_y", "score",
)


class KittiFormatError(ValueError):
    """Raised for malformed KITTI label/calib/result text."""


@dataclass(frozen=True)
class ObjectLabel:
    class_id: int
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    dims: tuple[float, float, float]
    location: tuple[float, float, float]
    yaw: float
    score: float | None = None

    @property
    def is_evaluable_class(self) -> bool:
        return self.class_id >= 0

    @property
    def class_name(self) -> str:
        if self.class_id == DONTCARE:
            return "DontCare"
        if self.class_id == OTHER:
            return "Misc"
        return CLASS_NAMES[self.class_id]

    @property
    def bbox_height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]


@dataclass(frozen=True)
class CameraIntrinsics:
    p: np.ndarray  # (3, 4) float64

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (3, 4):
            raise KittiFormatError(f"projection matrix must be 3x4, got {p.shape}")
        if not (p[0, 0] > 0 and p[1, 1] > 0):
            raise KittiFormatError("projection matrix needs positive focal lengths")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __eq__(self, other):
        if not isinstance(other, CameraIntrinsics):
            return NotImplemented
        return bool(np.array_equal(self.p, other.p))

    def __hash__(self):
        return hash(self.p.tobytes())

    @classmethod
    def pinhole(cls, f: float, cx: float, cy: float) -> "CameraIntrinsics":
        return cls(np.array([[f, 0.0, cx, 0.0], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]]))

    @property
    def fx(self) -> float:
        return float(self.p[0, 0])

    @property
    def fy(self) -> float:
        return float(self.p[1, 1])


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    image_size: tuple[int, int]  # (H, W)
    labels: tuple[ObjectLabel, ...] = field(default_factory=tuple)
    calib: CameraIntrinsics | None = None

    def __post_init__(self):
        H, W = self.image_size
        if H <= 0 or W <= 0:
            raise ValueError(f"image size must be positive, got {self.image_size}")
        object.__setattr__(self, "labels", tuple(self.labels))


def _number(tokens, idx, line):
    try:
        return float(tokens[idx])
    except ValueError:
        raise KittiFormatError(
            f"field {idx} ({_FIELD_NAMES[idx]}) is not numeric: {tokens[idx]!r} in line {line!r}"
        ) from None


def parse_label_line(line: str) -> ObjectLabel:
    tokens = line.split()
    if len(tokens) < 15:
        raise KittiFormatError(f"field count {len(tokens)} < 15 in line {line!r}")
    if len(tokens) > 16:
        raise KittiFormatError(f"field count {len(tokens)} > 16 in line {line!r}")
    name = tokens[0]
    values = [_number(tokens, i, line) for i in range(1, len(tokens))]
    trunc, occ, alpha = values[0], values[1], values[2]
    bbox = tuple(values[3:7])
    dims = tuple(values[7:10])
    loc = tuple(values[10:13])
    yaw = values[13]
    score = values[14] if len(values) == 15 else None

    if name == "DontCare":
        return ObjectLabel(DONTCARE, trunc, int(occ), alpha, bbox, dims, loc, yaw, score)
    if name in CLASS_IDS:
        class_id = CLASS_IDS[name]
    elif name in _OTHER_KITTI_TYPES:
        class_id = OTHER
    else:
        raise KittiFormatError(f"field 0 (type): unknown class {name!r}")

    if not 0.0 <= trunc <= 1.0:
        raise KittiFormatError(f"field 1 (truncation) outside [0, 1]: {trunc}")
    if occ not in (0.0, 1.0, 2.0, 3.0):
        raise KittiFormatError(f"field 2 (occlusion) not in {{0,1,2,3}}: {occ}")
    if not -math.pi - 1e-6 <= alpha <= math.pi + 1e-6:
        raise KittiFormatError(f"field 3 (alpha) outside [-pi, pi]: {alpha}")
    if not (bbox[2] > bbox[0]):
        raise KittiFormatError("field 6 (right) must exceed field 4 (left)")
    if not (bbox[3] > bbox[1]):
        raise KittiFormatError("field 7 (bottom) must exceed field 5 (top)")
    for i, d in enumerate(dims):
        if not d > 0:
            raise KittiFormatError(f"field {8 + i} ({_FIELD_NAMES[8 + i]}) must be positive: {d}")
    if not -math.pi - 1e-6 <= yaw <= math.pi + 1e-6:
        raise KittiFormatError(f"field 14 (rotation_y) outside [-pi, pi]: {yaw}")
    return ObjectLabel(class_id, trunc, int(occ), alpha, bbox, dims, loc, yaw, score)


def parse_label_text(text: str) -> list[ObjectLabel]:
    return [parse_label_line(ln) for ln in text.splitlines() if ln.strip()]


def parse_calib(text: str) -> CameraIntrinsics:
    for line in text.splitlines():
        key, sep, rest = line.partition(":")
        if sep and key.strip() == "P2":
            try:
                values = [float(v) for v in rest.split()]
            except ValueError:
                raise KittiFormatError(f"P2 contains a non-numeric value: {rest.strip()!r}") from None
            if len(values) != 12:
                raise KittiFormatError(f"P2: expected 12 values, got {len(values)}")
            return CameraIntrinsics(np.array(values).reshape(3, 4))
    raise KittiFormatError("calibration text has no 'P2:' key")


def format_calib(calib: CameraIntrinsics) -> str:
    row = " ".join(f"{v:.12e}" for v in calib.p.ravel())
    return f"P2: {row}\n"


def _label_fields(class_name, trunc, occ, alpha, bbox, dims, loc, yaw):
    nums = [trunc, alpha, *bbox, *dims, *loc, yaw]
    f = [f"{v:.2f}" for v in nums]
    return [class_name, f[0], str(int(occ)), *f[1:]]


def format_label_line(label: ObjectLabel) -> str:
    fields = _label_fields(
        label.class_name, label.truncation, label.occlusion, label.alpha,
        label.bbox2d, label.dims, label.location, label.yaw,
    )
    if label.score is not None:
        fields.append(f"{label.score:.2f}")
    return " ".join(fields)


def write_result_line(det) -> str:
    """One KITTI result row (16 columns) for a decoded detection."""
    box = det.box3d
    fields = _label_fields(
        CLASS_NAMES[det.class_id], 0.0, 0, det.alpha,
        det.bbox2d, box.dims, box.center_bottom, box.yaw,
    )
    fields.append(f"{det.score:.2f}")
    return " ".join(fields)


def frame_file(directory, frame_id: str) -> Path:
    return Path(directory) / f"{frame_id}.txt"


def list_frame_ids(directory) -> list[str]:
    d = Path(directory)
    if not d.is_dir():
        return []
    return sorted(p.stem for p in d.glob("*.txt") if p.stem.isdigit() and len(p.stem) == 6)


def read_labels(path) -> list[ObjectLabel]:
    return parse_label_text(Path(path).read_text())


def read_calib(path) -> CameraIntrinsics:
    return parse_calib(Path(path).read_text())


def atomic_write(path, data: bytes | str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)
