"""Deterministic synthetic scenes and the encode -> decode round-trip check.

Scenes are drawn with numpy's Philox (a 64-bit counter-based generator)
seeded from ``SeedSequence([seed, frame_index])``, so a given spec yields the
same frame on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decode import DecoderConfig, decode_maps, keypoint_reconstruction
from .geometry import Box3D, project_box, wrap_angle, yaw_to_alpha
from .kitti_io import CameraIntrinsics, FrameRecord, ObjectLabel
from .targets import EncoderConfig, encode_frame

DEFAULT_DIMS = {
    0: ((1.3, 1.9), (1.5, 1.9), (3.2, 4.5)),  # car
    1: ((1.5, 1.9), (0.5, 0.8), (0.5, 1.0)),  # pedestrian
    2: ((1.5, 1.9), (0.5, 0.8), (1.5, 1.9)),  # cyclist
}
MAX_ATTEMPTS = 1000


class SceneBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_objects: int = 5
    z_range: tuple[float, float] = (1.0, 80.0)
    dims: dict = field(default_factory=lambda: dict(DEFAULT_DIMS))
    image_size: tuple[int, int] = (384, 1280)
    focal: float = 700.0
    stride: int = 4
    classes: tuple[int, ...] = (0, 1, 2)
    frame_index: int = 0

    def __post_init__(self):
        lo, hi = self.z_range
        if not 0 < lo < hi:
            raise ValueError(f"bad z_range {self.z_range}")
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        for c in self.classes:
            if any(not 0 < a <= b for a, b in self.dims[c]):
                raise ValueError(f"bad dimension range for class {c}")

    def calib(self) -> CameraIntrinsics:
        H, W = self.image_size
        return CameraIntrinsics.pinhole(self.focal, W / 2.0, H / 2.0)


def _rng(spec: SceneSpec) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, spec.frame_index])))


def _draw_object(rng, spec, calib):
    H, W = spec.image_size
    f, cx, cy = calib.fx, calib.p[0, 2], calib.p[1, 2]
    cls = int(spec.classes[rng.integers(len(spec.classes))])
    dims = tuple(float(rng.uniform(lo, hi)) for lo, hi in spec.dims[cls])
    z = float(rng.uniform(*spec.z_range))
    x = float(rng.uniform(-z * cx / f, z * (W - cx) / f))
    y_lo, y_hi = -z * cy / f + dims[0], z * (H - cy) / f
    if y_lo >= y_hi:
        return None
    y = float(rng.uniform(y_lo, y_hi))
    yaw = float(wrap_angle(rng.uniform(-math.pi, math.pi)))
    return cls, dims, (x, y, z), yaw


def random_scene(spec: SceneSpec, frame_id: str = "000000") -> FrameRecord:
    rng = _rng(spec)
    calib = spec.calib()
    H, W = spec.image_size
    s = spec.stride
    labels, anchors = [], set()
    for _ in range(spec.n_objects):
        for _attempt in range(MAX_ATTEMPTS):
            drawn = _draw_object(rng, spec, calib)
            if drawn is None:
                continue
            cls, dims, loc, yaw = drawn
            proj = project_box(calib, Box3D(loc, dims, yaw))
            if not proj.valid:
                continue
            left, top, right, bottom = proj.tight_bbox()
            if not (left >= 0 and top >= 0 and right < W and bottom < H):
                continue
            anchor = (math.floor((left + right) / 2 / s), math.floor((top + bottom) / 2 / s))
            if anchor in anchors:
                continue
            anchors.add(anchor)
            alpha = float(yaw_to_alpha(yaw, loc[0], loc[2]))
            labels.append(ObjectLabel(cls, 0.0, 0, alpha, (left, top, right, bottom), dims, loc, yaw))
            break
        else:
            raise SceneBudgetError(
                f"could not place object {len(labels)} in {MAX_ATTEMPTS} attempts; try a smaller n_objects"
            )
    return FrameRecord(frame_id, spec.image_size, tuple(labels), calib)


@dataclass
class RoundtripReport:
    n_objects: int = 0
    n_decoded: int = 0
    unrecoverable: int = 0
    collisions: int = 0
    max_center_err: float = 0.0
    max_dims_err: float = 0.0
    dims_f32_equal: bool = True
    max_alpha_err: float = 0.0
    max_keypoint_err_px: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def passed_with_collisions(self) -> bool:
        return self.passed and self.unrecoverable > 0


TOLERANCES = {"center_m": 1e-6, "alpha": 1e-9, "keypoint_px": 1e-4}


def roundtrip_check(frame: FrameRecord, encoder_cfg: EncoderConfig = EncoderConfig(),
                    decoder_cfg: DecoderConfig = DecoderConfig(), tamper=None) -> RoundtripReport:
    """Encode ``frame``, decode the perfect prediction and compare per object.

    ``tamper`` may modify the prediction maps in place before decoding.
    """
    targets = encode_frame(frame, encoder_cfg)
    pred = targets.to_prediction(encoder_cfg.num_bins)
    if tamper is not None:
        tamper(pred)
    dets, drops = decode_maps(pred, frame.calib, decoder_cfg, encoder_cfg)

    eligible = [i for i, l in enumerate(frame.labels) if 0 <= l.class_id < encoder_cfg.num_classes]
    rep = RoundtripReport(n_objects=len(eligible), n_decoded=len(dets), collisions=targets.collisions)
    H, W = frame.image_size
    s = encoder_cfg.stride
    seen = set()
    for det in dets:
        ax, ay = det.anchor
        idx = int(targets.object_index[0, ay, ax])
        if idx < 0:
            rep.failures.append(f"spurious detection at anchor {det.anchor}")
            continue
        seen.add(idx)
        label = frame.labels[idx]
        if det.class_id != label.class_id:
            rep.failures.append(f"object {idx}: class {det.class_id} != {label.class_id}")
        c_err = float(np.linalg.norm(np.subtract(det.box3d.center_bottom, label.location)))
        d_err = float(np.max(np.abs(np.subtract(det.box3d.dims, label.dims))))
        a_err = abs(float(wrap_angle(det.alpha - label.alpha)))
        f32_eq = bool(np.array_equal(np.float32(det.box3d.dims), np.float32(label.dims)))
        proj = project_box(frame.calib, Box3D.from_label(label))
        rec = keypoint_reconstruction(pred, det, s)
        inside = ((proj.corners_px[:, 0] >= 0) & (proj.corners_px[:, 0] < W)
                  & (proj.corners_px[:, 1] >= 0) & (proj.corners_px[:, 1] < H) & (proj.depths[:8] > 0))
        k_err = float(np.max(np.abs(rec - proj.corners_px)[inside])) if inside.any() else 0.0

        rep.max_center_err = max(rep.max_center_err, c_err)
        rep.max_dims_err = max(rep.max_dims_err, d_err)
        rep.dims_f32_equal &= f32_eq
        rep.max_alpha_err = max(rep.max_alpha_err, a_err)
        rep.max_keypoint_err_px = max(rep.max_keypoint_err_px, k_err)
        if c_err >= TOLERANCES["center_m"]:
            rep.failures.append(f"object {idx}: center error {c_err:.3g} m")
        if not f32_eq:
            rep.failures.append(f"object {idx}: dims differ at f32")
        if a_err >= TOLERANCES["alpha"]:
            rep.failures.append(f"object {idx}: alpha error {a_err:.3g}")
        if k_err >= TOLERANCES["keypoint_px"]:
            rep.failures.append(f"object {idx}: keypoint error {k_err:.3g} px")

    rep.unrecoverable = len(eligible) - len(seen & set(eligible))
    if rep.unrecoverable > targets.collisions + targets.skipped_objects:
        rep.failures.append(
            f"{rep.unrecoverable} objects lost but only {targets.collisions} anchor collisions"
        )
    if drops.total:
        rep.failures.append(f"{drops.total} detections dropped during decode")
    return rep
