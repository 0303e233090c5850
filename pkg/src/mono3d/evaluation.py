"""KITTI-style AP_3D / AP_BEV at 40 recall positions.

Known differences from the official devkit: DontCare regions do not suppress
false positives, there is no minimum-height filter on detections, and
neighbouring classes (Van for Car, ...) are not treated as ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .geometry import Box3D, bev_corners
from .kitti_io import CLASS_NAMES, ObjectLabel

AREA_EPS = 1e-9


class Difficulty(IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


DIFFICULTY_NAMES = ("easy", "moderate", "hard")
METRICS = ("3d", "bev")

# (min bbox height px, max occlusion, max truncation)
_DIFFICULTY_RULES = ((40.0, 0, 0.15), (25.0, 1, 0.30), (25.0, 2, 0.50))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, float, float] = (0.7, 0.5, 0.5)
    num_recall_positions: int = 40

    def __post_init__(self):
        if any(not 0 < t <= 1 for t in self.iou_thresholds):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        if self.num_recall_positions < 1:
            raise ValueError("need at least one recall position")

    @property
    def recall_positions(self) -> np.ndarray:
        n = self.num_recall_positions
        return np.arange(1, n + 1) / n


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _ccw(poly):
    return poly if polygon_area(poly) >= 0 else poly[::-1]


def clip_convex(subject, clipper) -> list:
    """Sutherland-Hodgman clip of ``subject`` by the convex polygon ``clipper``."""
    out = [tuple(p) for p in _ccw(np.asarray(subject))]
    clip = [tuple(p) for p in _ccw(np.asarray(clipper))]
    for i in range(len(clip)):
        a, b = clip[i], clip[(i + 1) % len(clip)]
        pts, out = out, []
        if not pts:
            break
        for j in range(len(pts)):
            p, q = pts[j], pts[(j + 1) % len(pts)]
            p_in = _cross(a, b, p) >= 0
            q_in = _cross(a, b, q) >= 0
            if p_in:
                out.append(p)
            if p_in != q_in:
                dp, dq = _cross(a, b, p), _cross(a, b, q)
                t = dp / (dp - dq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def bev_intersection(a: Box3D, b: Box3D) -> float:
    area = polygon_area(clip_convex(bev_corners(a), bev_corners(b)))
    return area if area > AREA_EPS else 0.0


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection(a, b)
    union = a.dims[1] * a.dims[2] + b.dims[1] * b.dims[2] - inter
    return float(min(max(inter / union, 0.0), 1.0))


def iou_3d(a: Box3D, b: Box3D) -> float:
    ya, yb = a.center_bottom[1], b.center_bottom[1]
    overlap_h = min(ya, yb) - max(ya - a.dims[0], yb - b.dims[0])
    if overlap_h <= 0:
        return 0.0
    inter = bev_intersection(a, b) * overlap_h
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))


def difficulty_of(gt: ObjectLabel, bbox_height_px: float | None = None) -> Difficulty:
    height = gt.bbox_height if bbox_height_px is None else bbox_height_px
    for level, (min_h, max_occ, max_trunc) in enumerate(_DIFFICULTY_RULES):
        if height >= min_h and gt.occlusion <= max_occ and gt.truncation <= max_trunc:
            return Difficulty(level)
    return Difficulty.IGNORED


@dataclass
class CellResult:
    ap: float | None
    num_gt: int
    tp: int
    fp: int


@dataclass
class EvalReport:
    cells: dict = field(default_factory=dict)  # (class, difficulty, metric) -> CellResult

    def ap(self, class_name: str, difficulty: str, metric: str) -> float | None:
        return self.cells[(class_name, difficulty, metric)].ap

    def to_dict(self) -> dict:
        out: dict = {}
        for (cls, diff, metric), cell in sorted(self.cells.items()):
            entry = out.setdefault(cls, {}).setdefault(diff, {})
            entry[metric] = {
                "ap": None if cell.ap is None else round(cell.ap, 4),
                "num_gt": cell.num_gt, "tp": cell.tp, "fp": cell.fp,
            }
        return out

    def table(self) -> str:
        """Aligned text: one row per class, easy/moderate/hard per metric."""
        head = f"{'class':<12}" + "".join(
            f"{m.upper() + ' ' + d[:3]:>10}" for m in ("bev", "3d") for d in DIFFICULTY_NAMES
        )
        rows = [head]
        for cls in sorted({k[0] for k in self.cells}, key=lambda c: CLASS_NAMES.index(c)):
            vals = []
            for m in ("bev", "3d"):
                for d in DIFFICULTY_NAMES:
                    ap = self.cells[(cls, d, m)].ap
                    vals.append(f"{'n/a' if ap is None else f'{ap:.2f}':>10}")
            rows.append(f"{cls:<12}" + "".join(vals))
        return "\n".join(rows) + "\n"


def _match_frame(dets, gts, class_id, difficulty, iou_fn, thr):
    """Greedy matching for one frame; returns (scores, is_tp) for non-discarded dets and #counted GT."""
    gt_boxes, counted = [], []
    for g in gts:
        if g.class_id != class_id or g.location[2] <= 0:
            continue
        gt_boxes.append(Box3D.from_label(g))
        counted.append(difficulty_of(g) <= difficulty)
    used = [False] * len(gt_boxes)
    scores, flags = [], []
    for d in sorted((d for d in dets if d.class_id == class_id), key=lambda d: -d.score):
        best = {True: (-1, -1.0), False: (-1, -1.0)}
        for j, gb in enumerate(gt_boxes):
            if used[j]:
                continue
            iou = iou_fn(d.box3d, gb)
            if iou >= thr and iou > best[counted[j]][1]:
                best[counted[j]] = (j, iou)
        best_c, best_i = best[True][0], best[False][0]
        if best_c >= 0:
            used[best_c] = True
            scores.append(d.score)
            flags.append(True)
        elif best_i >= 0:
            used[best_i] = True
        else:
            scores.append(d.score)
            flags.append(False)
    return scores, flags, sum(counted)


def interpolated_ap(scores, flags, num_gt: int, recall_positions) -> float:
    """Mean of the max precision at recall >= r over the sampled positions, x100."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.cumsum(np.asarray(flags, dtype=np.float64)[order]) if len(flags) else np.zeros(0)
    ranks = np.arange(1, len(tp) + 1)
    precision = tp / ranks if len(tp) else np.zeros(0)
    recall = tp / num_gt if len(tp) else np.zeros(0)
    interp = []
    for r in recall_positions:
        sel = precision[recall >= r - 1e-12]
        interp.append(sel.max() if sel.size else 0.0)
    return 100.0 * float(np.mean(interp))


def ap_r40(dets_per_frame: dict, gts_per_frame: dict, class_id: int, difficulty: Difficulty,
           metric: str, cfg: EvalConfig = EvalConfig(), iou_threshold: float | None = None) -> CellResult:
    """AP for one (class, difficulty, metric) cell; ``ap`` is None when no GT counts."""
    iou_fn = iou_3d if metric == "3d" else iou_bev
    thr = cfg.iou_thresholds[class_id] if iou_threshold is None else iou_threshold
    all_scores, all_flags, num_gt = [], [], 0
    for fid in sorted(gts_per_frame):
        scores, flags, n = _match_frame(dets_per_frame.get(fid, []), gts_per_frame[fid],
                                        class_id, difficulty, iou_fn, thr)
        all_scores += scores
        all_flags += flags
        num_gt += n
    tp = int(sum(all_flags))
    fp = len(all_flags) - tp
    if num_gt == 0:
        return CellResult(None, 0, tp, fp)
    return CellResult(interpolated_ap(all_scores, all_flags, num_gt, cfg.recall_positions), num_gt, tp, fp)


def evaluate(dets_per_frame: dict, gts_per_frame: dict, classes=(0, 1, 2),
             cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Full report. Detections are anything with ``class_id``, ``score`` and ``box3d``."""
    report = EvalReport()
    for c in classes:
        for level, dname in enumerate(DIFFICULTY_NAMES):
            for metric in METRICS:
                report.cells[(CLASS_NAMES[c], dname, metric)] = ap_r40(
                    dets_per_frame, gts_per_frame, c, Difficulty(level), metric, cfg)
    return report


@dataclass(frozen=True)
class ScoredBox:
    class_id: int
    score: float
    box3d: Box3D


def scored_boxes(labels) -> list[ScoredBox]:
    """Detections read back from result files (labels carrying a score)."""
    return [
        ScoredBox(l.class_id, 1.0 if l.score is None else l.score, Box3D.from_label(l))
        for l in labels
        if l.class_id >= 0 and l.location[2] > 0
    ]
