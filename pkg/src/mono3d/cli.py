"""Command-line entry point: synth / encode / decode / eval / gradcheck / plot.

Exit codes: 0 success, 1 validation failure, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, container
from .decode import DecoderConfig, decode_maps, keypoint_reconstruction
from .evaluation import EvalConfig, evaluate, scored_boxes
from .geometry import Box3D, DegenerateProjectionError, box_corners_3d, project_points
from .gradcheck import run_gradcheck
from .kitti_io import (
    CLASS_NAMES, CameraIntrinsics, FrameRecord, atomic_write, format_calib, format_label_line,
    frame_file, list_frame_ids, read_calib, read_labels, write_result_line,
)
from .synth import SceneSpec, random_scene
from .targets import EncoderConfig, PredictionMaps, TargetMaps, encode_frame

GRADCHECK_TOL = 1e-5
SEED_ENV = "MONOCON_SEED"


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _sub(root: Path, name: str) -> Path:
    """``root/name`` when it exists, otherwise ``root`` itself."""
    return root / name if (root / name).is_dir() else root


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_manifest(directory: Path, **extra):
    info = {"tool": "mono3d", "version": __version__, **extra}
    atomic_write(directory / "manifest.json", json.dumps(info, sort_keys=True, indent=2) + "\n")


def cmd_synth(args) -> int:
    seed = int(os.environ.get(SEED_ENV, args.seed))
    out = Path(args.out)
    for i in range(args.frames):
        spec = SceneSpec(seed=seed, n_objects=args.n, image_size=tuple(args.image_size), frame_index=i)
        fid = f"{i:06d}"
        frame = random_scene(spec, fid)
        atomic_write(frame_file(out / "label_2", fid), "".join(format_label_line(l) + "\n" for l in frame.labels))
        atomic_write(frame_file(out / "calib", fid), format_calib(frame.calib))
    _write_manifest(out, seed=seed, frames=args.frames, objects_per_frame=args.n)
    return 0


def _encoder_cfg(args) -> EncoderConfig:
    return EncoderConfig(
        stride=args.stride, num_bins=args.num_bins, depth_eps=args.depth_eps,
        class_agnostic_aux=not args.class_specific_aux, gaussian_overlap=args.gaussian_overlap,
        max_objects=args.max_objects,
    )


def cmd_encode(args) -> int:
    root = Path(args.dir)
    label_dir, calib_dir = _sub(root, "label_2"), root / "calib"
    out = Path(args.out) if args.out else root / "maps"
    cfg = _encoder_cfg(args)
    ids = list_frame_ids(label_dir)
    if not ids:
        raise FileNotFoundError(f"no label files in {label_dir}")

    def one(fid):
        frame = FrameRecord(fid, tuple(args.image_size), read_labels(frame_file(label_dir, fid)),
                            read_calib(frame_file(calib_dir, fid)))
        maps = encode_frame(frame, cfg)
        meta = {
            "kind": "targets", "frame_id": fid, "image_size": list(frame.image_size),
            "encoder": asdict(cfg), "calib": frame.calib.p.ravel().tolist(),
            "collisions": maps.collisions, "skipped_objects": maps.skipped_objects,
        }
        atomic_write(out / f"{fid}.bin", container.dumps(maps.arrays(), meta))
        return maps.collisions

    collisions = _pmap(one, ids, args.jobs)
    _write_manifest(out, frames=len(ids))
    if args.json:
        print(json.dumps({"frames": len(ids), "collisions": int(sum(collisions))}, sort_keys=True))
    return 0


def load_prediction(arrays: dict, meta: dict) -> tuple[PredictionMaps, EncoderConfig]:
    enc = EncoderConfig(**meta["encoder"])
    f64 = {k: v.astype(np.float64) if v.dtype.kind == "f" else v for k, v in arrays.items()}
    if meta.get("kind") == "targets":
        t = TargetMaps(**{k: (v.astype(bool) if k.startswith("mask_") else v) for k, v in f64.items()})
        return t.to_prediction(enc.num_bins), enc
    return PredictionMaps(**f64), enc


def cmd_decode(args) -> int:
    root = Path(args.dir)
    maps_dir = Path(args.maps) if args.maps else root / "maps"
    calib_dir = Path(args.calib) if args.calib else root / "calib"
    out = Path(args.out) if args.out else root / "results"
    dcfg = DecoderConfig(args.threshold, args.top_k, args.use_keypoint_residual)
    files = sorted(p for p in maps_dir.glob("*.bin"))
    if not files:
        raise FileNotFoundError(f"no map containers in {maps_dir}")

    def one(path):
        arrays, meta = container.loads(path.read_bytes())
        pred, enc = load_prediction(arrays, meta)
        fid = meta.get("frame_id", path.stem)
        cpath = frame_file(calib_dir, fid)
        calib = read_calib(cpath) if cpath.exists() else CameraIntrinsics(np.array(meta["calib"]).reshape(3, 4))
        dets, drops = decode_maps(pred, calib, dcfg, enc)
        atomic_write(frame_file(out, fid), "".join(write_result_line(d) + "\n" for d in dets))
        debug = None
        if args.debug_keypoints and pred.corner_offsets is not None:
            debug = [
                {"class": CLASS_NAMES[d.class_id], "anchor": list(d.anchor), "score": d.score,
                 "corners_px": keypoint_reconstruction(pred, d, enc.stride).round(4).tolist()}
                for d in dets
            ]
        return fid, len(dets), drops.total, debug

    results = _pmap(one, files, args.jobs)
    _write_manifest(out, frames=len(results))
    if args.debug_keypoints:
        dump = {fid: dbg for fid, _, _, dbg in results}
        atomic_write(Path(args.debug_keypoints), json.dumps(dump, sort_keys=True, indent=1) + "\n")
    if args.json:
        print(json.dumps({"frames": len(results), "detections": sum(r[1] for r in results),
                          "dropped": sum(r[2] for r in results)}, sort_keys=True))
    return 0


def _class_ids(text: str) -> tuple[int, ...]:
    lookup = {n.lower(): i for i, n in enumerate(CLASS_NAMES)}
    try:
        return tuple(lookup[c.strip().lower()] for c in text.split(",") if c.strip())
    except KeyError as exc:
        raise ValidationError(f"unknown class {exc.args[0]!r}") from None


def cmd_eval(args) -> int:
    gt_dir = _sub(Path(args.gt), "label_2")
    det_dir = Path(args.det)
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground-truth directory {gt_dir} not found")
    if not det_dir.is_dir():
        raise FileNotFoundError(f"detection directory {det_dir} not found")
    ids = list_frame_ids(gt_dir)
    gts = {fid: read_labels(frame_file(gt_dir, fid)) for fid in ids}
    dets = {}
    for fid in ids:
        p = frame_file(det_dir, fid)
        dets[fid] = scored_boxes(read_labels(p)) if p.exists() else []
    report = evaluate(dets, gts, _class_ids(args.classes), EvalConfig())
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    if args.table:
        atomic_write(Path(args.table), report.table())
    return 0


def cmd_gradcheck(args) -> int:
    errs = run_gradcheck(args.instances, args.seed)
    if args.json:
        print(json.dumps(errs, sort_keys=True))
    else:
        for name, e in errs.items():
            print(f"{name:<16} {e:.3e} {'ok' if e < GRADCHECK_TOL else 'FAIL'}")
    return 0 if all(e < GRADCHECK_TOL for e in errs.values()) else 1


_EDGES = [(0, 1), (1, 3), (3, 2), (2, 0), (4, 5), (5, 7), (7, 6), (6, 4), (0, 4), (1, 5), (2, 6), (3, 7)]


def _svg_box(calib, label, color) -> str:
    try:
        px, depth = project_points(calib, box_corners_3d(Box3D.from_label(label)))
    except (DegenerateProjectionError, ValueError):
        return ""
    if np.any(depth <= 0):
        return ""
    return "".join(
        f'<line x1="{px[a, 0]:.2f}" y1="{px[a, 1]:.2f}" x2="{px[b, 0]:.2f}" y2="{px[b, 1]:.2f}" '
        f'stroke="{color}" stroke-width="1"/>'
        for a, b in _EDGES
    )


def cmd_plot(args) -> int:
    root = Path(args.dir)
    fid = args.frame
    calib = read_calib(frame_file(root / "calib", fid))
    H, W = args.image_size
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
             f'<rect width="{W}" height="{H}" fill="white" stroke="black"/>']
    for l in read_labels(frame_file(_sub(root, "label_2"), fid)):
        if l.class_id >= 0 and l.location[2] > 0:
            parts.append(_svg_box(calib, l, "green"))
    res = frame_file(Path(args.det) if args.det else root / "results", fid)
    if res.exists():
        for l in read_labels(res):
            if l.class_id >= 0 and l.location[2] > 0:
                parts.append(_svg_box(calib, l, "red"))
    parts.append("</svg>\n")
    out = Path(args.out) if args.out else root / "plots" / f"{fid}.svg"
    atomic_write(out, "\n".join(p for p in parts if p))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mono3d", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, jobs=True):
        sp.add_argument("--json", action="store_true", help="machine-readable summary on stdout")
        if jobs:
            sp.add_argument("--jobs", type=_positive_int, default=1)

    sp = sub.add_parser("synth", help="write synthetic KITTI label + calib files")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n", type=int, default=8, help="objects per frame")
    sp.add_argument("--frames", type=_positive_int, default=4)
    sp.add_argument("--out", required=True)
    sp.add_argument("--image-size", type=_positive_int, nargs=2, default=(384, 1280), metavar=("H", "W"))
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("encode", help="labels + calib -> target map containers")
    sp.add_argument("dir")
    sp.add_argument("--out")
    sp.add_argument("--image-size", type=_positive_int, nargs=2, default=(384, 1280), metavar=("H", "W"))
    sp.add_argument("--stride", type=_positive_int, default=4)
    sp.add_argument("--num-bins", type=int, default=12)
    sp.add_argument("--depth-eps", type=float, default=1e-4)
    sp.add_argument("--gaussian-overlap", type=float, default=0.7)
    sp.add_argument("--max-objects", type=_positive_int, default=30)
    sp.add_argument("--class-specific-aux", action="store_true", help="one keypoint heatmap set per class")
    common(sp)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="map containers -> KITTI result files")
    sp.add_argument("dir")
    sp.add_argument("--maps")
    sp.add_argument("--calib")
    sp.add_argument("--out")
    sp.add_argument("--threshold", type=float, default=0.2)
    sp.add_argument("--top-k", type=_positive_int, default=30)
    sp.add_argument("--use-keypoint-residual", action="store_true")
    sp.add_argument("--debug-keypoints", metavar="FILE", help="dump corner reconstructions as JSON")
    common(sp)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("eval", help="AP_3D / AP_BEV at 40 recall positions")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--det", required=True)
    sp.add_argument("--classes", default="car,pedestrian,cyclist")
    sp.add_argument("--table", metavar="FILE", help="also write an aligned text table")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of loss gradients")
    sp.add_argument("--instances", type=_positive_int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("plot", help="SVG of projected GT (green) and detections (red)")
    sp.add_argument("dir")
    sp.add_argument("--frame", default="000000")
    sp.add_argument("--det")
    sp.add_argument("--out")
    sp.add_argument("--image-size", type=_positive_int, nargs=2, default=(384, 1280), metavar=("H", "W"))
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_plot)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
