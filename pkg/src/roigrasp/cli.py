"""Command-line entry point: ``roigrasp <command> ...``.

Exit status is 0 on success, 2 for unreadable or invalid input and 3 for
domain failures such as a grasp with no valid depth.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from roigrasp import __version__
from roigrasp.anchors import AnchorSpec, build_anchor_grid
from roigrasp.assignment import select_execution_grasp
from roigrasp.dataset import (
    TRANSFORMS,
    augment,
    fmt_num,
    load_dataset,
    parse_grasp_line,
    read_split,
    scale_scene,
    write_dataset,
)
from roigrasp.depth import DEFAULT_RADIUS, grasp_pose, read_depth, read_intrinsics
from roigrasp.errors import GraspError, MissingGrasp, NotARectangle, ParseError, ValidationError
from roigrasp.geometry import AxisAlignedBox, OrientedRect, rect_to_vertices
from roigrasp.metrics import EvalCriteria, evaluate
from roigrasp.records import format_detections, read_detections
from roigrasp.suppression import BOX_NMS_IOU, GRASP_NMS_IOU, nms_detections
from roigrasp.synth import generate_detections, generate_scenes, load_config, split_of

log = logging.getLogger("roigrasp")

EXIT_INPUT = 2
EXIT_DOMAIN = 3


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("GRASP_EVAL_JOBS", "1")))
    except ValueError:
        return 1


# ---- commands --------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    scenes = generate_scenes(cfg)
    dets, labels = generate_detections(scenes, cfg)
    out = Path(args.out_dir)
    write_dataset(out, scenes, split_of(cfg, scenes))
    _write(out / "detections.jsonl", format_detections(dets, [s.image_id for s in scenes]))
    ranked = {}
    for d, lab in zip(dets, labels):
        ranked.setdefault(d.image_id, []).append(lab)
    _write(out / "planted_labels.jsonl", "".join(
        json.dumps({"image_id": s.image_id, "tp": ranked.get(s.image_id, [])}) + "\n" for s in scenes))
    _write(out / "synth_config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    log.info("wrote %d scenes and %d detections to %s", len(scenes), len(dets), out)
    return 0


def cmd_eval(args) -> int:
    scenes = load_dataset(args.gt_dir, jobs=args.jobs)
    if args.subset:
        split = read_split(args.gt_dir)
        scenes = [s for s in scenes if split.get(s.image_id) == args.subset]
        if not scenes:
            raise ValidationError(f"no scenes in subset {args.subset!r}")
    dets = read_detections(args.det_file)
    known = {s.image_id for s in scenes}
    if args.subset:
        dets = [d for d in dets if d.image_id in known]
    if args.nms_box is not None or args.nms_grasp is not None:
        dets = nms_detections(dets,
                              args.nms_box if args.nms_box is not None else 1.0,
                              args.nms_grasp if args.nms_grasp is not None else 1.0)
    if args.short_side is not None:
        dets, scenes = _rescale(dets, scenes, args.short_side)
    criteria = EvalCriteria(args.box_iou_thresh, args.jaccard_thresh, args.angle_thresh, args.ignore_hard)
    report = evaluate(dets, scenes, criteria, score_floor=args.score_floor, ap_mode=args.ap_mode)
    out = Path(args.out_dir)
    _write(out / "report.json", report.to_json())
    _write(out / "curve.csv", report.curve.to_csv())
    if not args.no_figures:
        from roigrasp.plotting import write_figures

        write_figures(report, out)
    print(f"MR0 {100 * report.mr0:.1f}%  MR-1 {100 * report.mr_minus1:.1f}%  "
          f"LAMR {100 * report.lamr:.1f}%  mAP {100 * report.map:.1f}%")
    return 0


def _rescale(dets, scenes, short_side):
    from dataclasses import replace

    factors = {s.image_id: short_side / min(s.width, s.height) for s in scenes}
    scenes = [scale_scene(s, short_side) for s in scenes]
    out = []
    for d in dets:
        f = factors.get(d.image_id, 1.0)
        b = d.bbox
        grasps = tuple(replace(g, rect=OrientedRect(g.rect.x * f, g.rect.y * f, g.rect.w * f, g.rect.h * f,
                                                    g.rect.theta)) for g in d.grasps)
        out.append(replace(d, bbox=AxisAlignedBox(b.x_min * f, b.y_min * f, b.x_max * f, b.y_max * f),
                           grasps=grasps))
    return out, scenes


def _parse_rect_line(line: str, source: str, lineno: int):
    tokens = line.split()
    if len(tokens) != 7:
        raise ParseError(f"expected 7 fields, got {len(tokens)}", source, lineno)
    try:
        x, y, w, h, theta = map(float, tokens[:5])
        rect = OrientedRect(x, y, w, h, theta)
    except ValueError as exc:
        raise ParseError(str(exc), source, lineno) from None
    if tokens[5] not in ("0", "1") or not tokens[6].isdigit():
        raise ParseError("flag must be 0/1 and index an unsigned integer", source, lineno)
    return rect, tokens[5], tokens[6]


def cmd_convert(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise ParseError("input file not found", str(src))
    lines = []
    for lineno, line in enumerate(src.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if args.to == "rect":
            g = parse_grasp_line(line, str(src), lineno, args.rect_tol)
            fields = [fmt_num(v) for v in g.rect.as_tuple()] + ["1" if g.hard else "0", str(g.owner_index)]
        else:
            rect, flag, index = _parse_rect_line(line, str(src), lineno)
            fields = [fmt_num(c) for p in rect_to_vertices(rect) for c in p] + [flag, index]
        lines.append(" ".join(fields) + "\n")
    _write(Path(args.output), "".join(lines))
    return 0


def cmd_nms(args) -> int:
    dets = read_detections(args.det_file)
    order = list(dict.fromkeys(d.image_id for d in dets))
    kept = nms_detections(dets, args.nms_box, args.nms_grasp, args.grasp_mode)
    _write(Path(args.output), format_detections(kept, order))
    return 0


def _pose_record(job):
    i, d, depth_dir, intr, radius, select, min_score = job
    if select == "execution":
        rect = select_execution_grasp(d, min_score)
        if rect is None:
            raise MissingGrasp(f"detection {i} ({d.category} in {d.image_id}) has no grasp above {min_score}")
    else:
        top = d.top1_grasp
        if top is None:
            raise MissingGrasp(f"detection {i} ({d.category} in {d.image_id}) has no grasp")
        rect = top.rect
    depth_path = Path(depth_dir) / f"{d.image_id}.png"
    if not depth_path.is_file():
        depth_path = Path(depth_dir) / f"{d.image_id}.txt"
    depth = read_depth(depth_path, intr)
    try:
        pose = grasp_pose(rect, depth, radius)
    except GraspError as exc:
        raise type(exc)(f"detection {i} ({d.category} in {d.image_id}): {exc}") from None
    return {
        "image_id": d.image_id,
        "detection": i,
        "category": d.category,
        "pixel": list(pose.pixel),
        "point": list(pose.point),
        "normal": list(pose.normal),
    }


def cmd_grasp3d(args) -> int:
    dets = read_detections(args.det_file)
    intr = read_intrinsics(args.intrinsics)
    jobs = [(i, d, args.depth_dir, intr, args.radius, args.select, args.min_score) for i, d in enumerate(dets)]
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_pose_record, jobs))
    else:
        rows = [_pose_record(j) for j in jobs]
    _write(Path(args.output), "".join(json.dumps(r) + "\n" for r in rows))
    return 0


def cmd_augment(args) -> int:
    scenes = load_dataset(args.gt_dir, jobs=args.jobs)
    if args.transform != "none":
        scenes = [augment(s, args.transform) for s in scenes]
    if args.short_side is not None:
        scenes = [scale_scene(s, args.short_side) for s in scenes]
    write_dataset(args.out_dir, scenes, read_split(args.gt_dir) or None)
    return 0


def cmd_anchors(args) -> int:
    spec = AnchorSpec(args.grid_w, args.grid_h, args.k, args.size)
    grid = build_anchor_grid(AxisAlignedBox(*args.roi), spec)
    rows = ["index,x,y,w,h,theta\n"]
    for i, a in enumerate(grid.anchors):
        rows.append(",".join([str(i)] + [repr(v) for v in a.as_tuple()]) + "\n")
    text = "".join(rows)
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return 0


# ---- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roigrasp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset and detections")
    s.add_argument("config", help="synth config JSON")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="evaluate detections against a dataset")
    e.add_argument("gt_dir")
    e.add_argument("det_file")
    e.add_argument("-o", "--out-dir", required=True)
    e.add_argument("--jaccard-thresh", type=float, default=0.25)
    e.add_argument("--angle-thresh", type=float, default=30.0)
    e.add_argument("--box-iou-thresh", type=float, default=0.5)
    e.add_argument("--ignore-hard", action="store_true")
    e.add_argument("--score-floor", type=float, default=None)
    e.add_argument("--nms-grasp", type=float, default=None, help="apply grasp NMS before evaluating")
    e.add_argument("--nms-box", type=float, default=None, help="apply box NMS before evaluating")
    e.add_argument("--short-side", type=float, default=None, help="rescale images and detections first")
    e.add_argument("--ap-mode", choices=("all", "11point"), default="all")
    e.add_argument("--subset", default=None, help="evaluate only scenes of this split (e.g. val)")
    e.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    e.add_argument("--jobs", type=int, default=_default_jobs())
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("convert", help="convert grasp files between vertex and centre forms")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--to", choices=("rect", "quad"), required=True)
    c.add_argument("--rect-tol", type=float, default=0.02)
    c.set_defaults(func=cmd_convert)

    n = sub.add_parser("nms", help="non-maximum suppression on a detection file")
    n.add_argument("det_file")
    n.add_argument("-o", "--output", required=True)
    n.add_argument("--nms-grasp", type=float, default=GRASP_NMS_IOU)
    n.add_argument("--nms-box", type=float, default=BOX_NMS_IOU)
    n.add_argument("--grasp-mode", choices=("per_roi", "global"), default="per_roi")
    n.set_defaults(func=cmd_nms)

    g = sub.add_parser("grasp3d", help="3-D grasp point and approach vector per detection")
    g.add_argument("det_file")
    g.add_argument("depth_dir")
    g.add_argument("intrinsics")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--radius", type=int, default=DEFAULT_RADIUS)
    g.add_argument("--select", choices=("top1", "execution"), default="top1")
    g.add_argument("--min-score", type=float, default=0.5)
    g.add_argument("--jobs", type=int, default=_default_jobs())
    g.set_defaults(func=cmd_grasp3d)

    a = sub.add_parser("augment", help="flip / rotate / rescale a dataset")
    a.add_argument("gt_dir")
    a.add_argument("transform", choices=TRANSFORMS + ("none",))
    a.add_argument("out_dir")
    a.add_argument("--short-side", type=float, default=None)
    a.add_argument("--jobs", type=int, default=_default_jobs())
    a.set_defaults(func=cmd_augment)

    an = sub.add_parser("anchors", help="dump the oriented anchor grid of an RoI")
    an.add_argument("--roi", type=float, nargs=4, required=True, metavar=("X0", "Y0", "X1", "Y1"))
    an.add_argument("--grid-w", type=int, default=7)
    an.add_argument("--grid-h", type=int, default=7)
    an.add_argument("-k", type=int, default=4)
    an.add_argument("--size", type=float, default=12.0)
    an.add_argument("-o", "--output", default=None)
    an.set_defaults(func=cmd_anchors)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, NotARectangle, json.JSONDecodeError, OSError) as exc:
        print(f"roigrasp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (GraspError, ValueError) as exc:
        print(f"roigrasp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN if isinstance(exc, GraspError) else EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
