"""The ten acceptance criteria, each at its stated tolerance and time budget.

Run alone with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import itertools
import json
import math
import random
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from conftest import random_overlapping_pair, random_rect, record_criterion, sampled_iou

from roigrasp.anchors import ANCHOR_SIZES, AnchorSpec, GraspOffsets, build_anchor_grid, decode, encode
from roigrasp.assignment import GRASPABLE, IGNORE, UNGRASPABLE, AnchorTarget, anchor_targets, match_rois, roi_ground_truth
from roigrasp.cli import main
from roigrasp.dataset import (
    GraspAnnotation,
    ObjectAnnotation,
    SceneAnnotation,
    augment,
    parse_scene,
    write_scene,
)
from roigrasp.depth import DepthMap, Intrinsics, grasp_pose, surface_normal
from roigrasp.geometry import AxisAlignedBox, OrientedRect, box_iou, rotated_iou, same_rect
from roigrasp.losses import GraspHeadOutput, grasp_loss, grasp_loss_grad, total_loss
from roigrasp.metrics import (
    CurvePoint,
    EvalCurve,
    ap_with_grasp,
    evaluate,
    fppi_missrate_curve,
    label_detections,
    lamr,
    mr_at,
)
from roigrasp.records import DetectionRecord, ScoredGrasp
from roigrasp.suppression import nms_boxes, nms_grasps
from roigrasp.synth import (
    SynthConfig,
    generate_detections,
    generate_scenes,
    oracle_anchor_targets,
    oracle_match_rois,
    oracle_metrics,
    oracle_nms_keep,
)

pytestmark = pytest.mark.acceptance

GOLDEN = Path(__file__).parent / "golden"


@contextmanager
def criterion(number, title, budget=None):
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        record_criterion(number, title, False, f"{type(exc).__name__}: {str(exc).splitlines()[0][:80] if str(exc) else ''}")
        raise
    elapsed = time.perf_counter() - start
    if budget is not None and elapsed >= budget:
        record_criterion(number, title, False, f"{elapsed:.1f}s over the {budget:.0f}s budget")
        pytest.fail(f"criterion {number} took {elapsed:.1f}s, budget {budget}s")
    record_criterion(number, title, True, f"{elapsed:.2f}s")


def test_criterion_1_geometry(sobol_points):
    with criterion(1, "rotated IoU vs 2^20-point QMC estimate, axis-aligned exactness, 1/sqrt(2) case", 60):
        rng = random.Random(1)
        worst = 0.0
        for _ in range(500):
            a, b = random_overlapping_pair(rng)
            worst = max(worst, abs(rotated_iou(a, b) - sampled_iou(a, b, sobol_points)))
        assert worst <= 2e-3, worst
        for _ in range(500):
            a, b = random_rect(rng), random_rect(rng)
            a, b = (OrientedRect(r.x, r.y, r.w, r.h, 0) for r in (a, b))
            box = lambda r: AxisAlignedBox(r.x - r.w / 2, r.y - r.h / 2, r.x + r.w / 2, r.y + r.h / 2)  # noqa: E731
            assert rotated_iou(a, b) == box_iou(box(a), box(b))
        v = rotated_iou(OrientedRect(0, 0, 2, 2, 0), OrientedRect(0, 0, 2, 2, 45))
        assert abs(v - 1 / math.sqrt(2)) <= 1e-9


def test_criterion_2_codec():
    with criterion(2, "decode(encode) identity over 10^4 triples, k in {1,2,4,6}, sizes 12/24", 5):
        rng = random.Random(2)
        worst = 0.0
        for i in range(10_000):
            k = (1, 2, 4, 6)[i % 4]
            size = ANCHOR_SIZES[(i // 4) % 2]
            anchor = OrientedRect(rng.uniform(0, 600), rng.uniform(0, 600), size, size,
                                  -90 + (rng.randrange(k) + 0.5) * 180 / k)
            g = OrientedRect(anchor.x + rng.uniform(-30, 30), anchor.y + rng.uniform(-30, 30),
                             rng.uniform(2, 80), rng.uniform(2, 40), rng.uniform(-89.999, 90))
            back = decode(encode(g, anchor, k), anchor, k)
            worst = max(worst, max(abs(p - q) for p, q in zip(back.as_tuple(), g.as_tuple())))
        assert worst <= 1e-9, worst


def _scene_with_rois(rng):
    objects = []
    for i in range(rng.randint(1, 6)):
        x0, y0 = rng.uniform(0, 300), rng.uniform(0, 300)
        objects.append(ObjectAnnotation(i + 1, "c", AxisAlignedBox(x0, y0, x0 + rng.uniform(10, 120),
                                                                   y0 + rng.uniform(10, 120))))
    rois = []
    for o in objects:
        b = o.bbox
        d = [rng.gauss(0, 0.1 * b.width), rng.gauss(0, 0.1 * b.height)]
        rois.append(AxisAlignedBox(b.x_min + d[0], b.y_min + d[1], b.x_max + d[0], b.y_max + d[1]))
    return objects, rois


def test_criterion_3_assignment():
    with criterion(3, "match_rois / anchor_targets vs exhaustive references on 10^3 scenes, ownership", 30):
        rng = random.Random(3)
        for _ in range(1000):
            objects, rois = _scene_with_rois(rng)
            for m, (idx, iou) in zip(match_rois(rois, objects), oracle_match_rois(rois, objects)):
                assert m.object_index == idx and (idx is None or m.iou == iou)
            roi = rois[0]
            spec = AnchorSpec(rng.randint(1, 7), rng.randint(1, 7), rng.choice([1, 2, 4, 6]), rng.choice(ANCHOR_SIZES))
            grid = build_anchor_grid(roi, spec)
            rects = [OrientedRect(rng.uniform(roi.x_min, roi.x_max), rng.uniform(roi.y_min, roi.y_max),
                                  rng.uniform(4, 40), rng.uniform(2, 20), rng.uniform(-89.9, 90))
                     for _ in range(rng.randint(0, 6))]
            got = anchor_targets(grid, rects)
            assert {t.anchor_index: (t.label, t.grasp_index) for t in got} == oracle_anchor_targets(grid, rects)

        # ownership: every returned grasp belongs to the matched object, even
        # when other objects' grasps sit inside the RoI
        for _ in range(1000):
            objects, rois = _scene_with_rois(rng)
            grasps = []
            for o in objects:
                for _ in range(rng.randint(0, 3)):
                    target = rng.choice(objects).bbox  # drop grasps anywhere, owned by o
                    grasps.append(GraspAnnotation(OrientedRect(*target.center, 8, 4, rng.uniform(-90, 90)), False, o.index))
            scene = SceneAnnotation("x", 1000, 1000, tuple(objects), tuple(grasps))
            for m in match_rois(rois, objects):
                for g in roi_ground_truth(m, scene):
                    assert g.owner_index == m.object_index


def test_criterion_4_nms():
    with criterion(4, "NMS keep-sets equal the brute-force greedy oracle on 10^3 inputs", 10):
        rng = random.Random(4)
        for i in range(1000):
            n = rng.randint(0, 12)
            thr = rng.choice([0.0, 0.1, 0.3, 0.5, 0.7, 1.0])
            if i % 2:
                cands = [ScoredGrasp(OrientedRect(rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(5, 30),
                                                  rng.uniform(3, 15), rng.uniform(-90, 90)), rng.random())
                         for _ in range(n)]
                ov = np.array([[rotated_iou(a.rect, b.rect) for b in cands] for a in cands]).reshape(n, n)
                want = oracle_nms_keep([c.score for c in cands], ov, thr)
                assert nms_grasps(cands, thr) == [cands[j] for j in want]
            else:
                cands = []
                for _ in range(n):
                    x0, y0 = rng.uniform(0, 40), rng.uniform(0, 40)
                    cands.append((AxisAlignedBox(x0, y0, x0 + rng.uniform(5, 30), y0 + rng.uniform(5, 30)),
                                  rng.choice("ab"), rng.random()))
                ov = np.array([[box_iou(a[0], b[0]) if a[1] == b[1] else 0.0 for b in cands]
                               for a in cands]).reshape(n, n)
                want = oracle_nms_keep([c[2] for c in cands], ov, thr)
                assert nms_boxes(cands, thr) == [cands[j] for j in want]


def test_criterion_5_losses():
    with criterion(5, "loss gradients vs central differences on 100 heads, total-loss linearity"):
        rng = random.Random(5)
        h = 1e-6
        for _ in range(100):
            n = rng.randint(1, 20)
            offsets = np.array([[rng.gauss(0, 1.5) for _ in range(5)] for _ in range(n)])
            logits = np.array([[rng.gauss(0, 2), rng.gauss(0, 2)] for _ in range(n)])
            targets = []
            for i in range(n):
                label = rng.choice([GRASPABLE, UNGRASPABLE, IGNORE])
                off = GraspOffsets(*(rng.gauss(0, 1) for _ in range(5))) if label == GRASPABLE else None
                targets.append(AnchorTarget(i, label, off))
            d_off, d_log = grasp_loss_grad(GraspHeadOutput(offsets, logits), targets)
            for i, j in itertools.product(range(n), range(5)):
                e = offsets[i, j] - (targets[i].offsets.as_tuple()[j] if targets[i].offsets else 0)
                if abs(abs(e) - 1) < 1e-4:
                    continue  # kink of smooth-L1
                up, dn = offsets.copy(), offsets.copy()
                up[i, j] += h
                dn[i, j] -= h
                num = (grasp_loss(GraspHeadOutput(up, logits), targets)[0]
                       - grasp_loss(GraspHeadOutput(dn, logits), targets)[0]) / (2 * h)
                assert d_off[i, j] == pytest.approx(num, rel=1e-5, abs=1e-9)
            for i, j in itertools.product(range(n), range(2)):
                up, dn = logits.copy(), logits.copy()
                up[i, j] += h
                dn[i, j] -= h
                num = (grasp_loss(GraspHeadOutput(offsets, up), targets)[1]
                       - grasp_loss(GraspHeadOutput(offsets, dn), targets)[1]) / (2 * h)
                assert d_log[i, j] == pytest.approx(num, rel=1e-5, abs=1e-9)
        for _ in range(100):
            n = rng.randint(1, 16)
            losses = [rng.uniform(0, 4) for _ in range(n)]
            obj = rng.uniform(0, 3)
            assert total_loss(obj, losses, n) == pytest.approx(obj + sum(losses) / n, rel=1e-15)
            i = rng.randrange(n)
            bumped = losses[:]
            bumped[i] += 1.0
            assert total_loss(obj, bumped, n) - total_loss(obj, losses, n) == pytest.approx(1.0 / n, abs=1e-12)


def _four_object_case():
    g = OrientedRect(5, 5, 10, 4, 0)
    objs = tuple(ObjectAnnotation(i + 1, "cup", AxisAlignedBox(20 * i, 0, 20 * i + 10, 10)) for i in range(4))
    grasps = tuple(GraspAnnotation(g.translated(20 * i, 0), False, i + 1) for i in range(4))
    scene = SceneAnnotation("s", 100, 100, objs, grasps)

    def d(i, score):
        return DetectionRecord("s", "cup", score, objs[i].bbox, (ScoredGrasp(grasps[i].rect, 0.9),))

    miss = lambda score: DetectionRecord("s", "cup", score, AxisAlignedBox(0, 50, 10, 60),  # noqa: E731
                                         (ScoredGrasp(OrientedRect(5, 55, 10, 4, 0), 0.9),))
    return scene, [d(0, 0.9), miss(0.8), d(1, 0.7), d(2, 0.6), miss(0.5)]


def test_criterion_6_metrics():
    with criterion(6, "metrics equal the exhaustive oracle on 60 seeded configs, invariants, 5-detection AP", 120):
        configs = []
        for seed in range(60):
            configs.append(SynthConfig(
                seed=100 + seed, n_scenes=6, objects_per_scene=(1, 6),
                overlap_bias=(0.0, 0.3, 0.6, 0.9)[seed % 4],
                box_jitter=(0.0, 2.0, 6.0)[seed % 3], grasp_jitter=(0.0, 2.0, 6.0)[(seed // 3) % 3],
                angle_jitter=(0.0, 5.0, 20.0)[(seed // 9) % 3],
                fp_rate=(0.0, 0.3, 0.7, 1.0)[(seed // 2) % 4], score_levels=(256, 8)[seed % 2],
            ))
        for cfg in configs:
            scenes = generate_scenes(cfg)
            dets, _ = generate_detections(scenes, cfg)
            assert max(sum(d.image_id == s.image_id for d in dets) for s in scenes) <= 10
            got, want = evaluate(dets, scenes), oracle_metrics(dets, scenes)
            assert got.curve == want.curve
            assert (got.mr0, got.mr_minus1, got.lamr, got.map) == (want.mr0, want.mr_minus1, want.lamr, want.map)
            assert got.per_class_ap == want.per_class_ap
            pts = list(got.curve)
            n_gt = got.n_gt
            assert all(a.threshold < b.threshold and a.fppi >= b.fppi for a, b in zip(pts, pts[1:]))
            assert all(0.0 <= p.miss_rate <= 1.0 and round((1 - p.miss_rate) * n_gt) <= n_gt for p in pts)
            samples = [max(mr_at(got.curve, r), 1e-10) for r in np.logspace(-2, 0, 9)]
            assert min(samples) * (1 - 1e-12) <= got.lamr <= max(samples) * (1 + 1e-12)
            assert all(0.0 <= v <= 1.0 for v in got.per_class_ap.values())
            assert got.map == pytest.approx(sum(got.per_class_ap.values()) / len(got.per_class_ap), abs=1e-15)
        scene, dets = _four_object_case()
        assert label_detections(dets, [scene]) == [True, False, True, True, False]
        assert ap_with_grasp(dets, [scene], "cup") == 0.25 * 1.0 + 0.5 * 0.75


def test_criterion_7_lamr():
    with criterion(7, "constant-miss-rate LAMR within 1e-12, MR0 at the zero-FP point"):
        rng = random.Random(7)
        for _ in range(200):
            m = rng.uniform(0.01, 1.0)
            pts = sorted((CurvePoint(rng.random(), rng.uniform(0, 3), m) for _ in range(rng.randint(1, 8))),
                         key=lambda p: p.threshold)
            curve = EvalCurve(tuple(pts) + (CurvePoint(math.inf, 0.0, 1.0),))
            if min(p.fppi for p in pts) > 0.01:
                continue
            assert abs(lamr(curve) - m) <= 1e-12
        for seed in range(20):
            cfg = SynthConfig(seed=700 + seed, n_scenes=10, fp_rate=0.5)
            scenes = generate_scenes(cfg)
            dets, planted = generate_detections(scenes, cfg)
            curve = fppi_missrate_curve(dets, scenes)
            # walk down the ranking until the first FP: everything above it is the zero-FP set
            flags = label_detections(dets, scenes)
            order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
            tp = 0
            for pos, i in enumerate(order):
                if not flags[i]:
                    # detections sharing the FP's score are kept together with it
                    while tp and dets[order[pos - 1]].score == dets[i].score:
                        pos -= 1
                        tp -= flags[order[pos]]
                    break
                tp += 1
            n_gt = sum(len(s.objects) for s in scenes)
            assert mr_at(curve, 0.0) == 1.0 - tp / n_gt


def _random_scene(rng, image_id):
    width, height = rng.uniform(100, 1000), rng.uniform(100, 1000)
    objects, grasps = [], []
    for i in range(rng.randint(1, 5)):
        x0, y0 = rng.uniform(0, width - 20), rng.uniform(0, height - 20)
        box = AxisAlignedBox(x0, y0, rng.uniform(x0 + 1, width), rng.uniform(y0 + 1, height))
        objects.append(ObjectAnnotation(i + 1, rng.choice(["cup", "pen", "knife"]), box))
        for _ in range(rng.randint(0, 4)):
            r = OrientedRect(rng.uniform(box.x_min, box.x_max), rng.uniform(box.y_min, box.y_max),
                             rng.uniform(2, 60), rng.uniform(2, 30), rng.uniform(-90, 90))
            grasps.append(GraspAnnotation(r, rng.random() < 0.3, i + 1))
    return SceneAnnotation(image_id, width, height, tuple(objects), tuple(grasps))


def test_criterion_8_dataset():
    with criterion(8, "round trip within 1e-4 on 10^3 scenes, exact group laws, IoU kept within 1e-9"):
        rng = random.Random(8)
        for i in range(1000):
            s = _random_scene(rng, f"r{i}")
            back = parse_scene(*write_scene(s))
            for a, b in zip(back.objects, s.objects):
                assert a.index == b.index and a.category == b.category
                assert max(abs(p - q) for p, q in zip(a.bbox.as_list(), b.bbox.as_list())) <= 1e-4
            assert [(g.hard, g.owner_index) for g in back.grasps] == [(g.hard, g.owner_index) for g in s.grasps]
            assert all(same_rect(a.rect, b.rect, 1e-4) for a, b in zip(back.grasps, s.grasps))
            if i < 200:
                for t in ("hflip", "rot90", "rot180", "rot270"):
                    a = augment(s, t)
                    for (g1, g2), (h1, h2) in zip(itertools.combinations(s.grasps, 2),
                                                  itertools.combinations(a.grasps, 2)):
                        assert abs(rotated_iou(h1.rect, h2.rect) - rotated_iou(g1.rect, g2.rect)) <= 1e-9
        for s in generate_scenes(SynthConfig(seed=8, n_scenes=200, overlap_bias=0.5)):
            assert augment(augment(s, "hflip"), "hflip") == s
            r = s
            for _ in range(4):
                r = augment(r, "rot90")
            assert r == s


def test_criterion_9_depth():
    with criterion(9, "plane normals within 1e-6 / 1e-4, back-projection within 1e-9 px"):
        k = Intrinsics(520.0, 515.0, 40.0, 30.0)
        flat = DepthMap(np.full((60, 80), 0.75), k)
        for u, v in [(40, 30), (5, 5), (70, 50)]:
            assert max(abs(p - q) for p, q in zip(surface_normal(flat, u, v), (0, 0, -1))) <= 1e-6
        u = np.arange(80)[None, :].repeat(60, axis=0)
        for a in (-0.5, 0.2, 0.8):
            tilted = DepthMap(0.75 / (1 - a * (u - k.cx) / k.fx), k)
            want = np.array([a, 0.0, -1.0]) / math.hypot(a, 1.0)
            for uu, vv in [(40, 30), (10, 50)]:
                assert np.abs(np.array(surface_normal(tilted, uu, vv)) - want).max() <= 1e-4
            for rect in (OrientedRect(30, 20, 12, 6, 10), OrientedRect(55, 40, 20, 8, -70)):
                pose = grasp_pose(rect, tilted)
                pu, pv = tilted.project(pose.point)
                assert abs(pu - pose.pixel[0]) <= 1e-9 and abs(pv - pose.pixel[1]) <= 1e-9


def test_criterion_10_cli(tmp_path, capsys):
    with criterion(10, "synth -> eval reproduces goldens on two seeds, degraded detector scores worse"):
        for case in sorted(GOLDEN.iterdir()):
            data, out = tmp_path / case.name / "data", tmp_path / case.name / "out"
            assert main(["synth", str(case / "config.json"), str(data)]) == 0
            assert main(["eval", str(data), str(data / "detections.jsonl"), "-o", str(out), "--no-figures"]) == 0
            for name in ("report.json", "curve.csv"):
                assert (out / name).read_bytes() == (case / name).read_bytes(), f"{case.name}/{name}"

            cfg = json.loads((case / "config.json").read_text())
            cfg.update(box_jitter=8.0, grasp_jitter=10.0, angle_jitter=25.0)
            worse_cfg = tmp_path / case.name / "degraded.json"
            worse_cfg.write_text(json.dumps(cfg))
            worse_data, worse_out = tmp_path / case.name / "wdata", tmp_path / case.name / "wout"
            assert main(["synth", str(worse_cfg), str(worse_data)]) == 0
            assert main(["eval", str(worse_data), str(worse_data / "detections.jsonl"), "-o", str(worse_out),
                         "--no-figures"]) == 0
            clean = json.loads((out / "report.json").read_text())
            worse = json.loads((worse_out / "report.json").read_text())
            assert worse["lamr"] > clean["lamr"]
            assert worse["map"] < clean["map"]
        assert len(list(GOLDEN.iterdir())) >= 2


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
