import json
import math

import pytest

import relgraph as rg


def test_census_paper_sun():
    c = rg.parameter_census("paper-sun")
    assert c["pool"] == 90112
    assert c["relation"] == 983040


def test_presets_and_hash():
    names = rg.preset_names()
    assert {"desk", "base", "paper-sun", "paper-scannet"} <= set(names)
    assert rg.config_hash("desk") == rg.config_hash(rg.config_json("desk"))
    assert rg.config_hash("desk") != rg.config_hash("base")
    cfg = json.loads(rg.config_json("desk"))
    cfg["train"]["epochs"] = 3
    assert rg.config_hash(json.dumps(cfg)) != rg.config_hash("desk")


def test_offset_cube_iou():
    a = rg.OrientedBox((0, 0, 0), (1, 1, 1))
    b = rg.OrientedBox((0.5, 0, 0), (1, 1, 1))
    assert rg.iou_3d(a, b) == pytest.approx(1 / 3, abs=1e-12)
    assert rg.iou_3d(a, a) == pytest.approx(1.0)
    assert abs(rg.iou_3d_monte_carlo(a, b, 200000, 1) - 1 / 3) < 0.01


def test_nms_and_ap():
    a = rg.OrientedBox((0, 0, 0), (1, 1, 1), score=0.9)
    b = rg.OrientedBox((0, 0, 0), (1, 1, 1), score=0.8)
    assert rg.nms_3d([a, b], 0.25) == [0]
    gt = [[rg.OrientedBox((0, 0, 0), (1, 1, 1))]]
    assert rg.average_precision(gt, gt, 0, 0.25) == 1.0
    assert rg.average_precision([[]], gt, 0, 0.25) == 0.0
    mean, per_class = rg.mean_average_precision(gt, gt, 0.5)
    assert mean == 1.0 and per_class == {0: 1.0}


def test_center_of_mass_loss():
    assert rg.center_of_mass_loss(1.0) == pytest.approx(0.0, abs=1e-12)
    assert rg.center_of_mass_loss(0.5) == pytest.approx(0.25 * math.log(2), abs=1e-9)


def test_synth_scene_deterministic():
    s1 = rg.synth_scene("desk", 3)
    s2 = rg.synth_scene("desk", 3)
    assert s1["points"] == s2["points"]
    assert len(s1["points"]) == 2048
    assert 3 <= len(s1["boxes"]) <= 6
    assert all(0 <= b.class_id < 4 for b in s1["boxes"])


def test_gradcheck_losses():
    results = rg.gradcheck("losses", probes=20)
    assert results and all(r["passed"] for r in results)


def test_pipeline_trains(tmp_path):
    cfg = json.loads(rg.config_json("desk"))
    cfg["train"]["epochs"] = 2
    p = rg.Pipeline(json.dumps(cfg), 2)
    losses = p.train_epoch()
    assert len(losses) == 1 and all(math.isfinite(x) for x in losses)
    assert p.epoch == 1
    p.save(str(tmp_path / "ck.json"))
    dets = p.detect(0)
    assert len(dets) <= 32
    assert 0.0 <= p.mean_ap(0.25) <= 1.0
