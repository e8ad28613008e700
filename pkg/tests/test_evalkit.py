import json

import numpy as np
import pytest
import torch
from PIL import Image

from panoda.evalkit import (colorize, confusion_from, confusion_update, decolorize, directional_report,
                            export_attention, export_visuals, fps_benchmark, gap_table, iou_report, miou_gap,
                            new_confusion, sector_confusions, sector_of_columns)


def _loop_confusion(pred, gt, n):
    cm = np.zeros((n, n), np.int64)
    for p, g in zip(pred.ravel(), gt.ravel()):
        if g != 255:
            cm[g, p] += 1
    return cm


def _set_iou(pred, gt, n):
    """IoU per class from explicit pixel-coordinate sets."""
    valid = {(i, j) for i, j in zip(*np.nonzero(gt != 255))}
    out = {}
    for c in range(n):
        ps = {(i, j) for i, j in zip(*np.nonzero(pred == c))} & valid
        gs = {(i, j) for i, j in zip(*np.nonzero(gt == c))}
        if ps | gs:
            out[c] = len(ps & gs) / len(ps | gs)
    return out


def test_confusion_matches_loop(rng):
    pred = rng.integers(0, 5, (7, 9))
    gt = rng.integers(0, 5, (7, 9))
    gt[0] = 255
    assert np.array_equal(confusion_update(new_confusion(5), pred, gt), _loop_confusion(pred, gt, 5))


def test_confusion_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        confusion_update(new_confusion(3), np.zeros((2, 2)), np.zeros((2, 3)))


def test_iou_hand_instance():
    gt = np.array([[0, 0, 1, 1]])
    pred = np.array([[0, 1, 0, 0]])
    iou, miou, acc = iou_report(confusion_from([pred], [gt], 3))
    assert iou[0] == pytest.approx(1 / 4)
    assert iou[1] == 0.0
    assert np.isnan(iou[2])
    assert miou == pytest.approx(0.125) and acc == pytest.approx(0.25)
    iou, miou, _ = iou_report(confusion_from([np.array([[0, 0, 1, 0]])], [gt], 3))
    assert iou[0] == pytest.approx(2 / 3) and iou[1] == pytest.approx(0.5)


def test_iou_matches_set_oracle():
    rng = np.random.default_rng(8)
    for _ in range(100):
        gt = rng.integers(0, 6, (16, 16))
        gt[rng.random((16, 16)) < 0.15] = 255
        pred = rng.integers(0, 6, (16, 16))
        iou, miou, _ = iou_report(confusion_from([pred], [gt], 6))
        oracle = _set_iou(pred, gt, 6)
        assert set(np.nonzero(~np.isnan(iou))[0]) == set(oracle)
        for c, v in oracle.items():
            assert iou[c] == v
        assert miou == np.mean(list(oracle.values()))


def test_empty_confusion_raises():
    with pytest.raises(ValueError):
        iou_report(new_confusion(3))


def test_sector_columns():
    cols = sector_of_columns(16, 8)
    assert cols[7] == 0 and cols[8] == 0       # centre column pair is sector 0
    assert np.bincount(cols).tolist() == [2] * 8
    uneven = sector_of_columns(19, 8)
    assert np.bincount(uneven).sum() == 19 and np.bincount(uneven)[-1] == 2 + 3
    with pytest.raises(ValueError):
        sector_of_columns(4, 8)


@pytest.mark.parametrize("w", [64, 67])
def test_sectors_add_up(rng, w):
    preds = [rng.integers(0, 4, (6, w)) for _ in range(3)]
    gts = [rng.integers(0, 4, (6, w)) for _ in range(3)]
    gts[0][:, :5] = 255
    cms = sector_confusions(preds, gts, 8, 4)
    assert np.array_equal(sum(cms), confusion_from(preds, gts, 4))
    report, _ = directional_report(preds, gts, 8, classes=[0, 1], num_classes=4)
    assert len(report) == 8 and set(report[0]["iou"]) == {0, 1}


def test_gap_values():
    assert miou_gap(79.3, 28.5) == -50.8
    assert miou_gap(79.3, 42.0) == -37.3
    with pytest.raises(ValueError):
        miou_gap(101.0, 3.0)
    assert "-50.8" in gap_table([("DANet", "ResNet-101", 79.3, 28.5)])


def test_fps_benchmark_fields():
    net = torch.nn.Conv2d(3, 2, 1)
    r = fps_benchmark(net, (32, 64), n=3, warmup=1)
    assert set(r) >= {"fps", "n", "batch", "warmup", "resolution", "hardware"}
    assert r["fps"] > 0 and r["resolution"] == [32, 64]


def test_fps_slower_model_is_slower():
    small = torch.nn.Conv2d(3, 3, 1)
    big = torch.nn.Sequential(*[torch.nn.Conv2d(3, 3, 3, padding=1) for _ in range(40)])
    assert fps_benchmark(big, (64, 128), n=5, warmup=1)["fps"] < fps_benchmark(small, (64, 128), n=5, warmup=1)["fps"]


def test_palette_round_trip(rng):
    lab = rng.integers(0, 19, (5, 6)).astype(np.uint8)
    lab[0, 0] = 255
    assert np.array_equal(decolorize(colorize(lab)), lab)
    bad = colorize(lab)
    bad[1, 1] = (1, 2, 3)
    with pytest.raises(ValueError):
        decolorize(bad)


def test_export_visuals(tmp_path, rng):
    pred = rng.integers(0, 19, (8, 16)).astype(np.uint8)
    unc = rng.random((8, 16))
    files = export_visuals(pred, tmp_path / "vis", "s0", gt=pred, uncertainty=unc)
    assert np.array_equal(decolorize(np.array(Image.open(files["pred"]))), pred)
    meta = json.loads(files["uncertainty_meta"].read_text())
    assert meta["min"] == pytest.approx(unc.min()) and meta["max"] == pytest.approx(unc.max())
    heat = np.array(Image.open(files["uncertainty"]))
    assert heat.min() == 0 and heat.max() == 255
    att = export_attention(np.full((4, 4), 1 / 16), (1, 2), tmp_path / "att.png")
    assert att["query"] == [1, 2]


def test_export_visuals_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot create"):
        export_visuals(np.zeros((2, 2), np.uint8), blocker / "sub")
