import numpy as np
import pandas as pd
import pytest

from irstd_toolkit.errors import InvalidArgumentError
from irstd_toolkit.metrics import (
    SampleCounts,
    default_thresholds,
    evaluate_masks,
    iou,
    niou,
    pd_at_fa,
    roc_sweep,
    sample_counts,
    write_roc_csv,
)


@pytest.fixture
def two_target_scene():
    gt = np.zeros((10, 10), dtype=bool)
    gt[1:3, 1:3] = True
    gt[7, 7] = True
    saliency = np.zeros((10, 10))
    saliency[1:3, 1:3] = 0.9
    saliency[7, 7] = 0.5
    saliency[5, 0] = 0.7
    return saliency, gt


def test_sample_counts():
    gt = np.zeros((4, 4), dtype=bool)
    gt[1:3, 1:3] = True
    assert sample_counts(gt, gt) == SampleCounts(4, 4, 4)
    assert sample_counts(np.zeros_like(gt), gt) == SampleCounts(0, 4, 0)
    with pytest.raises(InvalidArgumentError):
        sample_counts(np.zeros((3, 3)), gt)


def test_iou_and_niou():
    perfect = SampleCounts(4, 4, 4)
    assert iou([perfect]) == niou([perfect]) == 1.0
    assert niou([perfect, SampleCounts(0, 4, 4)]) == pytest.approx(0.5)
    batch = [SampleCounts(2, 4, 4), SampleCounts(8, 8, 8)]
    assert iou(batch) == pytest.approx(10 / 14)
    assert niou(batch) == pytest.approx(2 / 3)


def test_empty_sample_scores():
    empty = SampleCounts(0, 0, 0)
    assert niou([empty]) == 1.0
    assert niou([empty], empty_score=0.0) == 0.0
    with pytest.raises(InvalidArgumentError):
        niou([])
    with pytest.raises(InvalidArgumentError):
        SampleCounts(5, 4, 4)


def test_evaluate_masks_report():
    gt = np.zeros((4, 4), dtype=bool)
    gt[0, 0] = True
    report = evaluate_masks([gt, np.zeros_like(gt)], [gt, gt], stems=["a", "b"])
    assert report.iou == pytest.approx(0.5)
    assert report.niou == pytest.approx(0.5)
    assert [row["stem"] for row in report.to_dict()["per_sample"]] == ["a", "b"]


def test_roc_extremes(two_target_scene):
    saliency, gt = two_target_scene
    nothing, everything = roc_sweep([saliency], [gt], [1.0, -0.1], workers=1)
    assert nothing.pd == 0.0 and nothing.fa == 0.0
    assert everything.pd == 1.0
    assert everything.fa == pytest.approx((100 - 5) / 100)


def test_roc_counts_targets_and_false_pixels(two_target_scene):
    saliency, gt = two_target_scene
    points = roc_sweep([saliency], [gt], [0.8, 0.6, 0.4], workers=1)
    assert [p.pd for p in points] == [0.5, 0.5, 1.0]
    assert [p.fa for p in points] == [0.0, 0.01, 0.01]
    assert pd_at_fa(points, 0.0) == 0.5
    assert pd_at_fa(points, 0.05) == 1.0


def test_roc_is_monotone_and_thread_independent(rng):
    maps = [rng.random((16, 16)) for _ in range(3)]
    gts = [m > 0.95 for m in maps]
    thresholds = default_thresholds(maps, count=30)
    serial = roc_sweep(maps, gts, thresholds, workers=1)
    parallel = roc_sweep(maps, gts, thresholds, workers=4)
    assert serial == parallel
    assert all(a.pd <= b.pd and a.fa <= b.fa for a, b in zip(serial, serial[1:]))
    assert serial[0].pd == 0.0 and serial[-1].pd == 1.0


def test_roc_is_monotone_over_random_batches(rng):
    for _ in range(100):
        size = int(rng.integers(4, 20))
        maps = [rng.normal(size=(size, size)) for _ in range(int(rng.integers(1, 4)))]
        gts = [rng.random((size, size)) < 0.05 for _ in maps]
        gts[0][0, 0] = True
        points = roc_sweep(maps, gts, default_thresholds(maps, count=int(rng.integers(2, 40))), workers=1)
        assert all(a.pd <= b.pd and a.fa <= b.fa for a, b in zip(points, points[1:]))
        assert points[0].pd == 0.0 and points[-1].pd == 1.0


def test_roc_rejects_bad_input(two_target_scene):
    saliency, gt = two_target_scene
    with pytest.raises(InvalidArgumentError):
        roc_sweep([saliency], [gt], [0.1, 0.5])
    with pytest.raises(InvalidArgumentError):
        roc_sweep([saliency], [np.zeros_like(gt)], [0.5, 0.1])


def test_default_thresholds_span_range(rng):
    maps = [rng.random((8, 8))]
    thresholds = default_thresholds(maps, count=10)
    assert len(thresholds) == 10
    assert thresholds[0] == maps[0].max()
    assert thresholds[-1] < maps[0].min()
    assert all(b < a for a, b in zip(thresholds, thresholds[1:]))


def test_roc_csv_header(tmp_path, two_target_scene):
    saliency, gt = two_target_scene
    path = tmp_path / "roc.csv"
    write_roc_csv(roc_sweep([saliency], [gt], [0.8, 0.4], workers=1), path)
    assert path.read_text().splitlines()[0] == "threshold,fa,pd"
    frame = pd.read_csv(path)
    assert frame["pd"].tolist() == [0.5, 1.0]
