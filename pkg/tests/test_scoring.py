import numpy as np
import pytest

from pvdetect.detection import DetectionObject
from pvdetect.errors import ConfigError, DataError
from pvdetect.scoring import (
    PRCurve,
    jaccard,
    match_objects,
    multi_tile_object_pr,
    object_pr,
    pixel_pr,
    read_pr_csv,
    write_pr_csv,
)


def obj(pixels, confidence):
    return DetectionObject(frozenset(pixels), confidence)


def rect(x0, y0, x1, y1):
    return {(x, y) for x in range(x0, x1) for y in range(y0, y1)}


# ---------------------------------------------------------------------------
# Jaccard
# ---------------------------------------------------------------------------


def test_jaccard_identity_and_disjoint():
    a = {(0, 0), (1, 0)}
    assert jaccard(a, a) == 1.0
    assert jaccard(a, {(5, 5)}) == 0.0
    assert jaccard(a, set()) == 0.0


def test_jaccard_partial_overlap():
    a = rect(0, 0, 2, 2)
    b = rect(1, 0, 3, 2)
    assert jaccard(a, b) == pytest.approx(1.0 / 3.0)


def test_jaccard_symmetry_and_range():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = {(int(x), int(y)) for x, y in rng.integers(0, 6, size=(8, 2))}
        b = {(int(x), int(y)) for x, y in rng.integers(0, 6, size=(8, 2))}
        if not a and not b:
            continue
        j = jaccard(a, b)
        assert j == jaccard(b, a)
        assert 0.0 <= j <= 1.0
        assert (j == 1.0) == (a == b)


def test_jaccard_both_empty_is_error():
    with pytest.raises(ValueError):
        jaccard(set(), set())


# ---------------------------------------------------------------------------
# Pixel PR
# ---------------------------------------------------------------------------


def test_pixel_pr_four_pixel_worked_example():
    conf = np.array([[0.9, 0.8, 0.7, 0.1]])
    mask = np.array([[True, False, True, False]])
    curve = pixel_pr([conf], [mask])
    assert curve.thresholds.tolist() == [0.9, 0.8, 0.7, 0.1]
    assert curve.precision.tolist() == [1.0, 0.5, 2.0 / 3.0, 0.5]
    assert curve.recall.tolist() == [0.5, 0.5, 1.0, 1.0]
    assert curve.prevalence == 0.5


def test_pixel_pr_perfect_detector_single_point():
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:4, 2:5] = True
    curve = pixel_pr([mask.astype(np.float64)], [mask])
    assert curve.thresholds.tolist() == [1.0]
    assert curve.precision.tolist() == [1.0]
    assert curve.recall.tolist() == [1.0]


def test_pixel_pr_prevalence_baseline():
    # 7 positive pixels in 10000: a random detector scores P = 0.0007
    conf = np.zeros((100, 100))
    mask = np.zeros((100, 100), dtype=bool)
    mask[0, :7] = True
    conf[0, :7] = 0.9
    curve = pixel_pr([conf], [mask])
    assert curve.prevalence == 0.0007


def test_pixel_pr_recall_monotone_and_final_recall_one():
    rng = np.random.default_rng(1)
    conf = rng.uniform(0.01, 1.0, size=(32, 32))
    mask = rng.uniform(0, 1, size=(32, 32)) < 0.1
    if not mask.any():
        mask[0, 0] = True
    curve = pixel_pr([conf], [mask])
    assert (np.diff(curve.thresholds) < 0).all()
    assert (np.diff(curve.recall) >= 0).all()
    assert curve.recall[-1] == 1.0  # sweep reaches the lowest positive confidence


def test_pixel_pr_pools_multiple_maps():
    c1 = np.array([[1.0, 0.0]])
    m1 = np.array([[True, False]])
    c2 = np.array([[0.5]])
    m2 = np.array([[True]])
    curve = pixel_pr([c1, c2], [m1, m2])
    assert curve.thresholds.tolist() == [1.0, 0.5]
    assert curve.recall.tolist() == [0.5, 1.0]
    assert curve.prevalence == pytest.approx(2.0 / 3.0)


def test_pixel_pr_zero_confidence_pixels_never_detected():
    conf = np.array([[0.9, 0.0, 0.0]])
    mask = np.array([[True, True, False]])
    curve = pixel_pr([conf], [mask])
    # the zero-confidence positive is unreachable: recall tops out at 0.5
    assert curve.thresholds.tolist() == [0.9]
    assert curve.recall.tolist() == [0.5]


def test_pixel_pr_errors():
    with pytest.raises(DataError):
        pixel_pr([np.zeros((2, 2))], [np.zeros((2, 2), dtype=bool)])
    with pytest.raises(DataError):
        pixel_pr([np.zeros((2, 2))], [np.ones((3, 3), dtype=bool)])
    with pytest.raises(ConfigError):
        pixel_pr([], [])
    with pytest.raises(ConfigError):
        pixel_pr([np.zeros((2, 2))], [np.ones((2, 2), dtype=bool)], sweep="fuzzy")
    with pytest.raises(DataError):
        pixel_pr([np.full((2, 2), np.nan)], [np.ones((2, 2), dtype=bool)])
    with pytest.raises(DataError):
        pixel_pr([np.full((2, 2), 1.5)], [np.ones((2, 2), dtype=bool)])


def test_pixel_pr_quantized_sweep():
    rng = np.random.default_rng(2)
    conf = rng.uniform(0, 1, size=(64, 64))
    conf[rng.uniform(0, 1, size=(64, 64)) < 0.1] = 0.0
    mask = rng.uniform(0, 1, size=(64, 64)) < 0.2
    exact = pixel_pr([conf], [mask], sweep="exact")
    quantized = pixel_pr([conf], [mask], sweep="quantized")
    assert quantized.quantized and not exact.quantized
    assert quantized.thresholds.size <= 1001
    assert quantized.thresholds[-1] == 0.0
    # quantized points recompute exactly; zero-confidence pixels never count
    n_pos = int(mask.sum())
    for t, p, r in zip(quantized.thresholds, quantized.precision, quantized.recall):
        detected = (conf >= t) & (conf > 0)
        assert p == (mask & detected).sum() / detected.sum()
        assert r == (mask & detected).sum() / n_pos


# ---------------------------------------------------------------------------
# Object matching
# ---------------------------------------------------------------------------


def test_match_exact_detection():
    annotation = rect(2, 2, 5, 5)
    result = match_objects([obj(annotation, 0.9)], [annotation], 1.0)
    assert result.accepted == (True,)
    assert result.n_true == 1 and result.n_false == 0
    assert result.detected_by[0] == {0}


def test_match_union_rule_spanning_two_annotations():
    a1 = rect(0, 0, 2, 1)  # (0,0) (1,0)
    a2 = rect(2, 0, 4, 1)  # (2,0) (3,0)
    detection = obj(a1 | a2 | {(4, 0)}, 0.8)
    result = match_objects([detection], [a1, a2], 0.5)
    assert jaccard(detection.pixels, a1 | a2) == 0.8
    assert result.accepted == (True,)
    assert result.n_detected_annotations == 2


def test_match_below_threshold_is_false_detection():
    annotation = rect(0, 0, 10, 1)
    detection = obj(rect(0, 0, 3, 1), 0.9)  # J = 0.3
    result = match_objects([detection], [annotation], 0.5)
    assert result.accepted == (False,)
    assert result.n_detected_annotations == 0


def test_match_no_overlap_is_false_detection():
    result = match_objects([obj({(9, 9)}, 0.6)], [rect(0, 0, 2, 2)], 0.1)
    assert result.accepted == (False,)


def test_match_order_independent():
    rng = np.random.default_rng(3)
    annotations = [rect(0, 0, 3, 3), rect(5, 5, 9, 9), rect(0, 6, 2, 9)]
    detections = [
        obj(rect(0, 0, 3, 2), 0.9),
        obj(rect(5, 5, 9, 8), 0.7),
        obj(rect(7, 0, 9, 2), 0.5),
    ]
    base = match_objects(detections, annotations, 0.3)
    perm = [2, 0, 1]
    shuffled = match_objects([detections[i] for i in perm], annotations, 0.3)
    assert [shuffled.accepted[perm.index(i)] for i in range(3)] == list(base.accepted)


def test_match_annotation_order_independent():
    annotations = [rect(0, 0, 3, 3), rect(5, 5, 9, 9), rect(0, 6, 2, 9)]
    detections = [obj(rect(0, 0, 3, 2) | rect(5, 5, 9, 8), 0.9)]
    base = match_objects(detections, annotations, 0.3)
    perm = [2, 1, 0]
    shuffled = match_objects(detections, [annotations[i] for i in perm], 0.3)
    assert shuffled.accepted == base.accepted
    assert [shuffled.detected_by[perm.index(i)] for i in range(3)] == list(
        base.detected_by
    )


def test_match_monotone_in_threshold():
    annotations = [rect(0, 0, 4, 4)]
    detections = [obj(rect(0, 0, 4, 3), 0.9), obj(rect(0, 0, 1, 1), 0.8)]
    for lo, hi in [(0.1, 0.5), (0.5, 0.9), (0.2, 1.0)]:
        low = match_objects(detections, annotations, lo)
        high = match_objects(detections, annotations, hi)
        for a, b in zip(high.accepted, low.accepted):
            assert (not a) or b  # accepted at high implies accepted at low


def test_match_threshold_validation():
    with pytest.raises(ConfigError):
        match_objects([], [rect(0, 0, 1, 1)], 0.0)


# ---------------------------------------------------------------------------
# Object PR
# ---------------------------------------------------------------------------


def test_object_pr_worked_example():
    annotation = rect(0, 0, 3, 3)
    detections = [obj(annotation, 0.9), obj(rect(10, 10, 12, 12), 0.4)]
    curve = object_pr(detections, [annotation], 0.5)
    assert curve.thresholds.tolist() == [0.9, 0.4]
    assert curve.precision.tolist() == [1.0, 0.5]
    assert curve.recall.tolist() == [1.0, 1.0]
    assert curve.prevalence == 0.5


def test_object_pr_empty_detections():
    curve = object_pr([], [rect(0, 0, 2, 2)], 0.5)
    assert curve.thresholds.size == 0
    assert curve.max_recall == 0.0


def test_object_pr_no_annotations_is_error():
    with pytest.raises(DataError):
        object_pr([obj({(0, 0)}, 0.5)], [], 0.5)


def test_object_pr_max_recall_monotone_in_jaccard_level():
    rng = np.random.default_rng(4)
    annotations = [rect(0, 0, 4, 4), rect(8, 0, 12, 5), rect(0, 8, 5, 12)]
    detections = [
        obj(rect(0, 0, 4, 3), 0.9),
        obj(rect(8, 0, 12, 5), 0.8),
        obj(rect(0, 8, 3, 10), 0.7),
        obj(rect(20, 20, 22, 22), 0.6),
    ]
    recalls = [
        object_pr(detections, annotations, j).max_recall
        for j in (0.1, 0.3, 0.5, 0.7, 1.0)
    ]
    assert recalls == sorted(recalls, reverse=True)


def test_multi_tile_object_pr_namespaces_tiles():
    ann = rect(0, 0, 2, 2)
    # identical coordinates on two tiles must not interact
    detections = {"a": [obj(ann, 0.9)], "b": [obj(ann, 0.8)]}
    annotations = {"a": [ann], "b": [rect(10, 10, 12, 12)]}
    curve = multi_tile_object_pr(detections, annotations, 0.5)
    assert curve.max_recall == 0.5  # tile b's annotation is never covered
    assert curve.precision[-1] == 0.5
    with pytest.raises(DataError):
        multi_tile_object_pr({"zz": []}, annotations, 0.5)


# ---------------------------------------------------------------------------
# PR CSV
# ---------------------------------------------------------------------------


def test_pr_csv_roundtrip(tmp_path):
    curve = PRCurve(
        np.array([0.9, 0.5, 0.1]),
        np.array([1.0, 0.75, 1.0 / 3.0]),
        np.array([0.25, 0.5, 1.0]),
        prevalence=0.0007,
        quantized=True,
    )
    path = tmp_path / "pr.csv"
    write_pr_csv(curve, path)
    text = path.read_text()
    assert text.splitlines()[0] == "# prevalence=0.00069999999999999999"
    assert "# sweep=quantized" in text
    assert "threshold,precision,recall" in text
    again = read_pr_csv(path)
    assert np.array_equal(again.thresholds, curve.thresholds)
    assert np.array_equal(again.precision, curve.precision)
    assert np.array_equal(again.recall, curve.recall)
    assert again.prevalence == curve.prevalence
    assert again.quantized


def test_pr_curve_invariants():
    with pytest.raises(DataError):
        PRCurve(np.array([0.5, 0.9]), np.array([1.0, 1.0]), np.array([0.1, 0.2]), 0.1)
    with pytest.raises(DataError):
        PRCurve(np.array([0.9, 0.5]), np.array([1.0, 1.0]), np.array([0.5, 0.2]), 0.1)
    with pytest.raises(DataError):
        PRCurve(np.array([0.9]), np.array([1.5]), np.array([0.5]), 0.1)


def test_pr_curve_helpers():
    curve = PRCurve(
        np.array([0.9, 0.5, 0.1]),
        np.array([1.0, 0.8, 0.3]),
        np.array([0.4, 0.7, 0.9]),
        prevalence=0.01,
    )
    assert curve.max_recall == 0.9
    assert curve.best_precision_at(0.5) == 0.8
    assert curve.best_recall_at(0.8) == 0.7
    assert curve.best_recall_at(0.99) == 0.4
    assert curve.best_precision_at(0.9) == 0.3
    assert curve.best_precision_at(0.95) == 0.0  # recall 0.95 never reached
    assert PRCurve(np.array([]), np.array([]), np.array([]), 0.0).max_recall == 0.0
