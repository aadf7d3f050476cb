"""Rule classifier and feature extraction.

The label chain is checked two ways: a frozen table of hand-worked examples,
and an exhaustive sweep against an independently coded nested-branch oracle.
"""

import numpy as np
import pytest

from lidarseg.geometry import NO_POINT, NO_RETURN, PointCloud, RangeImage
from lidarseg.labels import UNLABELED
from lidarseg.rules import (
    SegmentFeatures,
    autolabel_frame,
    classify_rules,
    compute_features,
    read_annotations,
    write_annotations,
)
from lidarseg.segmentation import Segment

from .oracles import max_pairwise_xy_distance


def _nested_oracle(w: float, z: float) -> str:
    # Same thresholds, deliberately different control flow: width intervals
    # claim the segment first, then the inner height test either names the
    # class or leaves the default in place.
    label = "unknown"
    if 0.0 <= w <= 2.5 and z > 2.0:
        label = "trunk"
    elif 0.0 <= w <= 1.5:
        if w > 0.2:
            label = "people"
    elif 1.5 <= w <= 2.5:
        if z < 2.0:
            label = "car"
    elif 8.0 <= w <= 15.0:
        label = "building"
    return label


def _scene(points):
    """Cloud plus a one-row image holding point i at column i."""
    xyz = np.asarray(points, dtype=float)
    n = len(xyz)
    cloud = PointCloud(
        xyz=xyz,
        intensity=np.full(n, 0.5),
        gt_label=np.full(n, UNLABELED, dtype=np.uint8),
    )
    n_cols = max(n, 4)
    range_m = np.full((1, n_cols), NO_RETURN)
    height_m = np.zeros((1, n_cols))
    intensity = np.zeros((1, n_cols))
    point_index = np.full((1, n_cols), NO_POINT, dtype=np.int64)
    range_m[0, :n] = np.linalg.norm(xyz, axis=1)
    height_m[0, :n] = xyz[:, 2]
    intensity[0, :n] = 0.5
    point_index[0, :n] = np.arange(n)
    img = RangeImage(range_m, height_m, intensity, point_index)
    cells = np.array([(0, c) for c in range(n)], dtype=np.int64)
    seg = Segment(id=0, cells=cells, frame_id=0, centroid_cell=(0, 0))
    return cloud, img, seg


class TestClassify:
    def test_worked_examples(self):
        cases = [
            (1.0, 1.7, "people"),
            (2.0, 2.5, "trunk"),
            (2.0, 1.5, "car"),
            (10.0, 5.0, "building"),
            (0.1, 1.0, "unknown"),
            (5.0, 3.0, "unknown"),
        ]
        for w, z, want in cases:
            assert classify_rules(SegmentFeatures(w, z)) == want, (w, z)

    def test_interval_endpoints(self):
        assert classify_rules(SegmentFeatures(1.5, 2.0)) == "people"
        assert classify_rules(SegmentFeatures(2.5, 2.1)) == "trunk"
        assert classify_rules(SegmentFeatures(2.5, 1.9)) == "car"
        assert classify_rules(SegmentFeatures(0.0, 3.0)) == "trunk"
        assert classify_rules(SegmentFeatures(0.2, 1.0)) == "unknown"
        assert classify_rules(SegmentFeatures(0.2, 2.5)) == "trunk"
        assert classify_rules(SegmentFeatures(8.0, 0.5)) == "building"
        assert classify_rules(SegmentFeatures(15.0, 6.0)) == "building"
        assert classify_rules(SegmentFeatures(7.9, 3.0)) == "unknown"
        assert classify_rules(SegmentFeatures(15.1, 3.0)) == "unknown"

    def test_sweep_matches_nested_oracle(self):
        mismatches = []
        for i in range(161):
            for j in range(61):
                w, z = i / 10.0, j / 10.0
                got = classify_rules(SegmentFeatures(w, z))
                want = _nested_oracle(w, z)
                if got != want:
                    mismatches.append((w, z, got, want))
        assert mismatches == []

    def test_tall_narrow_never_people_or_car(self):
        # once height exceeds 2.0, nothing at width <= 2.5 escapes the trunk branch
        for i in range(26):
            f = SegmentFeatures(i / 10.0, 2.5)
            assert classify_rules(f) == "trunk"

    def test_negative_features_rejected(self):
        with pytest.raises(ValueError):
            SegmentFeatures(-0.1, 1.0)
        with pytest.raises(ValueError):
            SegmentFeatures(1.0, -0.1)


class TestFeatures:
    def test_triangle(self):
        cloud, img, seg = _scene([(0, 0, 0), (1, 0, 0), (0, 0, 2.4)])
        f = compute_features(seg, cloud, img)
        assert f.width_m == pytest.approx(1.0)
        assert f.height_m == pytest.approx(2.4)

    def test_single_point(self):
        cloud, img, seg = _scene([(3.0, 4.0, 1.0)])
        f = compute_features(seg, cloud, img)
        assert f.width_m == 0.0
        assert f.height_m == 0.0

    def test_width_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            pts = rng.uniform(-5, 5, size=(50, 3))
            cloud, img, seg = _scene(pts)
            f = compute_features(seg, cloud, img)
            want = max_pairwise_xy_distance(pts[:, :2])
            assert f.width_m == pytest.approx(want, rel=1e-12), trial

    def test_collinear_points(self):
        # convex hull rejects 1D input; the slow path must still answer
        pts = [(0.1 * k, 0.2 * k, 0.0) for k in range(20)]
        cloud, img, seg = _scene(pts)
        f = compute_features(seg, cloud, img)
        assert f.width_m == pytest.approx(np.hypot(1.9, 3.8))

    def test_order_invariance(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-2, 2, size=(30, 3))
        base = compute_features(*_reorder(pts, np.arange(30)))
        for _ in range(5):
            perm = rng.permutation(30)
            f = compute_features(*_reorder(pts, perm))
            assert f.width_m == base.width_m
            assert f.height_m == base.height_m

    def test_unmapped_segment_raises(self):
        cloud, img, _ = _scene([(1.0, 0.0, 0.0)])
        bare = Segment(
            id=9,
            cells=np.array([(0, 3)], dtype=np.int64),  # an empty cell
            frame_id=0,
            centroid_cell=(0, 3),
        )
        with pytest.raises(ValueError):
            compute_features(bare, cloud, img)


def _reorder(pts, perm):
    cloud, img, seg = _scene(np.asarray(pts)[perm])
    return seg, cloud, img


class TestAutolabel:
    def test_labels_follow_segment_order(self):
        # two people-sized clusters and one building-sized slab in one cloud
        pts = [
            (5.0, 0.0, 0.0),
            (5.0, 0.5, 1.6),  # segment 0: width 0.5, height 1.6 -> people
            (9.0, 0.0, -0.5),
            (9.0, 9.0, 5.5),  # segment 1: width 9.0, height 6.0 -> building
            (4.0, 0.0, 0.0),
            (4.0, 2.0, 1.0),  # segment 2: width 2.0, height 1.0 -> car
        ]
        cloud, img, _ = _scene(pts)
        segs = [
            Segment(0, np.array([(0, 0), (0, 1)], dtype=np.int64), 0, (0, 0)),
            Segment(1, np.array([(0, 2), (0, 3)], dtype=np.int64), 0, (0, 2)),
            Segment(2, np.array([(0, 4), (0, 5)], dtype=np.int64), 0, (0, 4)),
        ]
        assert autolabel_frame(img, cloud, segs) == [
            (0, "people"),
            (1, "building"),
            (2, "car"),
        ]

    def test_empty_frame(self):
        cloud, img, _ = _scene([(1.0, 0.0, 0.0)])
        assert autolabel_frame(img, cloud, []) == []


class TestAnnotationIO:
    def test_round_trip(self, tmp_path):
        rows = [(0, 0, "people"), (0, 12, "unknown"), (41, 3, "building")]
        path = tmp_path / "labels.txt"
        write_annotations(path, rows)
        assert read_annotations(path) == rows

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("0 1 car\n\n2 7 trunk\n")
        assert read_annotations(path) == [(0, 1, "car"), (2, 7, "trunk")]

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("0 1 car extra\n")
        with pytest.raises(ValueError):
            read_annotations(path)
