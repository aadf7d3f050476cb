"""Size-rule classifier: width/height features and hand-written thresholds.

The rules read two physical features of a segment computed from its raw 3D
points: width (largest pairwise horizontal distance) and height (z extent).
Branches are checked in a fixed order with inclusive interval endpoints, so
the widths where intervals touch (1.5, 2.5) resolve deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from .geometry import NO_POINT, PointCloud, RangeImage
from .segmentation import Segment


@dataclass(frozen=True)
class SegmentFeatures:
    width_m: float
    height_m: float

    def __post_init__(self):
        if self.width_m < 0 or self.height_m < 0:
            raise ValueError("features must be non-negative")


def _max_pairwise_distance(xy: np.ndarray) -> float:
    """Diameter of a 2D point set; hull vertices for large sets."""
    pts = np.unique(xy, axis=0)
    if len(pts) < 2:
        return 0.0
    if len(pts) > 16:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # degenerate (collinear) sets fall back to the full scan
    return float(pdist(pts).max())


def compute_features(seg: Segment, cloud: PointCloud, img: RangeImage) -> SegmentFeatures:
    """Width and height of a segment from its back-referenced points."""
    idx = img.point_index[seg.rows(), seg.cols()]
    idx = idx[idx != NO_POINT]
    if idx.size == 0:
        raise ValueError(f"segment {seg.id} has no mapped points")
    pts = cloud.xyz[idx]
    height = float(pts[:, 2].max() - pts[:, 2].min())
    width = _max_pairwise_distance(pts[:, :2])
    return SegmentFeatures(width_m=width, height_m=height)


def classify_rules(f: SegmentFeatures) -> str:
    """Assign one of the five coarse classes from width/height thresholds.

    Checked in order: tall-and-narrow is a trunk; narrow (but not hairline)
    is a person; medium-wide and low is a car; very wide is a building;
    anything else is unknown. A branch that matches on width but fails its
    secondary test consumes the segment as unknown.
    """
    w, z = f.width_m, f.height_m
    if 0.0 <= w <= 2.5 and z > 2.0:
        return "trunk"
    if 0.0 <= w <= 1.5:
        return "people" if w > 0.2 else "unknown"
    if 1.5 <= w <= 2.5:
        return "car" if z < 2.0 else "unknown"
    if 8.0 <= w <= 15.0:
        return "building"
    return "unknown"


def autolabel_frame(
    img: RangeImage, cloud: PointCloud, segs: list[Segment]
) -> list[tuple[int, str]]:
    """One (segment id, rule label) pair per segment, order-preserving."""
    return [(s.id, classify_rules(compute_features(s, cloud, img))) for s in segs]


def write_annotations(path, rows) -> None:
    """Text export: one "frame_id segment_id label_name" line per segment."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id, seg_id, name in rows:
            fh.write(f"{frame_id} {seg_id} {name}\n")


def read_annotations(path) -> list[tuple[int, int, str]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 'frame segment label'")
            rows.append((int(parts[0]), int(parts[1]), parts[2]))
    return rows
