"""Region growing over the range image.

Two 4-adjacent cells (with azimuth wraparound, no elevation wrap) join the
same segment when their ranges differ by at most a threshold. Components
smaller than min_segment_cells are discarded; optional ground removal drops
low cells before growing.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import RangeImage


@dataclass(frozen=True)
class SegmentationParams:
    range_diff_threshold: float = 0.3  # meters
    min_segment_cells: int = 5
    ground_removal: bool = True
    ground_z_threshold: float = -1.5  # meters below the sensor

    def __post_init__(self):
        if not self.range_diff_threshold > 0:
            raise ValueError("range_diff_threshold must be positive")
        if self.min_segment_cells < 1:
            raise ValueError("min_segment_cells must be >= 1")


@dataclass
class Segment:
    """A 4-connected set of occupied cells assumed to measure one object.

    cells is an (m, 2) int array of (row, col) pairs in raster order.
    """

    id: int
    cells: np.ndarray
    frame_id: int
    centroid_cell: tuple[int, int]

    def __len__(self) -> int:
        return self.cells.shape[0]

    def rows(self) -> np.ndarray:
        return self.cells[:, 0]

    def cols(self) -> np.ndarray:
        return self.cells[:, 1]


def _eligible_mask(img: RangeImage, params: SegmentationParams) -> np.ndarray:
    mask = img.occupancy
    if params.ground_removal:
        mask = mask & (img.height_m >= params.ground_z_threshold)
    return mask


def segment(img: RangeImage, params: SegmentationParams) -> list[Segment]:
    """Partition eligible cells into range-similar connected components.

    Components are discovered in raster-scan order and keep consecutive ids;
    fragments smaller than min_segment_cells are dropped.
    """
    n_rows, n_cols = img.range_m.shape
    eligible = _eligible_mask(img, params)
    rng_img = img.range_m
    thr = params.range_diff_threshold

    visited = np.zeros((n_rows, n_cols), dtype=bool)
    segments: list[Segment] = []
    for r0 in range(n_rows):
        for c0 in range(n_cols):
            if not eligible[r0, c0] or visited[r0, c0]:
                continue
            # breadth-first growth from the first unvisited cell
            queue = deque([(r0, c0)])
            visited[r0, c0] = True
            cells = []
            while queue:
                r, c = queue.popleft()
                cells.append((r, c))
                base = rng_img[r, c]
                for nr, nc in (
                    (r - 1, c),
                    (r + 1, c),
                    (r, (c - 1) % n_cols),
                    (r, (c + 1) % n_cols),
                ):
                    if nr < 0 or nr >= n_rows:
                        continue
                    if visited[nr, nc] or not eligible[nr, nc]:
                        continue
                    if abs(rng_img[nr, nc] - base) <= thr:
                        visited[nr, nc] = True
                        queue.append((nr, nc))
            if len(cells) < params.min_segment_cells:
                continue
            arr = np.array(sorted(cells), dtype=np.int64)
            seg_id = len(segments)
            centroid = segment_centroid_cells(arr, n_cols)
            segments.append(Segment(seg_id, arr, img.frame_id, centroid))
    return segments


def segment_centroid_cells(cells: np.ndarray, n_cols: int) -> tuple[int, int]:
    """Member cell nearest the segment's mean position, azimuth-wrapped.

    Columns are circular, so they are unwrapped across the largest empty arc
    before averaging; ties break toward the smallest (row, col).
    """
    rows = cells[:, 0].astype(np.float64)
    cols = cells[:, 1]
    uniq = np.unique(cols)
    if uniq.size == n_cols or uniq.size == 1:
        start = int(uniq[0])
    else:
        gaps = np.diff(uniq)
        wrap_gap = uniq[0] + n_cols - uniq[-1]
        k = int(np.argmax(np.append(gaps, wrap_gap)))
        # the occupied arc starts just after the widest gap
        start = int(uniq[(k + 1) % uniq.size])
    unwrapped = (cols - start) % n_cols
    mean_row = rows.mean()
    mean_col = unwrapped.mean()
    d2 = (rows - mean_row) ** 2 + (unwrapped - mean_col) ** 2
    best = np.lexsort((cells[:, 1], cells[:, 0], d2))[0]
    return int(cells[best, 0]), int(cells[best, 1])


def segment_centroid(seg: Segment, img: RangeImage) -> tuple[int, int]:
    return segment_centroid_cells(seg.cells, img.n_cols)
