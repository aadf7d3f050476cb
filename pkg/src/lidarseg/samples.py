"""Fixed-size network inputs cropped around segment centers.

Each segment yields one S-by-S patch with three channels (range, height,
intensity), all normalized into [0, 1]. The crop window wraps around the
azimuth seam and zero-pads past the top and bottom beam rows, then shrinks
or grows to the output size by nearest-neighbor lookup so that empty-cell
sentinels stay exactly zero instead of bleeding into neighbors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import NO_RETURN, PointCloud, RangeImage
from .segmentation import Segment

_SAMPLE_MAGIC = b"LSMP"
_SAMPLE_VERSION = 1
_SAMPLE_HEADER = struct.Struct("<4sHHI")  # magic, version, out_size, count


@dataclass(frozen=True)
class CropParams:
    window_rows: int = 32
    window_cols: int = 128
    out_size: int = 64
    range_norm_max: float = 70.0
    height_norm_min: float = -2.0
    height_norm_max: float = 8.0

    def __post_init__(self):
        if self.window_rows < 1 or self.window_cols < 1:
            raise ValueError("window dims must be >= 1")
        if self.out_size < 8:
            raise ValueError("out_size must be >= 8")
        if self.range_norm_max <= 0:
            raise ValueError("range_norm_max must be positive")
        if self.height_norm_min >= self.height_norm_max:
            raise ValueError("height norm bounds must be ordered")


@dataclass
class Sample:
    """One classifier input: (S, S, 3) float64 in [0,1], channels
    range/height/intensity, plus a boolean mask of the pixels that came
    from the center segment itself."""

    data: np.ndarray
    mask: np.ndarray
    segment_id: int
    frame_id: int

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError("sample data must be (S, S, 3)")
        if self.mask.shape != self.data.shape[:2]:
            raise ValueError("mask shape must match data")


def extract_sample(img: RangeImage, seg: Segment, p: CropParams) -> Sample:
    cr, cc = seg.centroid_cell
    r0 = cr - p.window_rows // 2
    c0 = cc - p.window_cols // 2
    win_rows = r0 + np.arange(p.window_rows)
    win_cols = (c0 + np.arange(p.window_cols)) % img.n_cols
    valid = (win_rows >= 0) & (win_rows < img.n_rows)

    rwin = np.full((p.window_rows, p.window_cols), NO_RETURN, dtype=np.float64)
    hwin = np.zeros_like(rwin)
    iwin = np.zeros_like(rwin)
    mwin = np.zeros((p.window_rows, p.window_cols), dtype=bool)
    src_mask = np.zeros((img.n_rows, img.n_cols), dtype=bool)
    src_mask[seg.rows(), seg.cols()] = True

    rows_src = win_rows[valid]
    rwin[valid] = img.range_m[rows_src][:, win_cols]
    hwin[valid] = img.height_m[rows_src][:, win_cols]
    iwin[valid] = img.intensity[rows_src][:, win_cols]
    mwin[valid] = src_mask[rows_src][:, win_cols]

    # nearest-neighbor index maps, window -> output grid
    ri = (np.arange(p.out_size) * p.window_rows) // p.out_size
    ci = (np.arange(p.out_size) * p.window_cols) // p.out_size
    sel = np.ix_(ri, ci)
    rsel, hsel, isel = rwin[sel], hwin[sel], iwin[sel]

    span = p.height_norm_max - p.height_norm_min
    data = np.stack(
        [
            np.clip(rsel / p.range_norm_max, 0.0, 1.0),
            np.clip((hsel - p.height_norm_min) / span, 0.0, 1.0),
            isel,
        ],
        axis=-1,
    )
    data[rsel == NO_RETURN] = 0.0
    return Sample(data=data, mask=mwin[sel], segment_id=seg.id, frame_id=seg.frame_id)


def extract_frame_samples(
    img: RangeImage, cloud: PointCloud, segs: list[Segment], p: CropParams
) -> list[Sample]:
    """One sample per segment, preserving segment order."""
    return [extract_sample(img, s, p) for s in segs]


def save_samples(path, samples: list[Sample]) -> None:
    """Binary export: header then contiguous float32 tensors in list order.

    Identity and labels travel in a paired annotation text file with one
    line per sample in the same order.
    """
    if samples:
        size = samples[0].data.shape[0]
        if any(s.data.shape[0] != size for s in samples):
            raise ValueError("samples must share one output size")
    else:
        size = 0
    with open(path, "wb") as fh:
        fh.write(_SAMPLE_HEADER.pack(_SAMPLE_MAGIC, _SAMPLE_VERSION, size, len(samples)))
        for s in samples:
            fh.write(np.ascontiguousarray(s.data, dtype="<f4").tobytes())


def load_samples(path) -> np.ndarray:
    """Read a sample file back as one (count, S, S, 3) float64 array."""
    with open(path, "rb") as fh:
        head = fh.read(_SAMPLE_HEADER.size)
        if len(head) != _SAMPLE_HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, size, count = _SAMPLE_HEADER.unpack(head)
        if magic != _SAMPLE_MAGIC:
            raise DataError(f"{path}: not a sample file")
        if version != _SAMPLE_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        payload = fh.read()
    want = count * size * size * 3
    if len(payload) != want * 4:
        raise DataError(f"{path}: expected {want * 4} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4")
    return data.reshape(count, size, size, 3).astype(np.float64)
