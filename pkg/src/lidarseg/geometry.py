"""Point clouds, range images, and the polar projection between them.

A range image is a rows x cols polar grid: rows index beam elevation (row 0
is the highest beam), columns index azimuth (bin 0 centered on the +x axis,
increasing counter-clockwise). Cell values are the range of the nearest point
that fell into the cell; cells with no return hold the NO_RETURN sentinel.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .labels import UNLABELED

NO_RETURN = 0.0  # sentinel range for cells without a laser return
NO_POINT = -1  # point_index value for empty cells

_LSEG_MAGIC = b"LSEG"
_LSEG_VERSION = 1
_LSEG_HEADER = struct.Struct("<4sHI")
_POINT_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("intensity", "<f4"),
        ("gt_label", "u1"),
    ]
)


@dataclass(frozen=True)
class LidarPoint:
    """A single return: position in the sensor frame (meters, z up),
    reflectance in [0, 1], and an optional ground-truth class id."""

    x: float
    y: float
    z: float
    intensity: float = 0.0
    gt_label: int = UNLABELED


@dataclass
class PointCloud:
    """One LiDAR frame as parallel arrays.

    xyz is (n, 3) float64 in the sensor frame, intensity is (n,) in [0, 1],
    gt_label is (n,) uint8 with UNLABELED where no ground truth exists.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    gt_label: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(self.xyz, dtype=np.float64)
        self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float64)
        self.gt_label = np.ascontiguousarray(self.gt_label, dtype=np.uint8)
        n = self.xyz.shape[0]
        if self.xyz.ndim != 2 or self.xyz.shape[1] != 3:
            raise ValueError("xyz must have shape (n, 3)")
        if self.intensity.shape != (n,) or self.gt_label.shape != (n,):
            raise ValueError("intensity and gt_label must have shape (n,)")
        if not np.isfinite(self.xyz).all():
            raise ValueError("coordinates must be finite")
        if n and (self.intensity.min() < 0.0 or self.intensity.max() > 1.0):
            raise ValueError("intensity must lie in [0, 1]")
        if self.frame_id < 0:
            raise ValueError("frame_id must be >= 0")

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def point(self, i: int) -> LidarPoint:
        return LidarPoint(
            float(self.xyz[i, 0]),
            float(self.xyz[i, 1]),
            float(self.xyz[i, 2]),
            float(self.intensity[i]),
            int(self.gt_label[i]),
        )

    @classmethod
    def from_points(cls, points, frame_id: int = 0) -> "PointCloud":
        pts = list(points)
        xyz = np.array([[p.x, p.y, p.z] for p in pts], dtype=np.float64).reshape(-1, 3)
        inten = np.array([p.intensity for p in pts], dtype=np.float64)
        gt = np.array([p.gt_label for p in pts], dtype=np.uint8)
        return cls(xyz, inten, gt, frame_id)


@dataclass(frozen=True)
class SensorModel:
    """Scanner geometry: beam count, azimuth resolution, elevation FOV.

    Defaults follow a 32-beam scanner with a [-30.67, +10.67] degree window.
    """

    n_rows: int = 32
    n_cols: int = 870
    elev_min_deg: float = -30.67
    elev_max_deg: float = 10.67
    max_range: float = 70.0

    def __post_init__(self):
        if self.n_rows < 2:
            raise ValueError("n_rows must be >= 2")
        if self.n_cols < 4:
            raise ValueError("n_cols must be >= 4")
        if not self.elev_min_deg < self.elev_max_deg:
            raise ValueError("elevation window must be nonempty")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")

    @property
    def row_height_deg(self) -> float:
        return (self.elev_max_deg - self.elev_min_deg) / self.n_rows

    @property
    def col_width_rad(self) -> float:
        return 2.0 * math.pi / self.n_cols

    def rows_for(self, elev_deg: np.ndarray) -> np.ndarray:
        """Row index per elevation; the lower FOV edge folds into the last row."""
        raw = np.floor((self.elev_max_deg - elev_deg) / self.row_height_deg)
        return np.clip(raw, 0, self.n_rows - 1).astype(np.int64)

    def cols_for(self, azimuth_rad: np.ndarray) -> np.ndarray:
        half = 0.5 * self.col_width_rad
        shifted = np.mod(azimuth_rad + half, 2.0 * math.pi)
        return (np.floor(shifted / self.col_width_rad).astype(np.int64)) % self.n_cols

    def row_center_rad(self, rows: np.ndarray) -> np.ndarray:
        deg = self.elev_max_deg - (np.asarray(rows) + 0.5) * self.row_height_deg
        return np.radians(deg)

    def col_center_rad(self, cols: np.ndarray) -> np.ndarray:
        return np.asarray(cols) * self.col_width_rad


@dataclass(frozen=True)
class ProjectionStats:
    """Bookkeeping for one projection; the four counts sum to the cloud size."""

    placed: int
    skipped_out_of_fov: int
    skipped_bad_range: int
    collision_losers: int

    @property
    def total(self) -> int:
        return (
            self.placed
            + self.skipped_out_of_fov
            + self.skipped_bad_range
            + self.collision_losers
        )


@dataclass
class RangeImage:
    """Polar-grid frame: per cell the nearest return's range, height (z),
    intensity, and a back-reference into the source cloud."""

    range_m: np.ndarray  # (rows, cols) float64, NO_RETURN where empty
    height_m: np.ndarray  # z of the chosen point
    intensity: np.ndarray
    point_index: np.ndarray  # int64, NO_POINT where empty
    frame_id: int = 0
    stats: ProjectionStats | None = None

    @property
    def n_rows(self) -> int:
        return self.range_m.shape[0]

    @property
    def n_cols(self) -> int:
        return self.range_m.shape[1]

    @property
    def occupancy(self) -> np.ndarray:
        return self.range_m > NO_RETURN


def project(cloud: PointCloud, model: SensorModel) -> RangeImage:
    """Bin every point into (elevation row, azimuth col); nearest return wins.

    Points outside the elevation window, at zero range, or beyond max_range
    are skipped and counted in the returned image's stats.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot project an empty cloud")
    xyz = cloud.xyz
    r = np.linalg.norm(xyz, axis=1)
    good_range = (r > 0.0) & (r <= model.max_range)
    horiz = np.hypot(xyz[:, 0], xyz[:, 1])
    # elevation is undefined at the origin; masked out by good_range anyway
    with np.errstate(invalid="ignore"):
        elev = np.degrees(np.arctan2(xyz[:, 2], horiz))
    in_fov = (elev >= model.elev_min_deg) & (elev <= model.elev_max_deg)
    keep = good_range & in_fov

    skipped_bad_range = int((~good_range).sum())
    skipped_fov = int((good_range & ~in_fov).sum())

    shape = (model.n_rows, model.n_cols)
    range_m = np.full(shape, NO_RETURN, dtype=np.float64)
    height_m = np.zeros(shape, dtype=np.float64)
    inten = np.zeros(shape, dtype=np.float64)
    point_index = np.full(shape, NO_POINT, dtype=np.int64)

    idx = np.nonzero(keep)[0]
    if idx.size:
        rows = model.rows_for(elev[idx])
        az = np.mod(np.arctan2(xyz[idx, 1], xyz[idx, 0]), 2.0 * math.pi)
        cols = model.cols_for(az)
        # write farthest first so the nearest return lands last; among exact
        # range ties the lowest point index wins
        order = np.lexsort((-idx, -r[idx]))
        ro, co, io = rows[order], cols[order], idx[order]
        range_m[ro, co] = r[io]
        height_m[ro, co] = xyz[io, 2]
        inten[ro, co] = cloud.intensity[io]
        point_index[ro, co] = io

    placed = int((point_index != NO_POINT).sum())
    stats = ProjectionStats(
        placed=placed,
        skipped_out_of_fov=skipped_fov,
        skipped_bad_range=skipped_bad_range,
        collision_losers=int(idx.size) - placed,
    )
    return RangeImage(range_m, height_m, inten, point_index, cloud.frame_id, stats)


def unproject(img: RangeImage, model: SensorModel) -> PointCloud:
    """Lift every occupied cell back to 3D at its bin-center direction.

    Projecting the result again reproduces the occupancy mask and ranges.
    """
    rows, cols = np.nonzero(img.occupancy)
    r = img.range_m[rows, cols]
    elev = model.row_center_rad(rows)
    az = model.col_center_rad(cols)
    ce = np.cos(elev)
    xyz = np.stack([r * ce * np.cos(az), r * ce * np.sin(az), r * np.sin(elev)], axis=1)
    inten = img.intensity[rows, cols]
    gt = np.full(rows.shape, UNLABELED, dtype=np.uint8)
    return PointCloud(xyz, inten, gt, img.frame_id)


def save_cloud(path, cloud: PointCloud) -> None:
    """Write the binary point format: LSEG magic, version, count, then
    per point little-endian float32 x, y, z, intensity and uint8 gt_label."""
    rec = np.empty(len(cloud), dtype=_POINT_DTYPE)
    rec["x"] = cloud.xyz[:, 0].astype(np.float32)
    rec["y"] = cloud.xyz[:, 1].astype(np.float32)
    rec["z"] = cloud.xyz[:, 2].astype(np.float32)
    rec["intensity"] = cloud.intensity.astype(np.float32)
    rec["gt_label"] = cloud.gt_label
    with open(path, "wb") as fh:
        fh.write(_LSEG_HEADER.pack(_LSEG_MAGIC, _LSEG_VERSION, len(cloud)))
        fh.write(rec.tobytes())


def load_cloud(path, frame_id: int = 0) -> PointCloud:
    with open(path, "rb") as fh:
        head = fh.read(_LSEG_HEADER.size)
        if len(head) != _LSEG_HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, count = _LSEG_HEADER.unpack(head)
        if magic != _LSEG_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != _LSEG_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        body = fh.read()
    if len(body) != count * _POINT_DTYPE.itemsize:
        raise DataError(f"{path}: expected {count} points, payload truncated")
    rec = np.frombuffer(body, dtype=_POINT_DTYPE)
    xyz = np.stack(
        [rec["x"].astype(np.float64), rec["y"].astype(np.float64), rec["z"].astype(np.float64)],
        axis=1,
    )
    return PointCloud(xyz, rec["intensity"].astype(np.float64), rec["gt_label"].copy(), frame_id)
