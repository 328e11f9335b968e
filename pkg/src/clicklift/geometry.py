"""Coordinate machinery: pinhole projection, rigid frame transforms, voxelization.

All geometry runs in double precision. Points are (N, 3) float arrays in
whatever frame the caller dictates; matrices are row-major numpy arrays.
Every function here is pure and safe to call concurrently.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError


@dataclass
class Calibration:
    """Ideal pinhole camera: 3x3 intrinsic, 4x4 extrinsic (point frame -> camera).

    The extrinsic maps homogeneous point coordinates into the camera frame
    (z forward, x right, y down); the intrinsic maps camera coordinates to
    pixels. No lens distortion.
    """

    intrinsic: np.ndarray
    extrinsic: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        self.intrinsic = np.asarray(self.intrinsic, dtype=np.float64).reshape(3, 3)
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64).reshape(4, 4)
        if self.image_width < 1 or self.image_height < 1:
            raise ConfigError(
                f"image size must be >= 1x1, got {self.image_width}x{self.image_height}"
            )
        if abs(np.linalg.det(self.intrinsic)) < 1e-12:
            raise ConfigError("intrinsic matrix is not invertible")
        if not np.allclose(self.extrinsic[3], (0.0, 0.0, 0.0, 1.0), atol=1e-9):
            raise ConfigError("extrinsic bottom row must be (0, 0, 0, 1)")


def validate_pose(pose: np.ndarray, name: str = "pose") -> np.ndarray:
    """Check a 4x4 rigid transform: orthonormal rotation, (0,0,0,1) bottom row."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise ConfigError(f"{name} must be 4x4, got {pose.shape}")
    if not np.allclose(pose[3], (0.0, 0.0, 0.0, 1.0), atol=1e-9):
        raise ConfigError(f"{name} bottom row must be (0, 0, 0, 1)")
    rot = pose[:3, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
        raise ConfigError(f"{name} rotation block is not orthonormal")
    return pose


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"points must be (N, 3), got {pts.shape}")
    if pts.size and not np.isfinite(pts).all():
        raise InputError("points contain non-finite coordinates")
    return pts


def project_points(points, calib: Calibration):
    """Project points through the calibrated pinhole camera.

    Returns (indices, pixels): ``indices`` are the positions of the points
    that survive the validity cut, ``pixels`` is the matching (M, 3) array of
    (u, v, z_c). A point is kept iff its camera depth z_c is strictly
    positive and (u, v) lands inside the half-open image rectangle
    [0, width) x [0, height).
    """
    pts = _as_points(points)
    n = len(pts)
    if n == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 3), dtype=np.float64)

    hom = np.hstack([pts, np.ones((n, 1))])
    cam = hom @ calib.extrinsic.T            # (N, 4) camera-frame coordinates
    proj = cam[:, :3] @ calib.intrinsic.T    # (N, 3) = (z_c*u, z_c*v, z_c)
    z_c = proj[:, 2]

    with np.errstate(divide="ignore", invalid="ignore"):
        u = proj[:, 0] / z_c
        v = proj[:, 1] / z_c

    keep = (
        (z_c > 0.0)
        & (u >= 0.0)
        & (u < calib.image_width)
        & (v >= 0.0)
        & (v < calib.image_height)
    )
    idx = np.nonzero(keep)[0]
    pixels = np.column_stack([u[idx], v[idx], z_c[idx]])
    return idx, pixels


def transform_frame(points, pose_adj: np.ndarray, pose_cur: np.ndarray) -> np.ndarray:
    """Re-express points given in the adjacent frame in the current frame.

    Applies inv(pose_cur) @ pose_adj to every point; both poses map their
    local frame into the shared world frame.
    """
    pts = _as_points(points)
    pose_adj = validate_pose(pose_adj, "pose_adj")
    pose_cur = validate_pose(pose_cur, "pose_cur")
    rel = np.linalg.solve(pose_cur, pose_adj)
    return pts @ rel[:3, :3].T + rel[:3, 3]


def voxel_indices(points, voxel_size: float) -> np.ndarray:
    """Floor-convention voxel index per point, as an (N, 3) int64 array."""
    if voxel_size <= 0:
        raise ConfigError(f"voxel size must be > 0, got {voxel_size}")
    pts = _as_points(points)
    return np.floor(pts / voxel_size).astype(np.int64)


@dataclass
class VoxelGrid:
    """Partition of point indices into floor-convention voxels."""

    voxel_size: float
    cells: dict = field(default_factory=dict)  # (ix, iy, iz) -> int64 index array


def voxelize(points, voxel_size: float) -> VoxelGrid:
    """Partition points into voxels of edge ``voxel_size``.

    Cell membership is a function of coordinates only, so the partition is
    independent of input order.
    """
    idx3 = voxel_indices(points, voxel_size)
    grid = VoxelGrid(voxel_size=voxel_size)
    if len(idx3) == 0:
        return grid
    order = np.lexsort((idx3[:, 2], idx3[:, 1], idx3[:, 0]))
    sorted_idx = idx3[order]
    boundaries = np.nonzero(np.any(np.diff(sorted_idx, axis=0), axis=1))[0] + 1
    for chunk in np.split(order, boundaries):
        key = tuple(int(c) for c in idx3[chunk[0]])
        grid.cells[key] = np.sort(chunk)
    return grid


def bev_centroid(points) -> tuple:
    """Arithmetic mean of (x, y); z is ignored."""
    pts = _as_points(points)
    if len(pts) == 0:
        raise InputError("bev_centroid needs at least one point")
    return float(pts[:, 0].mean()), float(pts[:, 1].mean())


def bev_distances(points, center_xy) -> np.ndarray:
    """Euclidean distance of each point's (x, y) to ``center_xy``."""
    pts = _as_points(points)
    cx, cy = center_xy
    return np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)


def point_ranges(points) -> np.ndarray:
    """Distance of each point from the frame origin."""
    pts = _as_points(points)
    return np.linalg.norm(pts, axis=1)


def make_pose(translation=(0.0, 0.0, 0.0), yaw: float = 0.0) -> np.ndarray:
    """Convenience constructor: yaw-about-z rotation plus translation."""
    c, s = np.cos(yaw), np.sin(yaw)
    pose = np.eye(4)
    pose[:3, :3] = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    pose[:3, 3] = translation
    return pose
