"""Lesion comparison: rigid surface registration and overlap measures.

The segmented (reference) lesion S is rigidly registered onto the simulated
lesion volume, then DICE, sensitivity, positive predictive value and the
average absolute surface error are computed by voxel counting and
nearest-surface-point distances. AAE is reported in millimetres.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .domain import DomainError
from .grid import GridError, VoxelGrid, surface_points


class MetricsError(DomainError):
    pass


@dataclass(frozen=True)
class RigidTransform:
    """x' = rotation @ x + translation (world coordinates, metres)."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation


def _kabsch(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rotation+translation mapping source onto target."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    h = (source - mu_s).T @ (target - mu_t)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    correction = np.diag([1.0, 1.0, d])
    rotation = vt.T @ correction @ u.T
    translation = mu_t - rotation @ mu_s
    return RigidTransform(rotation, translation)


MAX_ICP_ITERATIONS = 50
MSE_IMPROVEMENT_STOP = 1e-9  # m^2


def rigid_register(
    moving: np.ndarray, fixed: np.ndarray, grid: VoxelGrid
) -> RigidTransform:
    """Centroid shift then point-to-point ICP between lesion surfaces.

    Iterates nearest-neighbour correspondence and the least-squares rotation
    up to 50 times, stopping when the mean squared surface distance improves
    by less than 1e-9 m^2, and returns the best transform found. Raises on
    empty masks.
    """
    try:
        source = surface_points(np.asarray(moving, dtype=bool), grid)
        target = surface_points(np.asarray(fixed, dtype=bool), grid)
    except GridError as exc:
        raise MetricsError(str(exc)) from exc

    transform = RigidTransform(
        np.eye(3), target.mean(axis=0) - source.mean(axis=0)
    )
    tree = cKDTree(target)
    best = transform
    best_mse = math.inf
    previous_mse = math.inf
    for _ in range(MAX_ICP_ITERATIONS):
        projected = transform.apply(source)
        distances, indices = tree.query(projected)
        mse = float(np.mean(distances ** 2))
        if mse < best_mse:
            best, best_mse = transform, mse
        if previous_mse - mse < MSE_IMPROVEMENT_STOP:
            break
        previous_mse = mse
        transform = _kabsch(source, target[indices])
    return best


def transform_mask(
    mask: np.ndarray, grid: VoxelGrid, transform: RigidTransform
) -> np.ndarray:
    """Resample a mask under a rigid transform (nearest neighbour).

    Output voxel x is true when the pre-image of its centre falls inside a
    true voxel of the input.
    """
    mask = np.asarray(mask, dtype=bool)
    x, y, z = grid.centers()
    centers = np.stack(
        [np.broadcast_to(x, grid.dims), np.broadcast_to(y, grid.dims),
         np.broadcast_to(z, grid.dims)],
        axis=-1,
    ).reshape(-1, 3)
    pre = transform.inverse_apply(centers)
    idx = np.floor((pre - np.asarray(grid.origin)) / grid.spacing).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(grid.dims)), axis=1)
    out = np.zeros(mask.size, dtype=bool)
    safe = np.clip(idx, 0, np.asarray(grid.dims) - 1)
    out[inside] = mask[safe[inside, 0], safe[inside, 1], safe[inside, 2]]
    return out.reshape(grid.dims)


@dataclass(frozen=True)
class MetricsReport:
    dice: float
    sn: float
    ppv: float
    aae_mm: float
    moving_voxels: int
    fixed_voxels: int
    overlap_voxels: int
    transform: RigidTransform

    def csv_row(self) -> str:
        """DICE, SN, PPV, AAE columns, three decimals."""
        return f"{self.dice:.3f},{self.sn:.3f},{self.ppv:.3f},{self.aae_mm:.3f}"

    def to_json(self) -> str:
        return json.dumps(
            {
                "dice": self.dice,
                "sn": self.sn,
                "ppv": self.ppv,
                "aae_mm": self.aae_mm,
                "moving_voxels": self.moving_voxels,
                "fixed_voxels": self.fixed_voxels,
                "overlap_voxels": self.overlap_voxels,
                "rotation": self.transform.rotation.tolist(),
                "translation_m": self.transform.translation.tolist(),
            },
            indent=2,
            sort_keys=True,
        )


def overlap_metrics(
    moving: np.ndarray,
    fixed: np.ndarray,
    grid: VoxelGrid,
    transform: RigidTransform | None = None,
) -> MetricsReport:
    """DICE/SN/PPV by voxel counting plus the average nearest-surface
    distance from the (transformed) moving surface to the fixed surface.

    SN normalizes by the moving (reference) volume and PPV by the fixed
    (simulated) volume, so SN(S, Sigma) = PPV(Sigma, S) exactly.
    """
    if transform is None:
        transform = RigidTransform.identity()
    moving = np.asarray(moving, dtype=bool)
    fixed = np.asarray(fixed, dtype=bool)
    if not moving.any():
        raise MetricsError("empty moving mask")
    if not fixed.any():
        raise MetricsError("empty fixed mask")

    moved = transform_mask(moving, grid, transform)
    if not moved.any():
        raise MetricsError("transform moved the mask off the grid")
    n_moving = int(moved.sum())
    n_fixed = int(fixed.sum())
    n_overlap = int((moved & fixed).sum())
    dice = 2.0 * n_overlap / (n_moving + n_fixed)
    sn = n_overlap / n_moving
    ppv = n_overlap / n_fixed

    moving_surface = surface_points(moved, grid)
    fixed_surface = surface_points(fixed, grid)
    distances, _ = cKDTree(fixed_surface).query(moving_surface)
    aae_mm = float(np.mean(distances)) * 1000.0

    return MetricsReport(
        dice=dice,
        sn=sn,
        ppv=ppv,
        aae_mm=aae_mm,
        moving_voxels=n_moving,
        fixed_voxels=n_fixed,
        overlap_voxels=n_overlap,
        transform=transform,
    )


def compare_lesions(
    moving: np.ndarray,
    fixed: np.ndarray,
    grid: VoxelGrid,
    register: bool = True,
) -> MetricsReport:
    """Full comparison: optional rigid registration, then overlap metrics."""
    transform = (
        rigid_register(moving, fixed, grid) if register else RigidTransform.identity()
    )
    return overlap_metrics(moving, fixed, grid, transform)
