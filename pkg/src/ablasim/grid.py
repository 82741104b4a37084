"""Uniform Cartesian voxel grids, scalar fields, phantoms and rasterization.

Voxel (i, j, k) occupies the cube [origin + idx*h, origin + (idx+1)*h) along
each axis; its centre sits at origin + (idx + 0.5)*h. All per-voxel
operations are deterministic: identical inputs give bitwise-equal arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .domain import DomainError, PhantomShape

Point = tuple[float, float, float]


class GridError(DomainError):
    pass


@dataclass(frozen=True)
class VoxelGrid:
    dims: tuple[int, int, int]
    spacing: float  # isotropic, metres
    origin: Point = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if any(int(d) < 2 for d in self.dims):
            raise GridError("grid dims must be >= 2 along each axis")
        if self.spacing <= 0:
            raise GridError("grid spacing must be positive")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def voxel_volume(self) -> float:
        return self.spacing ** 3

    def centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Voxel-centre coordinate arrays (broadcastable, open grid)."""
        axes = [
            self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.spacing
            for a in range(3)
        ]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def contains_point(self, p: Sequence[float]) -> bool:
        return all(
            self.origin[a] <= p[a] <= self.origin[a] + self.dims[a] * self.spacing
            for a in range(3)
        )

    def voxel_of(self, p: Sequence[float]) -> tuple[int, int, int]:
        """Voxel index containing a world point (clamped to the grid)."""
        idx = []
        for a in range(3):
            i = int(math.floor((p[a] - self.origin[a]) / self.spacing))
            idx.append(min(max(i, 0), self.dims[a] - 1))
        return tuple(idx)

    def center_of(self, voxel: Sequence[int]) -> Point:
        return tuple(
            self.origin[a] + (voxel[a] + 0.5) * self.spacing for a in range(3)
        )


@dataclass
class ScalarField:
    grid: VoxelGrid
    values: np.ndarray
    quantity: str = ""  # e.g. "temperature", "death_fraction", "potential"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.dims:
            raise GridError(
                f"field shape {self.values.shape} != grid dims {self.grid.dims}"
            )

    @classmethod
    def full(cls, grid: VoxelGrid, value: float, quantity: str = "") -> "ScalarField":
        return cls(grid, np.full(grid.dims, float(value)), quantity)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.quantity)


@dataclass
class RegionLabels:
    """Small-int region labels: 0 background, 1 organ, >= 2 further regions."""

    grid: VoxelGrid
    labels: np.ndarray
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.shape != self.grid.dims:
            raise GridError(
                f"labels shape {self.labels.shape} != grid dims {self.grid.dims}"
            )

    def mask_of(self, labels: Iterable[int]) -> np.ndarray:
        return np.isin(self.labels, np.asarray(sorted(set(labels)), dtype=np.int32))


def _shape_mask(shape: PhantomShape, grid: VoxelGrid) -> np.ndarray:
    x, y, z = grid.centers()
    if shape.kind == "sphere":
        cx, cy, cz = shape.centre
        r2 = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2
        return r2 <= shape.radius ** 2
    if shape.kind == "box":
        lo, hi = shape.minimum, shape.maximum
        return (
            (x >= lo[0]) & (x <= hi[0])
            & (y >= lo[1]) & (y <= hi[1])
            & (z >= lo[2]) & (z <= hi[2])
        )
    # cylinder: distance from the start-end segment's infinite axis, clipped
    # to the segment extent
    p0 = np.asarray(shape.start)
    p1 = np.asarray(shape.end)
    axis = p1 - p0
    length2 = float(axis @ axis)
    if length2 == 0.0:
        raise GridError("cylinder start and end coincide")
    dx, dy, dz = x - p0[0], y - p0[1], z - p0[2]
    t = (dx * axis[0] + dy * axis[1] + dz * axis[2]) / length2
    px = p0[0] + t * axis[0]
    py = p0[1] + t * axis[1]
    pz = p0[2] + t * axis[2]
    r2 = (x - px) ** 2 + (y - py) ** 2 + (z - pz) ** 2
    return (t >= 0.0) & (t <= 1.0) & (r2 <= shape.radius ** 2)


def build_phantom(
    regions: Sequence[tuple[str, PhantomShape]], grid: VoxelGrid
) -> RegionLabels:
    """Rasterize analytic region shapes into labels, document order.

    Region i (1-based) gets label i; later regions overwrite earlier ones at
    overlaps. A shape that covers no voxel adds a warning instead of failing.
    """
    labels = np.zeros(grid.dims, dtype=np.int32)
    warnings = []
    for idx, (name, shape) in enumerate(regions, start=1):
        mask = _shape_mask(shape, grid)
        if not mask.any():
            warnings.append(f"region {name!r} covers no voxels")
            continue
        labels[mask] = idx
    return RegionLabels(grid=grid, labels=labels, warnings=tuple(warnings))


@dataclass
class NeedleRaster:
    """Voxelized needle: shaft voxels, tine tips, electrode surface voxels."""

    shaft: np.ndarray  # boolean mask
    tip: Point
    entry: Point
    tine_tips: tuple[Point, ...] = ()
    electrode: Optional[np.ndarray] = None  # boolean mask (IRE active surface)


def _segment_distance2(grid: VoxelGrid, p0: np.ndarray, p1: np.ndarray):
    """Squared distance from each voxel centre to the p0-p1 segment, plus the
    per-voxel projection parameter t in [0, 1]."""
    x, y, z = grid.centers()
    axis = p1 - p0
    length2 = float(axis @ axis)
    dx, dy, dz = x - p0[0], y - p0[1], z - p0[2]
    t = np.clip((dx * axis[0] + dy * axis[1] + dz * axis[2]) / length2, 0.0, 1.0)
    qx = p0[0] + t * axis[0] - x
    qy = p0[1] + t * axis[1] - y
    qz = p0[2] + t * axis[2] - z
    return qx * qx + qy * qy + qz * qz, t


TINE_HALF_ANGLE_DEG = 60.0


def tine_tip_points(
    tip: Point,
    entry: Point,
    tine_count: int,
    max_extension: float,
    extension_fraction: float,
    half_angle_deg: float = TINE_HALF_ANGLE_DEG,
) -> tuple[Point, ...]:
    """Tine tips on a cone around the shaft axis beyond the needle tip.

    The cone half-angle defaults to 60 degrees; tips sit at distance
    extension_fraction * max_extension from the needle tip, spread evenly in
    azimuth. Zero extension collapses every tip onto the needle tip.
    """
    if tine_count < 1:
        raise GridError("tine_count must be >= 1")
    length = float(extension_fraction) * float(max_extension)
    if length == 0.0:
        return tuple((float(tip[0]), float(tip[1]), float(tip[2]))
                     for _ in range(tine_count))
    axis = np.asarray(tip, dtype=float) - np.asarray(entry, dtype=float)
    norm = float(np.linalg.norm(axis))
    if norm == 0.0:
        raise GridError("needle tip and entry coincide")
    axis /= norm
    # an arbitrary-but-deterministic basis perpendicular to the axis
    helper = np.array([1.0, 0.0, 0.0])
    if abs(float(axis @ helper)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    alpha = math.radians(half_angle_deg)
    tips = []
    centre = np.asarray(tip, dtype=float)
    for i in range(tine_count):
        theta = 2.0 * math.pi * i / tine_count
        direction = (
            math.cos(alpha) * axis
            + math.sin(alpha) * (math.cos(theta) * u + math.sin(theta) * v)
        )
        tips.append(tuple(centre + length * direction))
    return tuple(tips)


def rasterize_needle(
    tip: Point,
    entry: Point,
    geometry: str,
    grid: VoxelGrid,
    shaft_radius: float,
    active_length: float = 0.0,
    tine_count: int = 0,
    max_tine_extension: float = 0.0,
    extension_fraction: float = 0.0,
) -> NeedleRaster:
    """Voxelize a placed needle.

    Shaft voxels lie within shaft_radius of the tip-entry segment. For
    extensible_tines geometry, tine tips are placed on the standard cone.
    The electrode mask (for IRE) covers shaft voxels within active_length of
    the tip along the shaft.
    """
    tip_v = np.asarray(tip, dtype=float)
    entry_v = np.asarray(entry, dtype=float)
    if np.array_equal(tip_v, entry_v):
        raise GridError("needle tip and entry coincide")
    if not grid.contains_point(tip) or not grid.contains_point(entry):
        raise GridError("needle tip/entry outside grid bounds")

    d2, t = _segment_distance2(grid, entry_v, tip_v)
    shaft = d2 <= shaft_radius ** 2
    if not shaft.any():
        # a very thin needle still occupies the voxels its segment passes
        # through; fall back to marking the tip voxel
        shaft = np.zeros(grid.dims, dtype=bool)
        shaft[grid.voxel_of(tip)] = True

    electrode = None
    length = float(np.linalg.norm(tip_v - entry_v))
    if active_length > 0.0:
        along_from_tip = (1.0 - t) * length
        electrode = shaft & (along_from_tip <= active_length)
        if not electrode.any():
            electrode = np.zeros(grid.dims, dtype=bool)
            electrode[grid.voxel_of(tip)] = True

    tine_tips: tuple[Point, ...] = ()
    if geometry == "extensible_tines":
        tine_tips = tine_tip_points(
            tip, entry, tine_count, max_tine_extension, extension_fraction
        )
        for p in tine_tips:
            if not grid.contains_point(p):
                raise GridError(f"tine tip {p} outside grid bounds")

    return NeedleRaster(
        shaft=shaft,
        tip=tuple(float(c) for c in tip),
        entry=tuple(float(c) for c in entry),
        tine_tips=tine_tips,
        electrode=electrode,
    )


def isovolume(
    field: ScalarField,
    threshold: float,
    direction: str = "ge",
    restrict_to: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Boolean mask where the comparison holds, optionally ANDed with a
    restriction mask (e.g. the organ region)."""
    values = field.values
    if not np.isfinite(values).all():
        raise GridError("isovolume requires a finite field")
    if direction in ("ge", ">="):
        mask = values >= threshold
    elif direction in ("le", "<="):
        mask = values <= threshold
    elif direction in ("lt", "<"):
        mask = values < threshold
    elif direction in ("gt", ">"):
        mask = values > threshold
    else:
        raise GridError(f"unknown direction {direction!r}")
    if restrict_to is not None:
        mask = mask & restrict_to
    return mask


def surface_points(mask: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    """World coordinates of centres of masked voxels on the 6-connected
    boundary; the grid boundary counts as unmasked. Raises on empty masks."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise GridError("empty surface")
    interior = np.zeros(mask.shape, dtype=bool)
    interior[1:-1, 1:-1, 1:-1] = (
        mask[1:-1, 1:-1, 1:-1]
        & mask[:-2, 1:-1, 1:-1] & mask[2:, 1:-1, 1:-1]
        & mask[1:-1, :-2, 1:-1] & mask[1:-1, 2:, 1:-1]
        & mask[1:-1, 1:-1, :-2] & mask[1:-1, 1:-1, 2:]
    )
    boundary = mask & ~interior
    idx = np.argwhere(boundary)
    return grid.origin + (idx + 0.5) * grid.spacing
