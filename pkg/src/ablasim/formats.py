"""Binary voxel formats and exports.

`.gsmask`: header b"GSMASK1", dims (3 x uint32 LE), spacing (float64 LE),
origin (3 x float64 LE), then the flattened C-order mask bit-packed
(np.packbits, most significant bit first).

`.gsfld`: header b"GSFLD1", component count (uint32 LE; 1 real, 2 complex
stored interleaved re/im), a 32-byte NUL-padded quantity tag, dims, spacing
and origin as above, then float64 LE values in C order.

Both formats are byte-stable: writing the same data twice gives identical
files. An ASCII VTK structured-points export is provided for visualization.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .domain import DomainError
from .grid import ScalarField, VoxelGrid

MASK_MAGIC = b"GSMASK1"
FIELD_MAGIC = b"GSFLD1"

_MASK_HEADER = struct.Struct("<7s3Id3d")
_FIELD_HEADER = struct.Struct("<6sI32s3Id3d")


class FormatError(DomainError):
    pass


def write_mask(path: Union[str, Path], mask: np.ndarray, grid: VoxelGrid) -> None:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.dims:
        raise FormatError(f"mask shape {mask.shape} != grid dims {grid.dims}")
    header = _MASK_HEADER.pack(MASK_MAGIC, *grid.dims, grid.spacing, *grid.origin)
    packed = np.packbits(mask.reshape(-1))
    Path(path).write_bytes(header + packed.tobytes())


def read_mask(path: Union[str, Path]) -> tuple[np.ndarray, VoxelGrid]:
    blob = Path(path).read_bytes()
    if len(blob) < _MASK_HEADER.size or not blob.startswith(MASK_MAGIC):
        raise FormatError(f"{path}: not a GSMASK1 file")
    magic, nx, ny, nz, spacing, ox, oy, oz = _MASK_HEADER.unpack_from(blob)
    grid = VoxelGrid(dims=(nx, ny, nz), spacing=spacing, origin=(ox, oy, oz))
    count = nx * ny * nz
    expected = (count + 7) // 8
    payload = blob[_MASK_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=count)
    return bits.astype(bool).reshape((nx, ny, nz)), grid


def write_field(path: Union[str, Path], field: ScalarField) -> None:
    _write_field_values(path, field.values, field.grid, field.quantity)


def write_complex_field(
    path: Union[str, Path], values: np.ndarray, grid: VoxelGrid, quantity: str = ""
) -> None:
    values = np.asarray(values, dtype=np.complex128)
    interleaved = np.empty(values.shape + (2,), dtype=np.float64)
    interleaved[..., 0] = values.real
    interleaved[..., 1] = values.imag
    _write_field_values(path, interleaved, grid, quantity, ncomp=2)


def _write_field_values(path, values, grid, quantity, ncomp: int = 1) -> None:
    values = np.asarray(values, dtype=np.float64)
    base_shape = values.shape[:3] if ncomp == 2 else values.shape
    if base_shape != grid.dims:
        raise FormatError(f"field shape {base_shape} != grid dims {grid.dims}")
    tag = quantity.encode("ascii", "replace")[:32]
    header = _FIELD_HEADER.pack(
        FIELD_MAGIC, ncomp, tag, *grid.dims, grid.spacing, *grid.origin
    )
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_field(path: Union[str, Path]) -> tuple[np.ndarray, VoxelGrid, str]:
    """Returns (values, grid, quantity); complex fields come back complex."""
    blob = Path(path).read_bytes()
    if len(blob) < _FIELD_HEADER.size or not blob.startswith(FIELD_MAGIC):
        raise FormatError(f"{path}: not a GSFLD1 file")
    magic, ncomp, tag, nx, ny, nz, spacing, ox, oy, oz = _FIELD_HEADER.unpack_from(blob)
    if ncomp not in (1, 2):
        raise FormatError(f"{path}: bad component count {ncomp}")
    grid = VoxelGrid(dims=(nx, ny, nz), spacing=spacing, origin=(ox, oy, oz))
    count = nx * ny * nz * ncomp
    payload = blob[_FIELD_HEADER.size:]
    if len(payload) != count * 8:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {count * 8}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    quantity = tag.rstrip(b"\x00").decode("ascii", "replace")
    if ncomp == 2:
        shaped = flat.reshape((nx, ny, nz, 2))
        return shaped[..., 0] + 1j * shaped[..., 1], grid, quantity
    return flat.reshape((nx, ny, nz)).copy(), grid, quantity


def export_vtk(
    path: Union[str, Path], values: np.ndarray, grid: VoxelGrid, name: str = "field"
) -> None:
    """ASCII VTK structured points, for quick inspection in ParaView."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != grid.dims:
        raise FormatError(f"field shape {values.shape} != grid dims {grid.dims}")
    nx, ny, nz = grid.dims
    h = grid.spacing
    lines = [
        "# vtk DataFile Version 3.0",
        name,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} {nz}",
        f"ORIGIN {grid.origin[0]} {grid.origin[1]} {grid.origin[2]}",
        f"SPACING {h} {h} {h}",
        f"POINT_DATA {nx * ny * nz}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    # VTK structured points expect x fastest; our arrays are C-order (z fastest)
    flat = np.transpose(values, (2, 1, 0)).reshape(-1)
    lines.extend(repr(float(v)) for v in flat)
    Path(path).write_text("\n".join(lines) + "\n")
