"""Binary mask/field formats: round trips, headers, byte stability."""

import numpy as np
import pytest

from ablasim.formats import (
    FIELD_MAGIC,
    FormatError,
    MASK_MAGIC,
    export_vtk,
    read_field,
    read_mask,
    write_complex_field,
    write_field,
    write_mask,
)
from ablasim.grid import ScalarField, VoxelGrid

GRID = VoxelGrid(dims=(12, 10, 8), spacing=0.002, origin=(0.1, -0.2, 0.3))


def test_mask_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    mask = rng.random(GRID.dims) > 0.5
    path = tmp_path / "m.gsmask"
    write_mask(path, mask, GRID)
    loaded, grid = read_mask(path)
    assert np.array_equal(loaded, mask)
    assert grid == GRID
    assert path.read_bytes().startswith(MASK_MAGIC)


def test_mask_byte_stable(tmp_path):
    mask = np.zeros(GRID.dims, dtype=bool)
    mask[3:6, 2:4, 1:7] = True
    a = tmp_path / "a.gsmask"
    b = tmp_path / "b.gsmask"
    write_mask(a, mask, GRID)
    write_mask(b, mask, GRID)
    assert a.read_bytes() == b.read_bytes()


def test_mask_rejects_bad_payload(tmp_path):
    path = tmp_path / "bad.gsmask"
    path.write_bytes(b"GSMASK1" + b"\x00" * 10)
    with pytest.raises(FormatError):
        read_mask(path)
    path.write_bytes(b"NOTAMSK" + b"\x00" * 100)
    with pytest.raises(FormatError):
        read_mask(path)


def test_field_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    field = ScalarField(GRID, rng.normal(size=GRID.dims), "temperature")
    path = tmp_path / "t.gsfld"
    write_field(path, field)
    values, grid, quantity = read_field(path)
    assert np.array_equal(values, field.values)
    assert grid == GRID
    assert quantity == "temperature"
    assert path.read_bytes().startswith(FIELD_MAGIC)


def test_complex_field_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    values = rng.normal(size=GRID.dims) + 1j * rng.normal(size=GRID.dims)
    path = tmp_path / "h.gsfld"
    write_complex_field(path, values, GRID, "magnetic")
    loaded, grid, quantity = read_field(path)
    assert np.array_equal(loaded, values)
    assert quantity == "magnetic"


def test_shape_mismatch_rejected(tmp_path):
    with pytest.raises(FormatError):
        write_mask(tmp_path / "x.gsmask", np.zeros((2, 2, 2), dtype=bool), GRID)


def test_vtk_export_shape(tmp_path):
    field = ScalarField.full(VoxelGrid((3, 4, 5), 1.0), 2.5, "x")
    path = tmp_path / "f.vtk"
    export_vtk(path, field.values, field.grid, "x")
    text = path.read_text().splitlines()
    assert text[4] == "DIMENSIONS 3 4 5"
    assert len([l for l in text if l == "2.5"]) == 3 * 4 * 5
