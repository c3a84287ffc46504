import math

import numpy as np
import pytest

from cortical.errors import ImageIOError
from cortical.grid import GridGeometry, ScalarField
from cortical.io import (
    atomic_write_text,
    orientation_rgb,
    read_field_csv,
    read_field_png16,
    read_sidecar,
    sidecar_path,
    write_field_csv,
    write_field_png16,
    write_orientation_csv,
    write_orientation_png,
)
from cortical.orientation import OrientationMap, constant_map


def test_field_csv_round_trip_is_exact(tmp_path):
    g = GridGeometry(5, 4, 0.5)
    f = ScalarField(g, np.random.default_rng(0).normal(size=g.shape) * 1e-3 + math.pi)
    path = write_field_csv(f, tmp_path / "f.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 4 and len(lines[0].split(",")) == 5
    back = read_field_csv(path, spacing=0.5)
    assert back.geometry == g
    assert np.array_equal(back.values, f.values)


def test_png16_round_trip(tmp_path):
    g = GridGeometry(6, 5, 0.25)
    f = ScalarField(g, np.random.default_rng(1).normal(size=g.shape))
    path = write_field_png16(f, tmp_path / "f.png")
    assert sidecar_path(path).name == "f.png.txt"
    meta = read_sidecar(path)
    assert meta["mode"] == "minmax"
    back = read_field_png16(path)
    assert back.geometry == g
    span = f.values.max() - f.values.min()
    np.testing.assert_allclose(back.values, f.values, atol=span / 65535)


def test_png16_errors(tmp_path):
    f = ScalarField(GridGeometry(3, 3), np.ones((3, 3)))
    path = write_field_png16(f, tmp_path / "flat.png")
    assert np.all(read_field_png16(path).values == 1.0)
    sidecar_path(path).unlink()
    with pytest.raises(ImageIOError):
        read_field_png16(path)
    with pytest.raises(ImageIOError):
        read_field_png16(tmp_path / "none.png")


def test_unwritable_target(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ImageIOError):
        atomic_write_text(blocker / "inside.txt", "data")
    with pytest.raises(ImageIOError):
        read_field_csv(tmp_path / "missing.csv")


def test_atomic_write_leaves_no_temporaries(tmp_path):
    atomic_write_text(tmp_path / "sub" / "a.txt", "one")
    atomic_write_text(tmp_path / "sub" / "a.txt", "two")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]
    assert (tmp_path / "sub" / "a.txt").read_text() == "two"


def test_orientation_colours(tmp_path):
    g = GridGeometry(3, 3)
    assert orientation_rgb(constant_map(g, 0.0))[0, 0].tolist() == [255, 0, 0]
    assert orientation_rgb(constant_map(g, math.pi / 2))[0, 0].tolist() == [0, 255, 255]
    theta = np.array([[0.0, math.pi / 3, 2 * math.pi / 3]] * 3)
    rgb = orientation_rgb(OrientationMap(g, theta))
    assert rgb[0].tolist() == [[255, 0, 0], [0, 255, 0], [0, 0, 255]]
    png = write_orientation_png(OrientationMap(g, theta), tmp_path / "o.png")
    assert png.stat().st_size > 0
    csv = write_orientation_csv(OrientationMap(g, theta), tmp_path / "o.csv")
    assert np.array_equal(np.loadtxt(csv, delimiter=","), theta)
