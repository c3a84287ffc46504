import cv2
import numpy as np
import pytest

from cortical.errors import GeometryError, ImageIOError
from cortical.grid import GridGeometry, ScalarField
from cortical.imaging import (
    TEST_IMAGES,
    RgbImage,
    load_image,
    make_banded,
    make_simultaneous_contrast,
    make_test_image,
    reconstruct_bands,
    reconstruct_rgb,
    row_offset_spread,
    save_image,
    strip_rows,
)
from cortical.io import read_sidecar
from cortical.operators import GaussianParams, homogeneous_laplacian
from cortical.solver import SolverConfig


def random_image(seed=0, shape=(6, 5)):
    return RgbImage.from_array(np.random.default_rng(seed).uniform(size=shape + (3,)))


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_rgb_round_trip_8bit(tmp_path, suffix):
    img = random_image()
    path = save_image(img, tmp_path / f"a{suffix}")
    back = load_image(path)
    assert back.geometry == img.geometry
    np.testing.assert_allclose(back.to_array(), img.to_array(), atol=0.5 / 255 + 1e-12)


def test_png_16bit_round_trip(tmp_path):
    img = random_image(1)
    back = load_image(save_image(img, tmp_path / "a.png", bit_depth=16))
    np.testing.assert_allclose(back.to_array(), img.to_array(), atol=0.5 / 65535 + 1e-12)


def test_pgm_round_trip_and_gray_requirement(tmp_path):
    gray = RgbImage.gray(ScalarField(GridGeometry(4, 3), np.linspace(0, 1, 12).reshape(3, 4)))
    back = load_image(save_image(gray, tmp_path / "g.pgm"))
    assert back.is_gray()
    np.testing.assert_allclose(back.bands[0].values, gray.bands[0].values, atol=0.5 / 255)
    with pytest.raises(ImageIOError):
        save_image(random_image(), tmp_path / "c.pgm")


def test_channel_order_preserved(tmp_path):
    a = np.zeros((3, 3, 3))
    a[..., 0] = 1.0  # pure red
    path = save_image(RgbImage.from_array(a), tmp_path / "red.png")
    raw = cv2.imread(str(path))
    assert raw[0, 0].tolist() == [0, 0, 255]  # stored as BGR
    assert load_image(path).to_array()[0, 0].tolist() == [1.0, 0.0, 0.0]


def test_clip_examples(tmp_path):
    a = np.tile([1.2, -0.1, 0.5], (3, 1))
    img = RgbImage.gray(ScalarField(GridGeometry(3, 3), a))
    path = save_image(img, tmp_path / "c.png")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    assert raw[0, :, 0].tolist() == [255, 0, 128]
    assert read_sidecar(path)["mode"] == "clip"


def test_rescale_writes_affine_map(tmp_path):
    a = np.tile([-1.0, 0.0, 3.0], (3, 1))
    path = save_image(RgbImage.gray(ScalarField(GridGeometry(3, 3), a)), tmp_path / "r.png", clip=False)
    meta = read_sidecar(path)
    assert meta["mode"] == "rescale"
    assert float(meta["offset"]) == -1.0 and float(meta["scale"]) == 4.0
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    assert raw[0, :, 0].tolist() == [0, 64, 255]


def test_unsupported_and_missing_files(tmp_path):
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "a.jpg")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "junk.png")
    with pytest.raises(ImageIOError):
        save_image(random_image(), tmp_path / "a.tif")
    with pytest.raises(ValueError):
        save_image(random_image(), tmp_path / "a.png", bit_depth=12)


def test_alpha_channel_dropped(tmp_path):
    rgba = np.zeros((3, 3, 4), np.uint8)
    rgba[..., 2] = 255  # red in BGRA
    rgba[..., 3] = 10
    cv2.imwrite(str(tmp_path / "a.png"), rgba)
    img = load_image(tmp_path / "a.png")
    assert img.to_array()[1, 1].tolist() == [1.0, 0.0, 0.0]


def test_rgb_image_checks():
    g = GridGeometry(3, 3)
    f = ScalarField(g, np.zeros((3, 3)))
    with pytest.raises(GeometryError):
        RgbImage(g, (f, f))
    with pytest.raises(GeometryError):
        RgbImage(g, (f, f, ScalarField(GridGeometry(3, 2), np.zeros((2, 3)))))
    with pytest.raises(GeometryError):
        RgbImage.from_array(np.zeros((3, 3, 2)))
    assert RgbImage.from_array(np.full((3, 3), 0.5)).is_gray()
    assert not RgbImage.from_array(np.full((3, 3, 3), 1.5)).in_unit_range()


def test_simultaneous_contrast_layout():
    g = GridGeometry(64, 99)
    img = make_simultaneous_contrast(g)
    v = img.bands[0].values
    rows = strip_rows(g)
    assert rows.stop - rows.start == 33
    assert np.all(v[rows] == 0.5)
    outside = np.ones(99, bool)
    outside[rows] = False
    assert np.all(v[outside, 0] == 0.0) and np.all(v[outside, -1] == 1.0)
    assert np.all(np.diff(v[0]) > 0)
    assert img.is_gray()
    with pytest.raises(ValueError):
        make_simultaneous_contrast(g, strip_height_fraction=1.0)


def test_banded_and_factory():
    g = GridGeometry(16, 20)
    a = make_banded(g, 3).bands[0].values
    assert np.array_equal(a, make_banded(g, 3).bands[0].values)
    assert np.all(np.diff(a, axis=1) > 0)
    for kind in TEST_IMAGES:
        img = make_test_image(kind, g, seed=1)
        assert img.geometry == g and img.in_unit_range()
    with pytest.raises(ValueError):
        make_test_image("noise", g)


def test_gray_bands_reconstruct_equally_and_permute():
    g = GridGeometry(12, 12)
    op = homogeneous_laplacian(g)
    cfg = SolverConfig(tolerance=1e-7)
    gp = GaussianParams(1.0)
    gray = make_test_image("smooth", g)
    out = reconstruct_rgb(op, gray, gp, cfg)
    assert out.is_gray()
    img = make_test_image("mondrian", g, seed=2)
    reports = reconstruct_bands(op, img, gp, cfg)
    perm = RgbImage(g, (img.bands[2], img.bands[0], img.bands[1]))
    swapped = reconstruct_bands(op, perm, gp, cfg, workers=1)
    for k, j in enumerate((2, 0, 1)):
        np.testing.assert_array_equal(swapped[k].solution.values, reports[j].solution.values)


def test_row_offset_spread():
    g = GridGeometry(4, 3)
    ref = ScalarField(g, np.zeros((3, 4)))
    shifted = ScalarField(g, np.array([[1.0] * 4, [-1.0] * 4, [0.0] * 4]))
    assert row_offset_spread(shifted, ref) == pytest.approx(np.std([1, -1, 0]))
    assert row_offset_spread(ref + 3.0, ref) == 0.0
