"""RGB images: loading, saving, per-band reconstruction and synthetic stimuli."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import GeometryError, ImageIOError
from .grid import GridGeometry, ScalarField, check_same_geometry
from .io import atomic_write_bytes, atomic_write_text, sidecar_path
from .operators import GaussianParams, HeterogeneousOperator
from .orientation import rng_for
from .solver import SolveReport, SolverConfig, reconstruct

log = logging.getLogger(__name__)

SUPPORTED_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


@dataclass(frozen=True, eq=False)
class RgbImage:
    """Three bands on one grid.

    Loaded and synthetic images lie in ``[0, 1]``; reconstructions may leave
    that range, which :func:`save_image` resolves by clipping or rescaling.
    """

    geometry: GridGeometry
    bands: tuple[ScalarField, ScalarField, ScalarField]

    def __post_init__(self):
        bands = tuple(self.bands)
        if len(bands) != 3:
            raise GeometryError("an RGB image needs exactly three bands")
        check_same_geometry(self.geometry, *(b.geometry for b in bands))
        if not all(b.is_finite() for b in bands):
            raise ValueError("band values must be finite")
        object.__setattr__(self, "bands", bands)

    @classmethod
    def from_array(cls, array: np.ndarray, spacing: float = 1.0) -> "RgbImage":
        """From ``(h, w)`` grayscale or ``(h, w, 3)`` RGB values."""
        a = np.asarray(array, dtype=float)
        if a.ndim == 2:
            a = np.repeat(a[..., None], 3, axis=2)
        if a.ndim != 3 or a.shape[2] != 3:
            raise GeometryError(f"expected (h, w) or (h, w, 3) array, got {a.shape}")
        g = GridGeometry(a.shape[1], a.shape[0], spacing)
        return cls(g, tuple(ScalarField(g, a[..., k]) for k in range(3)))

    @classmethod
    def gray(cls, field: ScalarField) -> "RgbImage":
        return cls(field.geometry, (field, field, field))

    def to_array(self) -> np.ndarray:
        return np.stack([b.values for b in self.bands], axis=2)

    def in_unit_range(self) -> bool:
        a = self.to_array()
        return bool(a.min() >= 0.0 and a.max() <= 1.0)

    def is_gray(self) -> bool:
        r, g, b = (band.values for band in self.bands)
        return bool(np.array_equal(r, g) and np.array_equal(g, b))


def load_image(path) -> RgbImage:
    """Read an 8/16-bit PNG or binary PPM/PGM into ``[0, 1]`` bands with unit spacing."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageIOError(f"unsupported image format {path.suffix!r}; use PNG, PPM or PGM")
    if not path.is_file():
        raise ImageIOError(f"no such image: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"cannot decode {path} as {path.suffix[1:].upper()}")
    if raw.dtype == np.uint8:
        full = 255.0
    elif raw.dtype == np.uint16:
        full = 65535.0
    else:
        raise ImageIOError(f"{path}: unsupported sample type {raw.dtype}, need 8 or 16 bit")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[..., :3]
        raw = raw[..., ::-1]  # BGR -> RGB
    return RgbImage.from_array(raw.astype(float) / full)


def save_image(img: RgbImage, path, clip: bool = True, bit_depth: int = 8) -> Path:
    """Quantise and write ``img``; the value-to-pixel map is logged and kept in a sidecar.

    ``clip`` clamps to ``[0, 1]``. Otherwise one affine map, shared by all
    bands so hue relations survive, stretches the image's range onto the
    full pixel range. PGM output requires a gray image.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise ImageIOError(f"unsupported image format {path.suffix!r}")
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    a = img.to_array()
    if clip:
        offset, scale = 0.0, 1.0
        a = np.clip(a, 0.0, 1.0)
    else:
        lo, hi = float(a.min()), float(a.max())
        offset, scale = lo, (hi - lo) if hi > lo else 1.0
        a = (a - offset) / scale
    full = 255 if bit_depth == 8 else 65535
    q = np.rint(a * full).clip(0, full).astype(np.uint8 if bit_depth == 8 else np.uint16)
    if suffix == ".pgm":
        if not img.is_gray():
            raise ImageIOError("PGM holds one band; the image is not gray")
        out = q[..., 0]
    else:
        out = q[..., ::-1]  # RGB -> BGR
    ok, buf = cv2.imencode(suffix, np.ascontiguousarray(out))
    if not ok:
        raise ImageIOError(f"cannot encode {path}")
    atomic_write_bytes(path, buf.tobytes())
    mode = "clip" if clip else "rescale"
    log.info("saved %s (%s): pixel = %d * (value - %r) / %r", path, mode, full, offset, scale)
    atomic_write_text(
        sidecar_path(path),
        f"mode = {mode}\noffset = {offset!r}\nscale = {scale!r}\nbit_depth = {bit_depth}\n",
    )
    return path


def reconstruct_bands(
    op: HeterogeneousOperator,
    img: RgbImage,
    g: GaussianParams,
    config: SolverConfig,
    workers: int = 3,
) -> list[SolveReport]:
    """Independent reconstructions of the three bands with the same operator."""
    check_same_geometry(op.geometry, img.geometry)
    if workers > 1:
        with ThreadPoolExecutor(min(workers, 3)) as pool:
            return list(pool.map(lambda band: reconstruct(op, band, g, config), img.bands))
    return [reconstruct(op, band, g, config) for band in img.bands]


def reconstruct_rgb(
    op: HeterogeneousOperator,
    img: RgbImage,
    g: GaussianParams,
    config: SolverConfig,
    workers: int = 3,
) -> RgbImage:
    reports = reconstruct_bands(op, img, g, config, workers)
    return RgbImage(img.geometry, tuple(r.solution for r in reports))


def make_simultaneous_contrast(
    geometry: GridGeometry, strip_height_fraction: float = 1 / 3, strip_gray: float = 0.5
) -> RgbImage:
    """Left-to-right ramp from 0 to 1 with a centred horizontal strip of constant gray."""
    if not 0.0 < strip_height_fraction < 1.0:
        raise ValueError("strip_height_fraction must lie in (0, 1)")
    if not 0.0 <= strip_gray <= 1.0:
        raise ValueError("strip_gray must lie in [0, 1]")
    h, w = geometry.shape
    rows = round(strip_height_fraction * h)
    top = (h - rows) // 2
    v = np.tile(np.linspace(0.0, 1.0, w), (h, 1))
    v[top: top + rows, :] = strip_gray
    return RgbImage.gray(ScalarField(geometry, v))


def strip_rows(geometry: GridGeometry, strip_height_fraction: float = 1 / 3) -> slice:
    """Row range occupied by the strip of :func:`make_simultaneous_contrast`."""
    rows = round(strip_height_fraction * geometry.height)
    top = (geometry.height - rows) // 2
    return slice(top, top + rows)


def make_banded(geometry: GridGeometry, seed: int, band_height: int = 4, ramp: float = 0.3) -> RgbImage:
    """Horizontal bands of random gray over a faint left-to-right ramp.

    Row means vary strongly from band to band, which exposes operators that
    decouple the rows.
    """
    if band_height < 1:
        raise ValueError("band_height must be >= 1")
    h, w = geometry.shape
    n_bands = -(-h // band_height)
    levels = rng_for(seed).uniform(0.0, 1.0 - ramp, size=n_bands)
    v = np.repeat(levels, band_height)[:h, None] + ramp * np.linspace(0.0, 1.0, w)[None, :]
    return RgbImage.gray(ScalarField(geometry, v))


def make_smooth(geometry: GridGeometry) -> RgbImage:
    """A smooth gray pattern; the standard stimulus for inversion checks."""
    x1, x2 = geometry.coordinates()
    w = geometry.width * geometry.spacing
    h = geometry.height * geometry.spacing
    v = 0.5 + 0.25 * np.sin(2 * np.pi * x1 / w) * np.cos(2 * np.pi * x2 / h) + 0.1 * np.cos(np.pi * x1 / w)
    return RgbImage.gray(ScalarField(geometry, v))


def make_mondrian(
    geometry: GridGeometry, seed: int, n_patches: int = 24, illumination: float = 0.5
) -> RgbImage:
    """Random coloured rectangles under a smooth left-to-right illumination falloff.

    ``illumination`` is the relative loss of light across the image; 0 means
    uniform lighting.
    """
    if not 0.0 <= illumination < 1.0:
        raise ValueError("illumination must lie in [0, 1)")
    rng = rng_for(seed)
    h, w = geometry.shape
    reflect = np.empty((h, w, 3))
    reflect[:] = rng.uniform(0.2, 0.9, size=3)
    for _ in range(n_patches):
        x0, y0 = rng.integers(0, w), rng.integers(0, h)
        dx, dy = rng.integers(w // 8 + 1, w // 3 + 2), rng.integers(h // 8 + 1, h // 3 + 2)
        reflect[y0: y0 + dy, x0: x0 + dx] = rng.uniform(0.1, 1.0, size=3)
    light = 1.0 - illumination * np.linspace(0.0, 1.0, w)[None, :, None]
    return RgbImage.from_array(reflect * light, geometry.spacing)


def make_checker(geometry: GridGeometry, square: int = 8) -> RgbImage:
    jj, ii = np.indices(geometry.shape)
    v = np.where(((ii // square) + (jj // square)) % 2 == 0, 0.25, 0.75)
    return RgbImage.gray(ScalarField(geometry, v))


TEST_IMAGES = ("simultaneous_contrast", "banded", "smooth", "mondrian", "checker")


def make_test_image(kind: str, geometry: GridGeometry, seed: int = 0, **params) -> RgbImage:
    if kind == "simultaneous_contrast":
        return make_simultaneous_contrast(geometry, **params)
    if kind == "banded":
        return make_banded(geometry, seed, **params)
    if kind == "smooth":
        return make_smooth(geometry)
    if kind == "mondrian":
        return make_mondrian(geometry, seed, **params)
    if kind == "checker":
        return make_checker(geometry, **params)
    raise ValueError(f"unknown test image {kind!r}; expected one of {TEST_IMAGES}")


def row_offset_spread(result: ScalarField, reference: ScalarField) -> float:
    """Standard deviation over rows of ``mean(result row) - mean(reference row)``."""
    check_same_geometry(result.geometry, reference.geometry)
    return float(np.std(result.values.mean(axis=1) - reference.values.mean(axis=1)))
