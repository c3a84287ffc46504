"""Plain-text and PNG serialisation of fields, orientation maps, traces and contours.

Every writer goes through :func:`atomic_write_bytes`, so a crash never leaves
a half-written file behind.
"""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

from .errors import ImageIOError
from .grid import GridGeometry, ScalarField
from .orientation import OrientationMap


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _csv_rows(values: np.ndarray) -> str:
    buf = io.StringIO()
    np.savetxt(buf, values, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def write_field_csv(field: ScalarField, path) -> Path:
    """One line per grid row, x1 along the line."""
    return atomic_write_text(path, _csv_rows(field.values))


def read_field_csv(path, spacing: float = 1.0) -> ScalarField:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read field CSV {path}: {exc}") from exc
    h, w = values.shape
    return ScalarField(GridGeometry(w, h, spacing), values)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".txt")


def _encode_png(array: np.ndarray, path: Path) -> bytes:
    ok, buf = cv2.imencode(path.suffix or ".png", array)
    if not ok:
        raise ImageIOError(f"cannot encode image for {path}")
    return buf.tobytes()


def write_field_png16(field: ScalarField, path) -> Path:
    """16-bit grayscale PNG, min-max scaled; the affine map goes to a sidecar.

    Pixel ``q`` decodes as ``value = offset + scale * q``.
    """
    path = Path(path)
    v = field.values
    lo, hi = float(v.min()), float(v.max())
    scale = (hi - lo) / 65535.0 if hi > lo else 1.0
    q = np.rint((v - lo) / scale).clip(0, 65535).astype(np.uint16)
    atomic_write_bytes(path, _encode_png(q, path))
    atomic_write_text(
        sidecar_path(path),
        f"mode = minmax\noffset = {lo!r}\nscale = {scale!r}\nspacing = {field.geometry.spacing!r}\n",
    )
    return path


def read_sidecar(path) -> dict[str, str]:
    out = {}
    try:
        text = sidecar_path(path).read_text()
    except OSError as exc:
        raise ImageIOError(f"missing sidecar for {path}: {exc}") from exc
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key.strip()] = value.strip()
    return out


def read_field_png16(path) -> ScalarField:
    q = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if q is None or q.dtype != np.uint16 or q.ndim != 2:
        raise ImageIOError(f"{path} is not a 16-bit grayscale PNG")
    meta = read_sidecar(path)
    values = float(meta["offset"]) + float(meta["scale"]) * q.astype(float)
    h, w = values.shape
    return ScalarField(GridGeometry(w, h, float(meta.get("spacing", 1.0))), values)


def write_orientation_csv(omap: OrientationMap, path) -> Path:
    return atomic_write_text(path, _csv_rows(omap.theta))


def orientation_rgb(omap: OrientationMap) -> np.ndarray:
    """8-bit RGB rendering with hue ``2 theta`` at full saturation and value."""
    hsv = np.zeros(omap.theta.shape + (3,), dtype=np.float32)
    hsv[..., 0] = np.degrees(2.0 * omap.theta)
    hsv[..., 1] = 1.0
    hsv[..., 2] = 1.0
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    return np.rint(rgb * 255.0).clip(0, 255).astype(np.uint8)


def write_orientation_png(omap: OrientationMap, path) -> Path:
    path = Path(path)
    bgr = cv2.cvtColor(orientation_rgb(omap), cv2.COLOR_RGB2BGR)
    return atomic_write_bytes(path, _encode_png(bgr, path))


def write_trace_csv(values: Iterable[float], path, start: int = 0) -> Path:
    """``iteration,value`` rows, numbering from ``start``."""
    lines = ["iteration,value"]
    lines += [f"{k},{float(v)!r}" for k, v in enumerate(values, start)]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_contours_csv(contours: Sequence[tuple[float, np.ndarray]], path) -> Path:
    """One row per vertex: ``contour,level,x,y``."""
    lines = ["contour,level,x,y"]
    for k, (level, poly) in enumerate(contours):
        lines += [f"{k},{level!r},{float(x)!r},{float(y)!r}" for x, y in poly]
    return atomic_write_text(path, "\n".join(lines) + "\n")

