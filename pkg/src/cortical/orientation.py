"""Orientation-map generators.

All maps hold angles reduced into ``[0, pi)``: an orientation and its opposite
define the same directional operator. Randomness comes from numpy's PCG64
bit generator seeded with the caller's integer, which reproduces across
platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCoefficientError
from .grid import GridGeometry


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def wrap_pi(theta) -> np.ndarray:
    """Reduce angles into ``[0, pi)``."""
    out = np.mod(np.asarray(theta, dtype=float), math.pi)
    # np.mod can round tiny negatives up to exactly pi
    return np.where(out >= math.pi, 0.0, out)


@dataclass(frozen=True, eq=False)
class OrientationMap:
    geometry: GridGeometry
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != self.geometry.shape:
            theta = theta.reshape(self.geometry.shape)
        if np.any((theta < 0) | (theta >= math.pi)) or not np.all(np.isfinite(theta)):
            raise ValueError("orientation values must lie in [0, pi)")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def is_constant(self) -> bool:
        return bool(np.all(self.theta == self.theta.flat[0]))


@dataclass(frozen=True)
class PinwheelParams:
    n_samples: int = 8
    seed: int = 0
    # None means 4 / width: a handful of pinwheels per map
    frequency_scale: float | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.frequency_scale is not None and not self.frequency_scale > 0:
            raise ValueError("frequency_scale must be positive")


def pinwheel_map(geometry: GridGeometry, params: PinwheelParams) -> OrientationMap:
    """Argument of a randomly weighted sum of plane waves at N evenly spread angles.

    Weights are i.i.d. uniform on [0, 1]. Coordinates are physical node
    positions times ``frequency_scale``.
    """
    scale = params.frequency_scale
    if scale is None:
        scale = 4.0 / geometry.width
    rng = rng_for(params.seed)
    c = rng.uniform(0.0, 1.0, size=params.n_samples)
    x1, x2 = geometry.coordinates()
    x1 = x1 * scale
    x2 = x2 * scale
    total = np.zeros(geometry.shape, dtype=complex)
    n = params.n_samples
    for k in range(1, n + 1):
        phi = 2 * math.pi * k / n
        total += c[k - 1] * np.exp(2j * math.pi * (x1 * math.cos(phi) + x2 * math.sin(phi)))
    if np.any(total == 0):
        raise DegenerateCoefficientError(
            "plane-wave sum vanishes at a node; argument undefined"
        )
    return OrientationMap(geometry, wrap_pi(np.angle(total)))


def salt_pepper_map(geometry: GridGeometry, seed: int) -> OrientationMap:
    theta = rng_for(seed).uniform(0.0, math.pi, size=geometry.shape)
    return OrientationMap(geometry, wrap_pi(theta))


def constant_map(geometry: GridGeometry, theta: float) -> OrientationMap:
    return OrientationMap(geometry, np.full(geometry.shape, float(wrap_pi(theta))))


def binary_hv_map(geometry: GridGeometry, prob_horizontal: float, seed: int) -> OrientationMap:
    """Each node is horizontal (0) with the given probability, else vertical."""
    if not 0.0 <= prob_horizontal <= 1.0:
        raise ValueError(f"prob_horizontal must be in [0, 1], got {prob_horizontal}")
    draws = rng_for(seed).uniform(0.0, 1.0, size=geometry.shape)
    theta = np.where(draws < prob_horizontal, 0.0, math.pi / 2)
    return OrientationMap(geometry, theta)


def singularities(omap: OrientationMap) -> np.ndarray:
    """Winding of each elementary 2x2 plaquette, in units of pi.

    Orientation differences are taken modulo pi onto ``(-pi/2, pi/2]`` around
    the loop; a pinwheel centre shows up as +1 or -1.
    """
    t = omap.theta

    def step(a, b):
        d = b - a
        return d - math.pi * np.round(d / math.pi)

    loop = (
        step(t[:-1, :-1], t[:-1, 1:])
        + step(t[:-1, 1:], t[1:, 1:])
        + step(t[1:, 1:], t[1:, :-1])
        + step(t[1:, :-1], t[:-1, :-1])
    )
    return np.round(loop / math.pi).astype(int)
