"""Uniform 2-D grids, scalar fields and the lattice difference calculus.

Node ``(i, j)`` sits at ``(x1, x2) = (i * spacing, j * spacing)``. Values are
stored as a ``(height, width)`` array, so ``values.ravel()`` is row-major with
x1 running fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, GeometryError


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    spacing: float = 1.0

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise GeometryError("grid extents must be integers")
        if self.width < 3 or self.height < 3:
            raise GeometryError(
                f"grid must be at least 3x3, got {self.width}x{self.height}"
            )
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise GeometryError(f"spacing must be positive, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(height, width)``."""
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical node coordinates ``(x1, x2)`` as 2-D arrays."""
        x1 = np.arange(self.width) * self.spacing
        x2 = np.arange(self.height) * self.spacing
        return np.meshgrid(x1, x2)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real function sampled on the nodes of a :class:`GridGeometry`."""

    geometry: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            if values.size != self.geometry.size:
                raise GeometryError(
                    f"expected {self.geometry.size} values, got {values.size}"
                )
            values = values.reshape(self.geometry.shape)
        if values.shape != self.geometry.shape:
            raise GeometryError(
                f"values shape {values.shape} does not match grid {self.geometry.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.geometry, values)

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other):
        return self.with_values(self.values + _raw(other, self.geometry))

    def __sub__(self, other):
        return self.with_values(self.values - _raw(other, self.geometry))

    def __mul__(self, other):
        return self.with_values(self.values * _raw(other, self.geometry))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _raw(other, geometry: GridGeometry):
    if isinstance(other, ScalarField):
        check_same_geometry(geometry, other.geometry)
        return other.values
    return other


def check_same_geometry(*geometries: GridGeometry) -> GridGeometry:
    first = geometries[0]
    for g in geometries[1:]:
        if g != first:
            raise GeometryError(f"geometry mismatch: {first} vs {g}")
    return first


@dataclass(frozen=True)
class StencilVector:
    dx: int
    dy: int

    def __neg__(self) -> "StencilVector":
        return StencilVector(-self.dx, -self.dy)

    @property
    def is_zero(self) -> bool:
        return self.dx == 0 and self.dy == 0


E1 = StencilVector(1, 0)
E2 = StencilVector(0, 1)


def make_field(geometry: GridGeometry, fill: float = 0.0) -> ScalarField:
    return ScalarField(geometry, np.full(geometry.shape, float(fill)))


def shifted(values: np.ndarray, dx: int, dy: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(v, valid)`` with ``v[j, i] = values[j + dy, i + dx]``.

    ``valid`` marks nodes whose shifted neighbour lies on the grid; elsewhere
    ``v`` is 0.
    """
    h, w = values.shape
    out = np.zeros_like(values)
    valid = np.zeros(values.shape, dtype=bool)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(ys.start + dy, ys.stop + dy)
    xs_src = slice(xs.start + dx, xs.stop + dx)
    if ys.start < ys.stop and xs.start < xs.stop:
        out[ys, xs] = values[ys_src, xs_src]
        valid[ys, xs] = True
    return out, valid


def difference_op(u: ScalarField, z: StencilVector) -> ScalarField:
    """Forward difference ``(u(x + eps z) - u(x)) / eps``.

    Nodes whose neighbour leaves the grid get 0.
    """
    neighbour, valid = shifted(u.values, z.dx, z.dy)
    diff = np.where(valid, neighbour - u.values, 0.0) / u.geometry.spacing
    return u.with_values(diff)


def l2_norm(u: ScalarField) -> float:
    eps = u.geometry.spacing
    return math.sqrt(eps**2 * float(np.sum(u.values**2)))


def sobolev_seminorm(u: ScalarField, stencil: Sequence[StencilVector]) -> float:
    """Square root of the lattice Dirichlet energy over the stencil set."""
    stencil = list(stencil)
    if not stencil:
        raise ValueError("stencil set must be non-empty")
    eps = u.geometry.spacing
    total = sum(float(np.sum(difference_op(u, z).values ** 2)) for z in stencil)
    return math.sqrt(eps**2 * total)


def node_index(geometry: GridGeometry, x1, x2) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the cell owning each point under ``y - eps/2 <= x < y + eps/2``."""
    eps = geometry.spacing
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    i = np.floor(x1 / eps + 0.5).astype(int)
    j = np.floor(x2 / eps + 0.5).astype(int)
    inside = (i >= 0) & (i < geometry.width) & (j >= 0) & (j < geometry.height)
    if not np.all(inside):
        raise DomainError("point outside the grid's bounding box")
    return i, j


def mesh_completion(u: ScalarField, x1, x2):
    """Piecewise-constant extension of ``u`` evaluated at continuous points.

    Accepts scalars or arrays; returns the same shape.
    """
    i, j = node_index(u.geometry, x1, x2)
    out = u.values[j, i]
    return float(out) if np.ndim(out) == 0 else out
