"""Discrete Neumann Green functions and level-set shape measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateLevelError
from .grid import ScalarField
from .operators import HeterogeneousOperator, operator_matrix
from .solver import SolverConfig, solve


@dataclass(frozen=True, eq=False)
class GreenFunction:
    source: tuple[int, int]  # (i, j) = (x1 index, x2 index)
    field: ScalarField
    operator_digest: str
    iterations: int = 0
    converged: bool = True


def coupling_components(op: HeterogeneousOperator) -> tuple[int, np.ndarray]:
    """Connected components of the graph of nodes the operator couples.

    Each component's indicator lies in the operator's kernel, so a Neumann
    right-hand side must be balanced per component.
    """
    mat = operator_matrix(op)
    return connected_components(mat, directed=True, connection="weak")


def _check_source(op: HeterogeneousOperator, source) -> tuple[int, int]:
    i, j = int(source[0]), int(source[1])
    margin = 2 if op.has_fourth_order else 1
    g = op.geometry
    if not (margin <= i < g.width - margin and margin <= j < g.height - margin):
        raise ValueError(
            f"source {(i, j)} must be at least {margin} cells from the boundary"
        )
    return i, j


def green(op: HeterogeneousOperator, source, config: SolverConfig | None = None) -> GreenFunction:
    """Solve ``L G = delta_source`` with Neumann data by the gradient flow.

    The delta carries weight ``1/eps^2``. Its mean over each coupled
    component is subtracted so the problem is solvable, and the flow removes
    the component means after every step, which absorbs any leftover
    incompatibility. The result has zero mean.
    """
    config = config or SolverConfig()
    if config.boundary != "neumann":
        config = SolverConfig(config.dt, config.tolerance, config.max_iterations, "neumann")
    i, j = _check_source(op, source)
    g = op.geometry
    ncomp, labels = coupling_components(op)
    delta = np.zeros(g.size)
    delta[j * g.width + i] = 1.0 / g.spacing**2
    counts = np.bincount(labels, minlength=ncomp).astype(float)
    delta -= (np.bincount(labels, weights=delta, minlength=ncomp) / counts)[labels]
    rhs = ScalarField(g, delta.reshape(g.shape))
    report = solve(op, rhs, None, config, constant_labels=labels)
    field = report.solution - float(np.mean(report.solution.values))
    return GreenFunction((i, j), field, op.describe(), report.iterations, report.converged)


def green_matrix(op: HeterogeneousOperator, config: SolverConfig | None = None) -> np.ndarray:
    """Green functions for every admissible source, as columns.

    Returns an ``(N, N)`` array ``G`` with ``G[:, s]`` the flattened Green
    function of source ``s``; columns of inadmissible (boundary) sources are
    NaN.
    """
    g = op.geometry
    out = np.full((g.size, g.size), np.nan)
    for s in range(g.size):
        j, i = divmod(s, g.width)
        try:
            _check_source(op, (i, j))
        except ValueError:
            continue
        out[:, s] = green(op, (i, j), config).field.values.ravel()
    return out


def superpose(green_cols: np.ndarray, f: ScalarField) -> ScalarField:
    """``u(x) = eps^2 * sum_y G(x, y) f(y)`` over the sources where G is known."""
    g = f.geometry
    fv = f.values.ravel()
    known = ~np.isnan(green_cols[0])
    if np.any(fv[~known] != 0):
        raise ValueError("f must vanish on sources without a Green function")
    u = green_cols[:, known] @ fv[known] * g.spacing**2
    return ScalarField(g, u.reshape(g.shape))


def _ray_extent(values: np.ndarray, src, direction, level: float, step: float = 0.25) -> float:
    """Distance from the source to the first crossing below ``level`` along a ray."""
    h, w = values.shape
    di, dj = direction
    i0, j0 = src
    prev_t, prev_v = 0.0, values[j0, i0]
    t = step
    while True:
        i, j = i0 + t * di, j0 + t * dj
        if not (0 <= i <= w - 1 and 0 <= j <= h - 1):
            return prev_t
        v = float(ndimage.map_coordinates(values, [[j], [i]], order=1)[0])
        if v < level:
            return prev_t + step * (prev_v - level) / (prev_v - v)
        prev_t, prev_v = t, v
        t += step


def level_extents(gf: GreenFunction, level_fraction: float, n_lines: int = 8) -> np.ndarray:
    """Lengths of the superlevel set of ``-G`` along lines through the source.

    The level is ``min + level_fraction * (max - min)`` of ``-G``. Lines are
    evenly spaced in angle over ``[0, pi)``; lengths are in grid cells.
    """
    if not 0.0 < level_fraction < 1.0:
        raise ValueError("level_fraction must lie in (0, 1)")
    v = -gf.field.values
    lo, hi = float(v.min()), float(v.max())
    level = lo + level_fraction * (hi - lo)
    i0, j0 = gf.source
    if v[j0, i0] < level:
        raise DegenerateLevelError("source lies outside the superlevel set")
    ring = v[max(j0 - 1, 0): j0 + 2, max(i0 - 1, 0): i0 + 2]
    if np.count_nonzero(ring >= level) <= 1:
        raise DegenerateLevelError("superlevel set is a single cell")
    extents = []
    for k in range(n_lines):
        a = math.pi * k / n_lines
        d = (math.cos(a), math.sin(a))
        fwd = _ray_extent(v, (i0, j0), d, level)
        back = _ray_extent(v, (i0, j0), (-d[0], -d[1]), level)
        extents.append(fwd + back)
    return np.array(extents)


def anisotropy_ratio(gf: GreenFunction, level_fraction: float = 0.5) -> float:
    """Largest over smallest extent of the level set around the source."""
    ext = level_extents(gf, level_fraction)
    if ext.min() <= 0:
        raise DegenerateLevelError("level set has zero extent along some line")
    return float(ext.max() / ext.min())


def circle_samples(gf: GreenFunction, radius: float, n_angles: int = 64) -> np.ndarray:
    """Bilinear samples of G on a circle (radius in grid cells) around the source."""
    i0, j0 = gf.source
    ang = 2 * math.pi * np.arange(n_angles) / n_angles
    ii = i0 + radius * np.cos(ang)
    jj = j0 + radius * np.sin(ang)
    return ndimage.map_coordinates(gf.field.values, [jj, ii], order=1)


def radial_log_fit(gf: GreenFunction, r_min: float, r_max: float) -> tuple[float, float, float]:
    """Least-squares fit ``G ~ alpha * log(r) + beta`` over nodes with r in range.

    Radii are in grid cells. Returns ``(alpha, beta, r_squared)``.
    """
    g = gf.field.geometry
    jj, ii = np.indices(g.shape)
    r = np.hypot(ii - gf.source[0], jj - gf.source[1])
    sel = (r >= r_min) & (r <= r_max)
    x = np.log(r[sel])
    y = gf.field.values[sel]
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(coef[0]), float(coef[1]), r2


def level_lines(field: ScalarField, n_levels: int = 8):
    """Marching-squares contours at evenly spaced interior levels.

    Returns a list of ``(level, polyline)`` with polylines as ``(k, 2)``
    arrays of ``(x1, x2)`` in physical units.
    """
    from skimage import measure

    v = field.values
    lo, hi = float(v.min()), float(v.max())
    levels = lo + (hi - lo) * (np.arange(1, n_levels + 1) / (n_levels + 1))
    out = []
    for level in levels:
        for path in measure.find_contours(v, level):
            out.append((float(level), path[:, ::-1] * field.geometry.spacing))
    return out
