import math

import numpy as np
import pytest

from cortical.errors import DegenerateLevelError
from cortical.grid import GridGeometry, ScalarField
from cortical.green import (
    GreenFunction,
    anisotropy_ratio,
    circle_samples,
    coupling_components,
    green,
    green_matrix,
    level_extents,
    level_lines,
    radial_log_fit,
    superpose,
)
from cortical.io import write_contours_csv
from cortical.operators import apply, directional_operator, homogeneous_laplacian
from cortical.solver import SolverConfig


def synthetic(values, source):
    g = GridGeometry(values.shape[1], values.shape[0])
    return GreenFunction(source, ScalarField(g, values), "synthetic")


def bump(n, sx, sy):
    jj, ii = np.indices((n, n))
    c = n // 2
    return -np.exp(-(((ii - c) / sx) ** 2 + ((jj - c) / sy) ** 2)), (c, c)


def test_isotropic_synthetic_ratio_is_one():
    v, src = bump(65, 10.0, 10.0)
    assert anisotropy_ratio(synthetic(v, src)) == pytest.approx(1.0, rel=0.05)


def test_elongated_synthetic_ratio_is_five():
    # exp(-(x^2 + 25 y^2)): the half-level set is five times longer along x1
    v, src = bump(65, 10.0, 2.0)
    gf = synthetic(v, src)
    assert anisotropy_ratio(gf) == pytest.approx(5.0, rel=0.15)
    ext = level_extents(gf, 0.5)
    assert np.argmax(ext) == 0  # longest along the x1 axis


def test_degenerate_level_set():
    v = np.zeros((9, 9))
    v[4, 4] = -1.0
    with pytest.raises(DegenerateLevelError):
        anisotropy_ratio(synthetic(v, (4, 4)))
    w, _ = bump(21, 3.0, 3.0)
    with pytest.raises(DegenerateLevelError):
        anisotropy_ratio(synthetic(w, (2, 2)))
    with pytest.raises(ValueError):
        level_extents(synthetic(w, (10, 10)), 1.0)


def test_green_function_solves_delta_problem():
    g = GridGeometry(17, 17)
    op = homogeneous_laplacian(g)
    gf = green(op, (8, 8), SolverConfig(tolerance=1e-10))
    assert gf.converged
    v = gf.field.values
    assert abs(v.mean()) < 1e-12
    assert v.argmin() == 8 * 17 + 8  # L G = delta with L <= 0 makes G dip at the source
    resid = apply(op, gf.field).values
    expected = -np.full(g.shape, 1.0 / g.size)
    expected[8, 8] += 1.0
    np.testing.assert_allclose(resid, expected, atol=1e-6)


def test_green_function_is_symmetric_in_its_arguments():
    g = GridGeometry(9, 9)
    cols = green_matrix(homogeneous_laplacian(g), SolverConfig(tolerance=1e-11))
    inner = ~np.isnan(cols[0])
    sub = cols[np.ix_(inner, inner)]
    np.testing.assert_allclose(sub, sub.T, atol=1e-6)
    assert np.all(np.isnan(cols[:, 0]))


def test_superposition_reproduces_solution():
    g = GridGeometry(9, 9)
    op = homogeneous_laplacian(g)
    cols = green_matrix(op, SolverConfig(tolerance=1e-11))
    f = np.zeros(g.shape)
    f[3, 3], f[5, 6], f[4, 2] = 1.0, -0.5, -0.5
    u = superpose(cols, ScalarField(g, f))
    np.testing.assert_allclose(apply(op, u).values, f, atol=1e-6)
    bad = np.zeros(g.shape)
    bad[0, 0] = 1.0
    with pytest.raises(ValueError):
        superpose(cols, ScalarField(g, bad))


def test_boundary_source_rejected():
    g = GridGeometry(12, 12)
    with pytest.raises(ValueError):
        green(homogeneous_laplacian(g), (0, 5))
    with pytest.raises(ValueError):
        green(directional_operator(g, 0.0, order=4), (1, 5))


def test_horizontal_operator_decouples_rows():
    g = GridGeometry(6, 5)
    n, labels = coupling_components(directional_operator(g, 0.0))
    assert n == 5
    assert len(set(labels.reshape(g.shape)[2])) == 1
    assert coupling_components(homogeneous_laplacian(g))[0] == 1


def test_laplacian_green_function_is_logarithmic():
    g = GridGeometry(33, 33)
    gf = green(homogeneous_laplacian(g), (16, 16))
    alpha, _, r2 = radial_log_fit(gf, 2.0, 8.0)
    assert alpha == pytest.approx(1 / (2 * math.pi), rel=0.1)
    assert r2 > 0.99
    ring = circle_samples(gf, 5.0)
    assert np.std(ring) / abs(np.mean(ring)) < 0.05


def test_level_lines_and_csv(tmp_path):
    v, _ = bump(33, 6.0, 6.0)
    lines = level_lines(ScalarField(GridGeometry(33, 33, 0.5), v), n_levels=3)
    assert len(lines) == 3
    levels = [lvl for lvl, _ in lines]
    assert levels == sorted(levels)
    for _, poly in lines:
        assert poly.shape[1] == 2 and np.all(poly <= 16.0)
    path = write_contours_csv(lines, tmp_path / "c.csv")
    rows = path.read_text().splitlines()
    assert rows[0] == "contour,level,x,y"
    assert len(rows) == 1 + sum(len(p) for _, p in lines)
