import math

import numpy as np
import pytest

from cortical.errors import InstabilityError
from cortical.grid import GridGeometry, ScalarField, make_field
from cortical.imaging import make_smooth
from cortical.io import write_trace_csv
from cortical.operators import (
    CoefficientField,
    GaussianParams,
    HeterogeneousOperator,
    apply,
    directional_operator,
    forward_output,
    gaussian_smooth,
    homogeneous_laplacian,
)
from cortical.orientation import constant_map
from cortical.solver import (
    SolverConfig,
    default_dt,
    reconstruct,
    scaled_tolerance,
    solve,
    stable_dt,
)


def test_default_constants():
    g = GridGeometry(8, 8)
    cfg = SolverConfig()
    assert cfg.tolerance == 1e-4
    assert default_dt(homogeneous_laplacian(g)) == 0.1
    assert default_dt(directional_operator(g, 0.0)) == 0.1
    assert default_dt(directional_operator(g, 0.0, order=4)) == 0.001


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"tolerance": -1.0}, {"max_iterations": 0}, {"boundary": "periodic"}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_zero_forcing_converges_at_first_step():
    g = GridGeometry(10, 10)
    rep = solve(homogeneous_laplacian(g), make_field(g), None, SolverConfig())
    assert rep.converged and rep.iterations == 1 and rep.final_update_sum == 0.0
    assert np.all(rep.solution.values == 0)


def test_laplacian_inversion_recovers_stimulus():
    g = GridGeometry(32, 32)
    stim = make_smooth(g).bands[0]
    rep = reconstruct(homogeneous_laplacian(g), stim, GaussianParams(0.5), SolverConfig(tolerance=1e-7))
    ref = ScalarField(g, stim.values)
    assert rep.converged
    # the reference is the smoothed stimulus up to its mean
    smooth = gaussian_smooth(ref, GaussianParams(0.5)).values
    err = rep.solution.values - smooth
    assert np.max(np.abs(err - err.mean())) < 5e-3
    assert rep.solution.values.mean() == pytest.approx(stim.values.mean(), abs=1e-12)


def test_unstable_step_names_iteration():
    g = GridGeometry(12, 12)
    f = ScalarField(g, np.random.default_rng(0).normal(size=g.shape))
    f = f - float(f.values.mean())
    with pytest.raises(InstabilityError) as info:
        solve(homogeneous_laplacian(g), f, None, SolverConfig(dt=2.0))
    assert info.value.iteration >= 1
    assert f"iteration {info.value.iteration}" in str(info.value)


def test_dirichlet_ring_stays_zero():
    g = GridGeometry(12, 10)
    f = make_field(g, 1.0)
    rep = solve(homogeneous_laplacian(g), f, None, SolverConfig(boundary="dirichlet_zero", tolerance=1e-8))
    v = rep.solution.values
    assert rep.converged
    assert np.all(v[0] == 0) and np.all(v[-1] == 0) and np.all(v[:, 0] == 0) and np.all(v[:, -1] == 0)
    # L u = 1 with zero ring gives a negative bump
    assert v[1:-1, 1:-1].max() < 0


def test_runs_are_deterministic():
    g = GridGeometry(16, 16)
    op = HeterogeneousOperator(constant_map(g, 0.3), CoefficientField.from_arrays(g, 0.5, 0.5, 0.0))
    stim = make_smooth(g).bands[0]
    a = reconstruct(op, stim, GaussianParams(1.0), SolverConfig())
    b = reconstruct(op, stim, GaussianParams(1.0), SolverConfig())
    assert a.iterations == b.iterations
    assert a.solution.values.tobytes() == b.solution.values.tobytes()


def test_stable_dt_values():
    g = GridGeometry(16, 16)
    assert stable_dt(homogeneous_laplacian(g)) == pytest.approx(0.1875)
    assert stable_dt(directional_operator(g, 0.0)) == pytest.approx(0.375)
    assert stable_dt(directional_operator(g, 0.0, order=4)) == pytest.approx(0.09375)
    assert stable_dt(homogeneous_laplacian(g), safety=1.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        stable_dt(homogeneous_laplacian(g), safety=0.0)


def test_scaled_tolerance():
    assert scaled_tolerance(0.07, 0.001) == pytest.approx(7e-3)
    assert scaled_tolerance(0.1, 0.1, 2e-5) == pytest.approx(2e-5)


def test_stable_step_matches_default_step_solution():
    g = GridGeometry(16, 16)
    op = directional_operator(g, 0.4, order=4)
    stim = make_smooth(g).bands[0]
    f = forward_output(op, stim, GaussianParams(1.0))
    ref = solve(op, f, None, SolverConfig())
    dt = stable_dt(op)
    fast = solve(op, f, None, SolverConfig(dt=dt, tolerance=scaled_tolerance(dt, 0.001)))
    assert fast.iterations < ref.iterations
    np.testing.assert_allclose(fast.solution.values, ref.solution.values, atol=1e-3)


def test_energy_trace_is_monotone():
    g = GridGeometry(12, 12)
    op = homogeneous_laplacian(g)
    f = forward_output(op, make_smooth(g).bands[0], GaussianParams(1.0))
    rep = solve(op, f, None, SolverConfig(record_energy=True, record_updates=True, tolerance=1e-6))
    trace = np.array(rep.energy_trace)
    assert len(trace) == rep.iterations + 1
    assert np.all(np.diff(trace) <= 1e-12)
    assert len(rep.update_trace) == rep.iterations


def test_recording_path_matches_fast_path():
    g = GridGeometry(10, 10)
    op = homogeneous_laplacian(g)
    f = forward_output(op, make_smooth(g).bands[0], GaussianParams(1.0))
    a = solve(op, f, None, SolverConfig())
    b = solve(op, f, None, SolverConfig(record_energy=True))
    assert a.iterations == b.iterations
    np.testing.assert_allclose(a.solution.values, b.solution.values, atol=1e-12)


def test_residual_certificate():
    g = GridGeometry(14, 14)
    op = homogeneous_laplacian(g)
    f = forward_output(op, make_smooth(g).bands[0], GaussianParams(1.0))
    cfg = SolverConfig(tolerance=1e-6)
    rep = solve(op, f, None, cfg)
    resid = apply(op, rep.solution).values - f.values
    assert np.sum(np.abs(resid)) <= cfg.tolerance / rep.dt * (1 + 1e-9)


def test_constant_labels_remove_label_means():
    g = GridGeometry(8, 8)
    labels = np.zeros(g.shape, dtype=int)
    labels[:, 4:] = 1
    op = homogeneous_laplacian(g)
    f = ScalarField(g, np.random.default_rng(0).normal(size=g.shape))
    rep = solve(op, f, None, SolverConfig(tolerance=1e-8), constant_labels=labels)
    v = rep.solution.values
    assert abs(v[labels == 0].mean()) < 1e-12 and abs(v[labels == 1].mean()) < 1e-12


def test_iteration_cap_reports_not_converged():
    g = GridGeometry(10, 10)
    op = homogeneous_laplacian(g)
    f = forward_output(op, make_smooth(g).bands[0], GaussianParams(1.0))
    rep = solve(op, f, None, SolverConfig(max_iterations=3))
    assert not rep.converged and rep.iterations == 3


def test_trace_csv(tmp_path):
    path = write_trace_csv([3.0, 2.5, math.pi], tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,value"
    assert lines[1] == "0,3.0"
    assert float(lines[3].split(",")[1]) == math.pi
