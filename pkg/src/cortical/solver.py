"""Forward-Euler gradient flow for ``L u = f``.

Iterates ``u <- u + dt * (L u - f)`` and stops once the plain (unweighted)
sum of absolute nodewise updates drops below the tolerance. Because the sum
is not scaled by the cell area, the tolerance couples to the node count;
the CLI rescales it for large images, the library does not.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numba
import numpy as np

from .errors import GeometryError, InstabilityError
from .grid import ScalarField, check_same_geometry, make_field
from .operators import (
    GaussianParams,
    HeterogeneousOperator,
    energy,
    forward_output,
    operator_matrix,
)

log = logging.getLogger(__name__)

DT_SECOND_ORDER = 0.1
DT_FOURTH_ORDER = 0.001
DEFAULT_TOLERANCE = 1e-4
BLOWUP_THRESHOLD = 1e12
BOUNDARIES = ("neumann", "dirichlet_zero")


def default_dt(op: HeterogeneousOperator) -> float:
    """0.1 for purely second-order operators, 0.001 once a fourth-order term appears."""
    return DT_FOURTH_ORDER if op.has_fourth_order else DT_SECOND_ORDER


def stable_dt(op: HeterogeneousOperator, safety: float = 0.75) -> float:
    """Step below the forward-Euler limit from a Gershgorin bound on the spectrum.

    Every eigenvalue of the assembled matrix lies within the largest absolute
    row sum ``G`` of the origin, so ``dt = safety * 2 / G`` keeps the
    amplification factor of any decaying mode below one. The fixed
    :func:`default_dt` values are far below this for fourth-order mixtures,
    which makes them very slow on large grids; this is the faster choice.
    """
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    mat = operator_matrix(op)
    bound = float(np.max(np.asarray(abs(mat).sum(axis=1))))
    return safety * 2.0 / bound if bound > 0 else DT_SECOND_ORDER


def scaled_tolerance(dt: float, reference_dt: float, tolerance: float = DEFAULT_TOLERANCE) -> float:
    """Tolerance giving the same stopping residual at step ``dt`` as ``tolerance`` at ``reference_dt``.

    The update sum is ``dt`` times the residual sum, so stopping at a fixed
    residual needs the threshold to scale with the step.
    """
    return tolerance * dt / reference_dt


@dataclass(frozen=True)
class SolverConfig:
    dt: float | None = None  # None: default_dt(op)
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = 2_000_000
    boundary: str = "neumann"
    record_energy: bool = False
    record_updates: bool = False

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")

    def resolved_dt(self, op: HeterogeneousOperator) -> float:
        return default_dt(op) if self.dt is None else float(self.dt)


@dataclass(eq=False)
class SolveReport:
    solution: ScalarField
    iterations: int
    final_update_sum: float
    converged: bool
    dt: float
    energy_trace: list[float] | None = None
    update_trace: np.ndarray | None = None


@numba.njit(cache=True, nogil=True)
def _euler_loop(indptr, indices, data, f, u, dt, tol, max_iter, fixed, labels, ncomp, trace):
    n = u.shape[0]
    new = np.empty(n)
    sums = np.zeros(max(ncomp, 1))
    counts = np.zeros(max(ncomp, 1))
    if ncomp > 0:
        for r in range(n):
            counts[labels[r]] += 1.0
    upd = 0.0
    for k in range(max_iter):
        for r in range(n):
            acc = 0.0
            for p in range(indptr[r], indptr[r + 1]):
                acc += data[p] * u[indices[p]]
            new[r] = u[r] + dt * (acc - f[r])
        for r in range(fixed.shape[0]):
            new[fixed[r]] = 0.0
        if ncomp > 0:
            sums[:] = 0.0
            for r in range(n):
                sums[labels[r]] += new[r]
            for r in range(n):
                new[r] -= sums[labels[r]] / counts[labels[r]]
        upd = 0.0
        for r in range(n):
            upd += abs(new[r] - u[r])
        if trace.shape[0] > 0:
            trace[k] = upd
        if not (upd <= 1e12):
            return new, k + 1, upd, -1
        u, new = new, u
        if upd < tol:
            return u, k + 1, upd, 1
    return u, max_iter, upd, 0


def _boundary_ring(shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return np.flatnonzero(mask)


def solve(
    op: HeterogeneousOperator,
    f: ScalarField,
    u0: ScalarField | None,
    config: SolverConfig,
    *,
    constant_labels: np.ndarray | None = None,
) -> SolveReport:
    """Run the explicit gradient flow from ``u0`` (zero if None).

    ``constant_labels`` (one integer label per node) removes the per-label
    mean after every step. Use it when the operator has locally constant
    kernel functions and ``f`` is only compatible up to those constants: the
    iteration then converges to a solution of ``L u = f + c`` with ``c``
    constant on each label.
    """
    geometry = check_same_geometry(op.geometry, f.geometry)
    if u0 is None:
        u0 = make_field(geometry, 0.0)
    check_same_geometry(geometry, u0.geometry)
    dt = config.resolved_dt(op)
    mat = operator_matrix(op)
    fixed = _boundary_ring(geometry.shape) if config.boundary == "dirichlet_zero" else np.zeros(0, np.int64)
    u = u0.values.ravel().astype(float).copy()
    u[fixed] = 0.0
    rhs = f.values.ravel().astype(float).copy()
    if constant_labels is not None:
        labels = np.asarray(constant_labels, dtype=np.int64).ravel()
        if labels.size != u.size:
            raise GeometryError("constant_labels must have one entry per node")
        ncomp = int(labels.max()) + 1
    else:
        labels = np.zeros(u.size, dtype=np.int64)
        ncomp = 0

    if config.record_energy:
        return _solve_recording(op, mat, rhs, u, dt, config, fixed, labels, ncomp)

    trace = np.zeros(config.max_iterations if config.record_updates else 0)
    final, iterations, upd, status = _euler_loop(
        mat.indptr, mat.indices, mat.data, rhs, u, dt,
        config.tolerance, config.max_iterations, fixed, labels, ncomp, trace,
    )
    if status < 0:
        raise InstabilityError(iterations, upd)
    report = SolveReport(
        solution=ScalarField(geometry, final.reshape(geometry.shape)),
        iterations=iterations,
        final_update_sum=float(upd),
        converged=bool(status == 1),
        dt=dt,
        update_trace=trace[:iterations] if config.record_updates else None,
    )
    log.info("solve: %d iterations, update sum %.3e, converged=%s", iterations, upd, report.converged)
    return report


def _solve_recording(op, mat, rhs, u, dt, config, fixed, labels, ncomp):
    geometry = op.geometry
    f_field = ScalarField(geometry, rhs.reshape(geometry.shape))
    field_of = lambda v: ScalarField(geometry, v.reshape(geometry.shape))
    trace = [energy(op, field_of(u), f_field)]
    updates = []
    counts = np.bincount(labels, minlength=max(ncomp, 1)).astype(float)
    upd = 0.0
    converged = False
    k = 0
    for k in range(1, config.max_iterations + 1):
        new = u + dt * (mat @ u - rhs)
        new[fixed] = 0.0
        if ncomp:
            new -= (np.bincount(labels, weights=new, minlength=ncomp) / counts)[labels]
        upd = float(np.sum(np.abs(new - u)))
        if not upd <= BLOWUP_THRESHOLD:
            raise InstabilityError(k, upd)
        u = new
        updates.append(upd)
        trace.append(energy(op, field_of(u), f_field))
        if upd < config.tolerance:
            converged = True
            break
    return SolveReport(
        solution=field_of(u),
        iterations=k,
        final_update_sum=upd,
        converged=converged,
        dt=dt,
        energy_trace=trace,
        update_trace=np.array(updates) if config.record_updates else None,
    )


def reconstruct(
    op: HeterogeneousOperator,
    stimulus: ScalarField,
    g: GaussianParams,
    config: SolverConfig,
) -> SolveReport:
    """Recover the perceived band from the operator's response to ``stimulus``.

    Solves ``L u = L I_sigma`` from ``u = 0`` and then shifts ``u`` so its
    mean equals the stimulus mean (the operator cannot see constants).
    """
    check_same_geometry(op.geometry, stimulus.geometry)
    f = forward_output(op, stimulus, g)
    report = solve(op, f, None, config)
    shift = float(np.mean(stimulus.values) - np.mean(report.solution.values))
    return replace(report, solution=report.solution + shift)
