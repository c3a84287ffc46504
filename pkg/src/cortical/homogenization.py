"""Random-conductance lattice operators in mean-value form and an empirical
H-convergence experiment.

Conductances ``kappa`` take the value ``delta`` with probability ``r`` and 1
otherwise, one value per unit cell. On a grid of spacing ``eps = 1/n`` the
node ``i`` reads cell ``i`` (``x / eps`` is an integer), so each node carries
its own conductance. Transition weights between neighbouring nodes are

    p_z(x) = 2 k(x) k(x+z) / (m (k(x) + k(x+z)))

with ``m`` the number of non-zero stencil vectors (4 for the default
stencil), and ``p_0 = 1 - sum p_z``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import fft, optimize, sparse

from .errors import ConvergenceError
from .grid import E1, E2, GridGeometry, ScalarField, StencilVector, mesh_completion
from .orientation import rng_for

log = logging.getLogger(__name__)

ZERO = StencilVector(0, 0)
DEFAULT_STENCIL = (E1, -E1, E2, -E2, ZERO)


@dataclass(frozen=True, eq=False)
class KappaField:
    values: np.ndarray  # (height, width) over lattice cells
    r: float
    delta: float
    seed: int

    def __post_init__(self):
        _check_kappa_params(self.r, self.delta)
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("kappa values must be a 2-D array")
        if not np.all((v == self.delta) | (v == 1.0)):
            raise ValueError("kappa values must be delta or 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _check_kappa_params(r: float, delta: float) -> None:
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")


def sample_kappa(window: tuple[int, int], r: float, delta: float, seed: int) -> KappaField:
    """I.i.d. conductances over a ``(width, height)`` window of cells."""
    _check_kappa_params(r, delta)
    width, height = (int(n) for n in window)
    if width < 1 or height < 1:
        raise ValueError("window extents must be positive")
    draws = rng_for(seed).uniform(0.0, 1.0, size=(height, width))
    return KappaField(np.where(draws < r, delta, 1.0), r, delta, seed)


@dataclass(frozen=True, eq=False)
class TransitionOperator:
    """Transition weights ``p[k]`` for stencil vector ``stencil[k]`` on a window of nodes.

    Weights toward neighbours outside the window are 0. The constructor only
    checks structure; :func:`validate_mean_value` checks the ellipticity
    properties, so tampered operators can still be built and diagnosed.
    """

    stencil: tuple[StencilVector, ...]
    p: tuple[ScalarField, ...]
    epsilon: float

    def __post_init__(self):
        stencil = tuple(self.stencil)
        _check_stencil(stencil)
        if len(self.p) != len(stencil):
            raise ValueError("need one weight field per stencil vector")
        geometries = {f.geometry for f in self.p}
        if len(geometries) != 1:
            raise ValueError("weight fields must share one geometry")
        object.__setattr__(self, "stencil", stencil)
        object.__setattr__(self, "p", tuple(self.p))

    @property
    def geometry(self) -> GridGeometry:
        return self.p[0].geometry

    @property
    def reach(self) -> int:
        return max(max(abs(z.dx), abs(z.dy)) for z in self.stencil)

    def weight(self, z: StencilVector) -> np.ndarray:
        return self.p[self.stencil.index(z)].values


def _check_stencil(stencil: Sequence[StencilVector]) -> None:
    s = set(stencil)
    if len(s) != len(stencil):
        raise ValueError("stencil vectors must be distinct")
    if any(-z not in s for z in s):
        raise ValueError("stencil must be symmetric about 0")
    for z in (E1, -E1, E2, -E2):
        if z not in s:
            raise ValueError("stencil must contain +-e1 and +-e2")


def transition_functions(
    kappa: KappaField,
    stencil: Sequence[StencilVector] = DEFAULT_STENCIL,
    epsilon: float = 1.0,
) -> TransitionOperator:
    """Weights from the harmonic-mean rule; ``p_0`` is appended if absent."""
    stencil = tuple(stencil)
    _check_stencil(stencil)
    moves = [z for z in stencil if not z.is_zero]
    k = kappa.values
    h, w = k.shape
    geometry = GridGeometry(w, h, epsilon)
    weights = []
    for z in moves:
        kn = np.zeros_like(k)
        ys = slice(max(0, -z.dy), min(h, h - z.dy))
        xs = slice(max(0, -z.dx), min(w, w - z.dx))
        kn[ys, xs] = k[ys.start + z.dy: ys.stop + z.dy, xs.start + z.dx: xs.stop + z.dx]
        weights.append(2.0 * k * kn / (len(moves) * (k + kn)))
    p0 = 1.0 - np.sum(weights, axis=0)
    out_stencil = tuple(moves) + (ZERO,)
    fields = tuple(ScalarField(geometry, v) for v in weights + [p0])
    return TransitionOperator(out_stencil, fields, epsilon)


@dataclass
class MeanValueValidation:
    """Findings for the three mean-value properties plus non-negativity.

    Each ``*_cells`` list holds ``(i, j)`` node indices where the property
    fails. Properties are only checked at nodes whose whole stencil stays in
    the window.
    """

    delta_min: float
    worst_negative: float
    worst_sum_error: float
    worst_reversibility: float
    negative_cells: list = field(default_factory=list)
    sum_cells: list = field(default_factory=list)
    ellipticity_cells: list = field(default_factory=list)
    reversibility_cells: list = field(default_factory=list)
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return not (self.negative_cells or self.sum_cells or self.ellipticity_cells or self.reversibility_cells)


def _cells(mask: np.ndarray) -> list:
    j, i = np.nonzero(mask)
    return list(zip(i.tolist(), j.tolist()))


def validate_mean_value(
    op: TransitionOperator, min_weight: float | None = None, tolerance: float = 1e-12
) -> MeanValueValidation:
    """Check non-negativity, unit row sums, a positive floor on the axis
    weights and reversibility ``p_z(x) = p_{-z}(x + z)``.

    ``delta_min`` is the smallest axis weight found. Ellipticity failures are
    weights not exceeding ``min_weight`` (default: 0, i.e. strict positivity).
    """
    g = op.geometry
    rr = op.reach
    inner = np.zeros(g.shape, dtype=bool)
    inner[rr: g.height - rr, rr: g.width - rr] = True
    stack = np.stack([f.values for f in op.p])

    neg = inner & np.any(stack < -tolerance, axis=0)
    sum_err = np.abs(stack.sum(axis=0) - 1.0)
    bad_sum = inner & (sum_err > tolerance)
    axis_min = np.min([op.weight(z) for z in (E1, -E1, E2, -E2)], axis=0)
    floor = 0.0 if min_weight is None else float(min_weight)
    bad_ell = inner & ~(axis_min > floor)

    rev = np.zeros(g.shape)
    for z in op.stencil:
        if z.is_zero:
            continue
        here = op.weight(z)
        there = op.weight(-z)
        ys = slice(max(0, -z.dy), min(g.height, g.height - z.dy))
        xs = slice(max(0, -z.dx), min(g.width, g.width - z.dx))
        d = np.abs(here[ys, xs] - there[ys.start + z.dy: ys.stop + z.dy, xs.start + z.dx: xs.stop + z.dx])
        rev[ys, xs] = np.maximum(rev[ys, xs], d)
    bad_rev = inner & (rev > tolerance)

    return MeanValueValidation(
        delta_min=float(axis_min[inner].min()) if inner.any() else math.nan,
        worst_negative=float(max(0.0, -stack[:, inner].min())) if inner.any() else 0.0,
        worst_sum_error=float(sum_err[inner].max()) if inner.any() else 0.0,
        worst_reversibility=float(rev[inner].max()) if inner.any() else 0.0,
        negative_cells=_cells(neg),
        sum_cells=_cells(bad_sum),
        ellipticity_cells=_cells(bad_ell),
        reversibility_cells=_cells(bad_rev),
        tolerance=tolerance,
    )


def _domain_slices(op: TransitionOperator, domain: GridGeometry) -> tuple[slice, slice]:
    g = op.geometry
    hx = (g.width - domain.width) // 2
    hy = (g.height - domain.height) // 2
    if (
        not math.isclose(domain.spacing, op.epsilon)
        or hx < op.reach
        or hy < op.reach
        or g.width - domain.width != 2 * hx
        or g.height - domain.height != 2 * hy
    ):
        raise ValueError("operator window must equal the domain plus a centred stencil halo")
    return slice(hy, hy + domain.height), slice(hx, hx + domain.width)


def mean_value_matrix(op: TransitionOperator, domain: GridGeometry) -> sparse.csr_matrix:
    """Matrix ``P`` of ``u -> sum_z p_z u(. + eps z)`` restricted to the domain.

    Halo nodes hold zero Dirichlet data and therefore drop out.
    """
    ys, xs = _domain_slices(op, domain)
    h, w = domain.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for z, pf in zip(op.stencil, op.p):
        pz = pf.values[ys, xs]
        jj, ii = np.indices((h, w))
        tj, ti = jj + z.dy, ii + z.dx
        ok = (tj >= 0) & (tj < h) & (ti >= 0) & (ti < w) & (pz != 0)
        rows.append(idx[ok])
        cols.append(idx[tj[ok], ti[ok]])
        vals.append(pz[ok])
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(h * w, h * w)
    )
    return mat.tocsr()


@numba.njit(cache=True, nogil=True)
def _fixed_point(indptr, indices, data, rhs, u, omega, tol, max_iter, check_every, scale):
    n = u.shape[0]
    new = np.empty(n)
    for k in range(max_iter):
        for r in range(n):
            acc = 0.0
            for q in range(indptr[r], indptr[r + 1]):
                acc += data[q] * u[indices[q]]
            new[r] = (1.0 - omega) * u[r] + omega * (acc + rhs[r])
        u, new = new, u
        if (k + 1) % check_every == 0:
            res = 0.0
            for r in range(n):
                acc = 0.0
                for q in range(indptr[r], indptr[r + 1]):
                    acc += data[q] * u[indices[q]]
                d = acc + rhs[r] - u[r]
                res += d * d
            if math.sqrt(res * scale) < tol:
                return u, k + 1, math.sqrt(res * scale)
    return u, -1, 0.0


def solve_mean_value_dirichlet(
    op: TransitionOperator,
    f: ScalarField,
    domain: GridGeometry,
    *,
    omega: float = 0.9,
    tolerance: float = 1e-8,
    max_iterations: int = 5_000_000,
) -> ScalarField:
    """Solve ``u - sum_z p_z u(. + eps z) = eps^2 f`` on the domain, ``u = 0`` on the halo.

    Damped fixed-point sweeps run until the residual, divided by ``eps^2`` so
    it is measured in the units of ``f``, has ``l2_norm`` below ``tolerance``.
    Returns the solution on the domain nodes.
    """
    if f.geometry != domain:
        raise ValueError("f must live on the domain geometry")
    if not 0.0 < omega <= 1.0:
        raise ValueError("omega must lie in (0, 1]")
    eps = domain.spacing
    mat = mean_value_matrix(op, domain)
    rhs = eps**2 * f.values.ravel().astype(float)
    u0 = np.zeros(domain.size)
    # l2_norm of (residual / eps^2): sqrt(eps^2 * sum (d / eps^2)^2)
    scale = eps**2 / eps**4
    u, iterations, res = _fixed_point(
        mat.indptr, mat.indices, mat.data, rhs, u0, omega, tolerance, max_iterations, 25, scale
    )
    if iterations < 0:
        raise ConvergenceError(f"mean-value iteration did not converge in {max_iterations} sweeps")
    log.info("mean-value solve: %d sweeps, residual %.2e", iterations, res)
    return ScalarField(domain, u.reshape(domain.shape))


# Reference Poisson solves -------------------------------------------------

TEST_FUNCTIONS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "one": lambda x, y: np.ones_like(x),
    "bump": lambda x, y: np.exp(-20.0 * ((x - 0.4) ** 2 + (y - 0.55) ** 2)),
    "poly": lambda x, y: 1.0 + x + 2.0 * y,
    # (1,3) and (3,1) sine modes: each mode's amplitude is dominated by one
    # diagonal coefficient, which makes the diagonal fit well conditioned
    "modes": lambda x, y: (
        np.sin(np.pi * x) * np.sin(3 * np.pi * y) + np.sin(3 * np.pi * x) * np.sin(np.pi * y)
    ),
}


def _test_function(f) -> Callable:
    if callable(f):
        return f
    try:
        return TEST_FUNCTIONS[f]
    except KeyError:
        raise ValueError(f"unknown test function {f!r}; known: {sorted(TEST_FUNCTIONS)}") from None


class _ReferencePoisson:
    """Cell-centred 5-point Poisson solver on the unit square via DST-II.

    ``solve(a11, a22)`` returns ``w`` with ``-(a11 d11 + a22 d22) w = f`` and
    zero Dirichlet data, sampled at the ``M x M`` cell centres.
    """

    def __init__(self, f: Callable, cells: int):
        self.cells = cells
        c = (np.arange(cells) + 0.5) / cells
        self.x1, self.x2 = np.meshgrid(c, c)
        self.fhat = fft.dstn(f(self.x1, self.x2), type=2)
        k = np.arange(1, cells + 1)
        self.lam = (2.0 - 2.0 * np.cos(math.pi * k / cells)) * cells**2

    def solve(self, a11: float, a22: float) -> np.ndarray:
        denom = a11 * self.lam[None, :] + a22 * self.lam[:, None]
        return fft.idstn(self.fhat / denom, type=2)


@dataclass
class HomogenizationReport:
    epsilon_sequence: list[float]
    l2_errors: list[float]
    fitted_coefficient: float
    anisotropy_estimate: float
    seeds: list[int] = field(default_factory=list)
    diagonal_fit: tuple[float, float] = (math.nan, math.nan)

    def __post_init__(self):
        if len(self.epsilon_sequence) != len(self.l2_errors):
            raise ValueError("epsilon_sequence and l2_errors must have equal length")
        if any(b >= a for a, b in zip(self.epsilon_sequence, self.epsilon_sequence[1:])):
            raise ValueError("epsilon_sequence must be strictly decreasing")

    def to_csv(self) -> str:
        lines = ["epsilon,l2_error,fitted_coefficient,anisotropy"]
        for e, err in zip(self.epsilon_sequence, self.l2_errors):
            lines.append(f"{e!r},{err!r},{self.fitted_coefficient!r},{self.anisotropy_estimate!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        a11, a22 = self.diagonal_fit
        return (
            f"fitted a0 = {self.fitted_coefficient:.6f}\n"
            f"diagonal fit a11 = {a11:.6f}, a22 = {a22:.6f}\n"
            f"anisotropy a11/a22 = {self.anisotropy_estimate:.6f}\n"
            + "".join(f"eps = {e:.6g}: l2 error {err:.6e}\n" for e, err in zip(self.epsilon_sequence, self.l2_errors))
        )


def _unit_square_run(n: int, r: float, delta: float, f: Callable, seed: int) -> ScalarField:
    """Mean-value Dirichlet solve on the unit square with spacing ``1/n``.

    Returns the field on all ``(n+1)^2`` nodes, boundary zeros included.
    """
    eps = 1.0 / n
    kappa = sample_kappa((n + 1, n + 1), r, delta, seed)
    op = transition_functions(kappa, DEFAULT_STENCIL, eps)
    domain = GridGeometry(n - 1, n - 1, eps)
    x1, x2 = domain.coordinates()
    rhs = ScalarField(domain, f(x1 + eps, x2 + eps))
    u = solve_mean_value_dirichlet(op, rhs, domain)
    full = np.zeros((n + 1, n + 1))
    full[1:-1, 1:-1] = u.values
    return ScalarField(GridGeometry(n + 1, n + 1, eps), full)


def _l2(values: np.ndarray, cells: int) -> float:
    return math.sqrt(float(np.sum(values**2)) / cells**2)


def h_convergence_experiment(
    r: float,
    delta: float,
    f="modes",
    epsilons: Sequence[float] = (1 / 16, 1 / 32, 1 / 64),
    seeds: Sequence[int] | None = None,
    *,
    reference_cells: int | None = None,
    workers: int = 1,
) -> HomogenizationReport:
    """Compare random mean-value solutions with a fitted constant-coefficient Poisson solve.

    ``1/eps`` must be an integer for every entry. One seed per epsilon
    (defaults to ``0, 1, ...``). The isotropic coefficient ``a0`` and the
    diagonal pair ``(a11, a22)`` are both fitted at the finest epsilon by
    least squares between the mesh-completed lattice solution and the
    reference solve, sampled at the reference cell centres; ``l2_errors``
    are measured against the ``a0`` reference at every epsilon.
    """
    _check_kappa_params(r, delta)
    epsilons = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    ns = [round(1.0 / e) for e in epsilons]
    if any(not math.isclose(n * e, 1.0, rel_tol=1e-9) or n < 3 for n, e in zip(ns, epsilons)):
        raise ValueError("every epsilon must be 1/n for an integer n >= 3")
    seeds = list(range(len(ns))) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != len(ns):
        raise ValueError("need one seed per epsilon")
    func = _test_function(f)
    # power of two above 4/eps_min keeps cell centres off the lattice cell faces
    cells = reference_cells or 1 << max(8, math.ceil(math.log2(4 * max(ns))))
    ref = _ReferencePoisson(func, cells)

    def run(args):
        n, seed = args
        u = _unit_square_run(n, r, delta, func, seed)
        return mesh_completion(u, ref.x1, ref.x2)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            sampled = list(pool.map(run, zip(ns, seeds)))
    else:
        sampled = [run(a) for a in zip(ns, seeds)]

    finest = sampled[-1]
    w = ref.solve(1.0, 1.0)
    inv_a = float(np.sum(finest * w) / np.sum(w * w))
    a0 = 1.0 / inv_a
    target = w * inv_a
    errors = [_l2(s - target, cells) for s in sampled]

    def resid(logs):
        return (finest - ref.solve(math.exp(logs[0]), math.exp(logs[1]))).ravel()

    fit = optimize.least_squares(resid, x0=[math.log(a0)] * 2, x_scale=1.0, xtol=1e-12, ftol=1e-12)
    a11, a22 = (math.exp(v) for v in fit.x)
    return HomogenizationReport(
        epsilon_sequence=epsilons,
        l2_errors=errors,
        fitted_coefficient=a0,
        anisotropy_estimate=a11 / a22,
        seeds=seeds,
        diagonal_fit=(a11, a22),
    )
