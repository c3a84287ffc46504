"""Pointwise heterogeneous operators ``a1*Lap + a2*X2 - a3*X4`` on a grid.

``X2`` is the second derivative along the local orientation theta(x) and
``X4 = X2(X2)``. Coefficients multiply the operator output node by node.

Boundary closure: the pure second differences use ghost cells that mirror
the edge value (the usual cell-face Neumann reflection). The mixed
derivative uses the 4-corner centred stencil in the interior and, on the
boundary ring, the closure that makes the assembled operator the exact
negative Hessian of the discrete quadratic energy in :func:`energy`. With
that closure every constant-coefficient operator is a symmetric matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage, sparse

from .grid import GridGeometry, ScalarField, check_same_geometry
from .orientation import (
    OrientationMap,
    PinwheelParams,
    binary_hv_map,
    constant_map,
    pinwheel_map,
    rng_for,
    salt_pepper_map,
)

_TRIG_ZERO = 1e-15


# -- one-dimensional building blocks along an axis (0 = x2 rows, 1 = x1 cols) --

def _fwd(a, axis):
    """Zero-extended forward difference ``a[i+1] - a[i]`` (0 on the last node)."""
    a = np.moveaxis(a, axis, -1)
    out = np.zeros_like(a)
    out[..., :-1] = a[..., 1:] - a[..., :-1]
    return np.moveaxis(out, -1, axis)


def _bwd(a, axis):
    """Zero-extended backward difference ``a[i] - a[i-1]`` (0 on the first node)."""
    a = np.moveaxis(a, axis, -1)
    out = np.zeros_like(a)
    out[..., 1:] = a[..., 1:] - a[..., :-1]
    return np.moveaxis(out, -1, axis)


def _centred(a, axis):
    """Half the sum of the one-sided differences; replicate closure at the ends."""
    a = np.moveaxis(a, axis, -1)
    out = np.empty_like(a)
    out[..., 1:-1] = 0.5 * (a[..., 2:] - a[..., :-2])
    out[..., 0] = 0.5 * (a[..., 1] - a[..., 0])
    out[..., -1] = 0.5 * (a[..., -1] - a[..., -2])
    return np.moveaxis(out, -1, axis)


def _centred_adjoint(w, axis):
    """Matrix transpose of :func:`_centred`."""
    w = np.moveaxis(w, axis, -1)
    out = np.zeros_like(w)
    s = 0.5 * (w[..., :-1] + w[..., 1:])
    out[..., 1:] += s
    out[..., :-1] -= s
    return np.moveaxis(out, -1, axis)


def _second(a, axis):
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    p = np.pad(a, pad, mode="edge")
    if axis == 0:
        return p[2:, :] - 2.0 * a + p[:-2, :]
    return p[:, 2:] - 2.0 * a + p[:, :-2]


def _mixed(a):
    cx_cy = _centred_adjoint(_centred(a, 0), 1)
    cy_cx = _centred_adjoint(_centred(a, 1), 0)
    return -0.5 * (cx_cy + cy_cx)


def _trig(theta: np.ndarray):
    """``cos^2, 2 cos sin, sin^2`` with axis-aligned angles snapped to exact 0/1."""
    cos2t = np.cos(2.0 * theta)
    c2 = 0.5 * (1.0 + cos2t)
    s2 = 0.5 * (1.0 - cos2t)
    cs2 = np.sin(2.0 * theta)
    c2, s2, cs2 = (np.where(np.abs(v) < _TRIG_ZERO, 0.0, v) for v in (c2, s2, cs2))
    return c2, cs2, s2


def _lap_raw(a, eps):
    return (_second(a, 0) + _second(a, 1)) / eps**2


def _dir2_raw(a, trig, eps):
    c2, cs2, s2 = trig
    out = c2 * _second(a, 1) + s2 * _second(a, 0)
    if np.any(cs2):
        out = out + cs2 * _mixed(a)
    return out / eps**2


# -- public operators on fields --

def laplacian(u: ScalarField) -> ScalarField:
    """Five-point Laplacian with Neumann (mirrored ghost) boundaries."""
    return u.with_values(_lap_raw(u.values, u.geometry.spacing))


def directional_second(u: ScalarField, theta: OrientationMap) -> ScalarField:
    check_same_geometry(u.geometry, theta.geometry)
    return u.with_values(_dir2_raw(u.values, _trig(theta.theta), u.geometry.spacing))


def directional_fourth(u: ScalarField, theta: OrientationMap) -> ScalarField:
    check_same_geometry(u.geometry, theta.geometry)
    trig = _trig(theta.theta)
    eps = u.geometry.spacing
    return u.with_values(_dir2_raw(_dir2_raw(u.values, trig, eps), trig, eps))


@dataclass(frozen=True, eq=False)
class CoefficientField:
    a1: ScalarField
    a2: ScalarField
    a3: ScalarField
    bound: float = 1.0

    def __post_init__(self):
        check_same_geometry(self.a1.geometry, self.a2.geometry, self.a3.geometry)
        for name in ("a1", "a2", "a3"):
            v = getattr(self, name).values
            if np.any(v < 0) or np.any(v > self.bound):
                raise ValueError(f"{name} must lie in [0, {self.bound}]")

    @property
    def geometry(self) -> GridGeometry:
        return self.a1.geometry

    def is_partition(self) -> bool:
        stack = np.stack([self.a1.values, self.a2.values, self.a3.values])
        return bool(np.all((stack == 0) | (stack == 1)) and np.all(stack.sum(0) == 1))

    @classmethod
    def from_arrays(cls, geometry, a1, a2, a3, bound=1.0):
        mk = lambda a: ScalarField(geometry, np.broadcast_to(a, geometry.shape))
        return cls(mk(a1), mk(a2), mk(a3), bound)

    @classmethod
    def pure(cls, geometry: GridGeometry, which: int) -> "CoefficientField":
        """Constant partition selecting term ``which`` (1, 2 or 3) everywhere."""
        if which not in (1, 2, 3):
            raise ValueError("which must be 1, 2 or 3")
        ones = [1.0 if k == which else 0.0 for k in (1, 2, 3)]
        return cls.from_arrays(geometry, *ones)


def sample_partition(geometry: GridGeometry, probs, seed: int) -> CoefficientField:
    """One-hot coefficients: node picks term k with probability ``probs[k-1]``."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (3,) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0):
        raise ValueError(f"partition probabilities must be 3 non-negatives summing to 1, got {probs}")
    draws = rng_for(seed).uniform(0.0, 1.0, size=geometry.shape)
    edges = np.cumsum(probs)
    choice = np.searchsorted(edges[:-1], draws, side="right")
    return CoefficientField.from_arrays(
        geometry, (choice == 0) * 1.0, (choice == 1) * 1.0, (choice == 2) * 1.0
    )


@dataclass(frozen=True, eq=False)
class HeterogeneousOperator:
    theta: OrientationMap
    coeffs: CoefficientField
    beta: int = 2

    def __post_init__(self):
        check_same_geometry(self.theta.geometry, self.coeffs.geometry)
        if self.beta not in (1, 2):
            raise ValueError("beta must be 1 or 2")

    @property
    def geometry(self) -> GridGeometry:
        return self.coeffs.geometry

    @property
    def has_fourth_order(self) -> bool:
        return self.beta == 2 and bool(np.any(self.coeffs.a3.values != 0))

    def describe(self) -> str:
        c = self.coeffs
        frac = [float(np.mean(f.values)) for f in (c.a1, c.a2, c.a3)]
        g = self.geometry
        return (
            f"{g.width}x{g.height} eps={g.spacing:g} beta={self.beta} "
            f"mean(a1,a2,a3)=({frac[0]:.3f},{frac[1]:.3f},{frac[2]:.3f}) "
            f"theta_const={self.theta.is_constant()}"
        )


def homogeneous_laplacian(geometry: GridGeometry) -> HeterogeneousOperator:
    return HeterogeneousOperator(constant_map(geometry, 0.0), CoefficientField.pure(geometry, 1))


def directional_operator(geometry: GridGeometry, theta: float | OrientationMap, order: int = 2):
    """Pure ``X2`` (order 2) or ``-X4`` (order 4) operator."""
    omap = theta if isinstance(theta, OrientationMap) else constant_map(geometry, theta)
    which = {2: 2, 4: 3}[order]
    return HeterogeneousOperator(omap, CoefficientField.pure(geometry, which))


def apply_raw(op: HeterogeneousOperator, a: np.ndarray) -> np.ndarray:
    """:func:`apply` on a bare ``(height, width)`` array."""
    eps = op.geometry.spacing
    c = op.coeffs
    out = np.zeros_like(a, dtype=float)
    if np.any(c.a1.values):
        out += c.a1.values * _lap_raw(a, eps)
    need2 = np.any(c.a2.values)
    need4 = np.any(c.a3.values)
    if need2 or need4:
        trig = _trig(op.theta.theta)
        x2 = _dir2_raw(a, trig, eps)
        if need2:
            out += c.a2.values * x2
        if need4:
            x4 = _dir2_raw(x2, trig, eps) if op.beta == 2 else x2
            out -= c.a3.values * x4
    return out


def apply(op: HeterogeneousOperator, u: ScalarField) -> ScalarField:
    check_same_geometry(op.geometry, u.geometry)
    return u.with_values(apply_raw(op, u.values))


def operator_matrix(op: HeterogeneousOperator) -> sparse.csr_matrix:
    """Assemble the operator as a sparse matrix acting on row-major vectors.

    Uses probing: the stencil reaches at most two nodes in each axis, so
    unit impulses placed on a stride-5 lattice never overlap.
    """
    g = op.geometry
    h, w = g.shape
    reach, stride = 2, 5
    jj, ii = np.indices((h, w))
    rows, cols, vals = [], [], []
    for b in range(stride):
        for a in range(stride):
            probe = np.zeros((h, w))
            probe[b::stride, a::stride] = 1.0
            out = apply_raw(op, probe)
            src_i = a + stride * np.round((ii - a) / stride).astype(int)
            src_j = b + stride * np.round((jj - b) / stride).astype(int)
            ok = (
                (np.abs(src_i - ii) <= reach)
                & (np.abs(src_j - jj) <= reach)
                & (src_i >= 0) & (src_i < w) & (src_j >= 0) & (src_j < h)
                & (out != 0)
            )
            rows.append((jj * w + ii)[ok])
            cols.append((src_j * w + src_i)[ok])
            vals.append(out[ok])
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(h * w, h * w)
    )
    return mat.tocsr()


@dataclass(frozen=True)
class GaussianParams:
    sigma: float = 1.0
    truncation_radius: float = 4.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.truncation_radius >= 3:
            raise ValueError("truncation_radius must be >= 3 (in units of sigma)")

    def kernel(self) -> np.ndarray:
        """Normalised 1-D taps; radius is ``floor(truncation_radius * sigma)``."""
        r = int(math.floor(self.truncation_radius * self.sigma))
        k = np.arange(-r, r + 1, dtype=float)
        taps = np.exp(-0.5 * (k / self.sigma) ** 2)
        return taps / taps.sum()


def gaussian_smooth(u: ScalarField, g: GaussianParams) -> ScalarField:
    """Separable Gaussian blur, mirror extension at the edges."""
    taps = g.kernel()
    if taps.size == 1:
        return u.with_values(u.values.copy())
    out = ndimage.correlate1d(u.values, taps, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, taps, axis=1, mode="reflect")
    return u.with_values(out)


def forward_output(op: HeterogeneousOperator, stimulus: ScalarField, g: GaussianParams) -> ScalarField:
    """Receptive-field response: the operator applied to the blurred stimulus."""
    check_same_geometry(op.geometry, stimulus.geometry)
    return apply(op, gaussian_smooth(stimulus, g))


def _quadrant_square(a, c, s, eps):
    """Mean over the four one-sided quadrants of ``(c d1 u + s d2 u)^2``."""
    dx = (_fwd(a, 1), _bwd(a, 1))
    dy = (_fwd(a, 0), _bwd(a, 0))
    total = np.zeros_like(a)
    for px in dx:
        for py in dy:
            total += (c * px + s * py) ** 2
    return total / (4.0 * eps**2)


def energy(op: HeterogeneousOperator, u: ScalarField, f: ScalarField) -> float:
    """Quadratic functional whose gradient flow is ``u_t = L u - f``.

    ``eps^2 * sum(a1^2 |grad u|^2 / 2 + a2^2 (X u)^2 / 2 + a3^2 (X2 u)^2 / 2 + f u)``
    with first derivatives averaged over the four one-sided quadrants. For
    constant coefficients its gradient is exactly ``-(L u - f)`` away from the
    boundary ring, and everywhere for ``a1 = 1`` and axis-aligned ``a2 = 1``.
    """
    check_same_geometry(op.geometry, u.geometry, f.geometry)
    eps = u.geometry.spacing
    a = u.values
    c = op.coeffs
    density = f.values * a
    if np.any(c.a1.values):
        grad2 = _quadrant_square(a, 1.0, 0.0, eps) + _quadrant_square(a, 0.0, 1.0, eps)
        density = density + 0.5 * c.a1.values**2 * grad2
    need2 = np.any(c.a2.values)
    need4 = np.any(c.a3.values)
    if need2 or need4:
        theta = op.theta.theta
        if need2:
            cos_t = np.where(np.abs(np.cos(theta)) < _TRIG_ZERO, 0.0, np.cos(theta))
            sin_t = np.where(np.abs(np.sin(theta)) < _TRIG_ZERO, 0.0, np.sin(theta))
            density = density + 0.5 * c.a2.values**2 * _quadrant_square(a, cos_t, sin_t, eps)
        if need4:
            x2 = _dir2_raw(a, _trig(theta), eps)
            density = density + 0.5 * c.a3.values**2 * x2**2
    return float(eps**2 * np.sum(density))


THETA_KINDS = ("constant", "pinwheel", "salt_pepper", "binary_hv")


@dataclass(frozen=True)
class OperatorSpec:
    """Recipe for a :class:`HeterogeneousOperator`; serialises to key/value text.

    The orientation map is drawn from ``seed`` and the partition from
    ``seed + 1``.
    """

    theta_kind: str = "constant"
    theta: float = 0.0
    n_samples: int = 8
    frequency_scale: float | None = None
    prob_horizontal: float = 0.5
    partition: tuple[float, float, float] = (1.0, 0.0, 0.0)
    seed: int = 0
    beta: int = 2

    def __post_init__(self):
        if self.theta_kind not in THETA_KINDS:
            raise ValueError(f"unknown theta kind {self.theta_kind!r}; expected one of {THETA_KINDS}")

    def orientation(self, geometry: GridGeometry) -> OrientationMap:
        if self.theta_kind == "constant":
            return constant_map(geometry, self.theta)
        if self.theta_kind == "pinwheel":
            return pinwheel_map(geometry, PinwheelParams(self.n_samples, self.seed, self.frequency_scale))
        if self.theta_kind == "salt_pepper":
            return salt_pepper_map(geometry, self.seed)
        return binary_hv_map(geometry, self.prob_horizontal, self.seed)

    def build(self, geometry: GridGeometry) -> HeterogeneousOperator:
        omap = self.orientation(geometry)
        probs = tuple(float(p) for p in self.partition)
        if probs.count(1.0) == 1 and probs.count(0.0) == 2:
            coeffs = CoefficientField.pure(geometry, probs.index(1.0) + 1)
        else:
            coeffs = sample_partition(geometry, probs, self.seed + 1)
        return HeterogeneousOperator(omap, coeffs, self.beta)

    def to_dict(self) -> dict[str, str]:
        return {
            "theta_kind": self.theta_kind,
            "theta": repr(float(self.theta)),
            "n_samples": str(self.n_samples),
            "frequency_scale": "auto" if self.frequency_scale is None else repr(float(self.frequency_scale)),
            "prob_horizontal": repr(float(self.prob_horizontal)),
            "partition": ",".join(repr(float(p)) for p in self.partition),
            "seed": str(self.seed),
            "beta": str(self.beta),
        }

    @classmethod
    def from_dict(cls, d) -> "OperatorSpec":
        kw = {}
        if "theta_kind" in d:
            kw["theta_kind"] = d["theta_kind"].strip()
        if "theta" in d:
            kw["theta"] = _parse_angle(d["theta"])
        if "n_samples" in d:
            kw["n_samples"] = int(d["n_samples"])
        if "frequency_scale" in d:
            fs = d["frequency_scale"].strip()
            kw["frequency_scale"] = None if fs in ("", "auto") else float(fs)
        if "prob_horizontal" in d:
            kw["prob_horizontal"] = float(d["prob_horizontal"])
        if "partition" in d:
            parts = tuple(float(Fraction(p.strip())) for p in d["partition"].split(","))
            if len(parts) != 3:
                raise ValueError("partition needs three comma-separated probabilities")
            kw["partition"] = parts
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        if "beta" in d:
            kw["beta"] = int(d["beta"])
        return cls(**kw)


def _parse_angle(text: str) -> float:
    """Accept plain floats or multiples of pi such as ``pi/2``."""
    t = text.strip().lower().replace(" ", "")
    if "pi" not in t:
        return float(t)
    num, _, den = t.partition("/")
    num = num.replace("*", "").replace("pi", "")
    factor = 1.0 if num in ("", "+") else -1.0 if num == "-" else float(num)
    return factor * math.pi / (float(den) if den else 1.0)
