"""Synthetic data: perturbed uniform densities and discrete two-point laws.

The two-point constructions come with closed-form population MMD and
HSIC values, which serve as oracles for the empirical statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as _k
from .core import RandomStream
from .kernels import KernelSpec
from .statistics import PairedData, TwoSampleData


@dataclass(frozen=True)
class PerturbedUniformSpec:
    """Density ``1 + a prod_i P(x_i)`` on ``[0, 1]^d``."""

    dimension: int
    amplitude: float

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError("amplitude must lie in [0, 1]")


def perturbation_1d(x):
    """Smooth bump on ``(0, 1/2)`` minus its mirror on ``(1/2, 1)``; zero elsewhere.

    ``P(x) = exp(1 - 1 / (1 - (4x - 1)^2))`` on the left half and
    ``-exp(1 - 1 / (1 - (4x - 3)^2))`` on the right half.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    left = (x > 0) & (x < 0.5)
    right = (x > 0.5) & (x < 1)
    out[left] = np.exp(1.0 - 1.0 / (1.0 - (4.0 * x[left] - 1.0) ** 2))
    out[right] = -np.exp(1.0 - 1.0 / (1.0 - (4.0 * x[right] - 3.0) ** 2))
    return out if out.ndim else float(out)


def perturbed_uniform_density(x, spec: PerturbedUniformSpec):
    """Density at one point (shape ``(d,)``) or at each row of an ``(n, d)`` array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != spec.dimension:
        raise ValueError(f"points must have dimension {spec.dimension}")
    inside = np.all((x >= 0) & (x <= 1), axis=1)
    dens = inside * (1.0 + spec.amplitude * np.prod(perturbation_1d(x), axis=1))
    return float(dens[0]) if single else dens


def sample_perturbed_uniform(n: int, spec: PerturbedUniformSpec, stream: RandomStream) -> np.ndarray:
    """Exact draws by rejection from the envelope ``(1 + a)`` times the uniform law.

    Proposals are taken in rounds from one generator; a round proposes
    ``(d + 1)`` uniforms per candidate (d coordinates and the acceptance
    uniform), so the output depends only on the stream and ``n``.
    """
    d, a = spec.dimension, spec.amplitude
    gen = stream.generator()
    out = np.empty((0, d))
    while len(out) < n:
        need = n - len(out)
        batch = max(16, int(need * (1.0 + a) * 1.1) + 8)
        u = gen.random((batch, d + 1))
        x, acc = u[:, :d], u[:, d]
        keep = acc * (1.0 + a) <= 1.0 + a * np.prod(perturbation_1d(x), axis=1)
        out = np.vstack([out, x[keep][:need]])
    return out


def sample_two_sample_perturbed(n: int, m: int, spec: PerturbedUniformSpec, stream: RandomStream):
    """Uniform sample of size ``n`` against a perturbed uniform sample of size ``m``."""
    y = stream.derive("data", 0).generator().random((n, spec.dimension))
    z = sample_perturbed_uniform(m, spec, stream.derive("data", 1))
    return TwoSampleData(y, z)


def sample_joint_perturbed_uniform(n: int, d_y: int, d_z: int, a: float, stream: RandomStream) -> PairedData:
    """Rows of a ``(d_y + d_z)``-dimensional perturbed uniform, split into ``(y, z)``.

    Both marginals are exactly uniform; the perturbation only couples them.
    """
    x = sample_perturbed_uniform(n, PerturbedUniformSpec(d_y + d_z, a), stream)
    return PairedData(x[:, :d_y], x[:, d_y:])


# --------------------------------------------------------------- two-point


def _point(v):
    return np.atleast_1d(np.asarray(v, dtype=float))


@dataclass(frozen=True)
class TwoPointSpec:
    """``P0 = p0 delta_x + (1 - p0) delta_v`` against ``Q0 = q0 delta_x + (1 - q0) delta_v``."""

    x: tuple
    v: tuple
    p0: float
    q0: float

    def __post_init__(self):
        x, v = _point(self.x), _point(self.v)
        if x.shape != v.shape:
            raise ValueError("atoms must share their dimension")
        for w in (self.p0, self.q0):
            if not 0.0 <= w <= 1.0:
                raise ValueError("weights must lie in [0, 1]")
        object.__setattr__(self, "x", tuple(x))
        object.__setattr__(self, "v", tuple(v))

    @property
    def dimension(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class DependentTwoPointSpec:
    """Joint law on ``{y1, y2} x {z1, z2}`` with cell masses ``1/4 + nu`` on the diagonal, ``1/4 - nu`` off it."""

    y1: tuple
    y2: tuple
    z1: tuple
    z2: tuple
    nu: float

    def __post_init__(self):
        for name in ("y1", "y2", "z1", "z2"):
            object.__setattr__(self, name, tuple(_point(getattr(self, name))))
        if len(self.y1) != len(self.y2) or len(self.z1) != len(self.z2):
            raise ValueError("atoms of one coordinate must share their dimension")
        if not 0.0 <= self.nu <= 0.25:
            raise ValueError("nu must lie in [0, 1/4]")

    @property
    def cells(self):
        """``[(y, z, mass)]`` in the order (1,1), (1,2), (2,1), (2,2)."""
        hi, lo = 0.25 + self.nu, 0.25 - self.nu
        return [(self.y1, self.z1, hi), (self.y1, self.z2, lo), (self.y2, self.z1, lo), (self.y2, self.z2, hi)]


def _gap(kernel: KernelSpec, a, b) -> float:
    """``kappa(0) - kappa(a - b)``."""
    if kernel.family not in _k.FAMILIES:
        raise ValueError("two-point oracles need a translation-invariant kernel")
    return _k.kernel_bound(kernel) - _k.evaluate(kernel, a, b)


def two_point_mmd(spec: TwoPointSpec, kernel: KernelSpec) -> float:
    """Population MMD ``sqrt(2 (p0 - q0)^2 (kappa(0) - kappa(x - v)))``."""
    return math.sqrt(max(2.0 * (spec.p0 - spec.q0) ** 2 * _gap(kernel, spec.x, spec.v), 0.0))


def two_point_hsic(spec: DependentTwoPointSpec, kernel_y: KernelSpec, kernel_z: KernelSpec) -> float:
    """Population HSIC ``2 nu sqrt(gap_Y gap_Z)``."""
    gy = _gap(kernel_y, spec.y1, spec.y2)
    gz = _gap(kernel_z, spec.z1, spec.z2)
    return 2.0 * spec.nu * math.sqrt(max(gy * gz, 0.0))


def sample_two_point(n: int, atoms, weights, stream: RandomStream) -> np.ndarray:
    """``n`` categorical draws over ``atoms`` (rows) with probabilities ``weights``."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    w = np.asarray(weights, dtype=float)
    if len(w) != len(atoms) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
        raise ValueError("weights must be a probability vector over the atoms")
    u = stream.uniforms(n)
    # zero-mass atoms have empty intervals; the clamp guards against roundoff in the total
    idx = np.minimum(np.searchsorted(np.cumsum(w), u, side="right"), np.flatnonzero(w)[-1])
    return atoms[idx]


def sample_two_point_pair(n: int, m: int, spec: TwoPointSpec, stream: RandomStream):
    """``n`` draws from ``P0`` and ``m`` from ``Q0`` as ``TwoSampleData``."""
    atoms = [spec.x, spec.v]
    y = sample_two_point(n, atoms, [spec.p0, 1.0 - spec.p0], stream.derive("data", 0))
    z = sample_two_point(m, atoms, [spec.q0, 1.0 - spec.q0], stream.derive("data", 1))
    return TwoSampleData(y, z)


def sample_dependent_two_point(n: int, spec: DependentTwoPointSpec, stream: RandomStream) -> PairedData:
    """``n`` paired draws from the dependent two-point law."""
    cells = spec.cells
    idx = sample_two_point(n, np.arange(4)[:, None], [c[2] for c in cells], stream)[:, 0].astype(int)
    ys = np.array([c[0] for c in cells])
    zs = np.array([c[1] for c in cells])
    return PairedData(ys[idx], zs[idx])
