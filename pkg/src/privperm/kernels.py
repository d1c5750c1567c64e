"""Bounded translation-invariant kernels and Gram matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .core import DegenerateDataError

FAMILIES = ("gaussian", "laplacian", "gaussian_product")

_MEDIAN_MAX_POINTS = 1000


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family with its bandwidth.

    ``gaussian``: ``exp(-sigma * ||x - y||_2^2)``;
    ``laplacian``: ``exp(-sigma * ||x - y||_1)``;
    ``gaussian_product``: ``prod_i exp(-(x_i - y_i)^2 / (2 lambda_i^2)) / (sqrt(2 pi) lambda_i)``.
    For the product form ``bandwidth`` holds the per-coordinate lambdas.
    """

    family: str
    bandwidth: Union[float, Tuple[float, ...]]
    dimension: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        bw = np.atleast_1d(np.asarray(self.bandwidth, dtype=float))
        if self.family == "gaussian_product":
            if bw.shape != (self.dimension,):
                raise ValueError("gaussian_product needs one bandwidth per coordinate")
            object.__setattr__(self, "bandwidth", tuple(float(b) for b in bw))
        elif bw.size != 1:
            raise ValueError(f"{self.family} takes a scalar bandwidth")
        else:
            object.__setattr__(self, "bandwidth", float(bw[0]))
        if not np.all((bw > 0) & np.isfinite(bw)):
            raise ValueError("bandwidths must be positive and finite")

    @classmethod
    def gaussian(cls, sigma: float, dimension: int = 1) -> "KernelSpec":
        return cls("gaussian", sigma, dimension)

    @classmethod
    def laplacian(cls, sigma: float, dimension: int = 1) -> "KernelSpec":
        return cls("laplacian", sigma, dimension)

    @classmethod
    def gaussian_product(cls, lambdas) -> "KernelSpec":
        lambdas = tuple(np.atleast_1d(lambdas).astype(float))
        return cls("gaussian_product", lambdas, len(lambdas))

    @property
    def bound(self) -> float:
        return kernel_bound(self)


def kernel_bound(kernel: KernelSpec) -> float:
    """``sup k = k(x, x)``."""
    if kernel.family == "gaussian_product":
        lam = np.asarray(kernel.bandwidth)
        return float(np.prod(1.0 / (math.sqrt(2.0 * math.pi) * lam)))
    return 1.0


def _as_points(points, dimension=None) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        # a flat array is a sample of scalars unless a single d-vector was meant
        x = x.reshape(1, -1) if dimension not in (None, 1) and x.size == dimension else x.reshape(-1, 1)
    if x.ndim != 2:
        raise ValueError("points must be a 2-d array of shape (n, d)")
    if dimension is not None and x.shape[1] != dimension:
        raise ValueError(f"dimension mismatch: kernel has d={dimension}, points have d={x.shape[1]}")
    return x


def _from_distances(kernel: KernelSpec, a: np.ndarray, b=None) -> np.ndarray:
    fam = kernel.family
    if fam == "gaussian_product":
        scale = 1.0 / np.asarray(kernel.bandwidth)
        a = a * scale
        b = None if b is None else b * scale
    metric = "cityblock" if fam == "laplacian" else "sqeuclidean"
    if b is None:
        dist = squareform(pdist(a, metric=metric))
    else:
        dist = cdist(a, b, metric=metric)
    if fam == "gaussian_product":
        return kernel_bound(kernel) * np.exp(-0.5 * dist)
    return np.exp(-kernel.bandwidth * dist)


def evaluate(kernel: KernelSpec, x, y) -> float:
    """``k(x, y)`` for two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    y = np.atleast_1d(np.asarray(y, dtype=float)).reshape(1, -1)
    if x.shape[1] != kernel.dimension or y.shape[1] != kernel.dimension:
        raise ValueError("dimension mismatch between kernel and points")
    return float(_from_distances(kernel, x, y)[0, 0])


def gram(kernel: KernelSpec, a, b=None) -> np.ndarray:
    """Dense Gram matrix ``[k(a_i, b_j)]``.

    With ``b`` omitted the matrix of ``a`` against itself is returned;
    it is exactly symmetric with diagonal ``kernel_bound(kernel)``.
    """
    a = _as_points(a, kernel.dimension)
    if b is None:
        return _from_distances(kernel, a)
    return _from_distances(kernel, a, _as_points(b, kernel.dimension))


def median_heuristic(points) -> float:
    """Median Euclidean distance over all unordered pairs of points.

    Samples larger than 1000 points are thinned by a deterministic stride
    first, capping the cost at about half a million distances.
    """
    x = _as_points(points)
    if len(x) < 2:
        raise DegenerateDataError("median heuristic needs at least two points")
    if len(x) > _MEDIAN_MAX_POINTS:
        x = x[:: math.ceil(len(x) / _MEDIAN_MAX_POINTS)]
    med = float(np.median(pdist(x)))
    if med == 0.0:
        # more than half the pairs coincide; fall back to the positive distances
        d = pdist(x)
        d = d[d > 0]
        if d.size == 0:
            raise DegenerateDataError("all points are identical")
        med = float(np.median(d))
    return med


def median_kernel(points, family: str = "gaussian") -> KernelSpec:
    """Kernel whose bandwidth is set from the median pairwise distance.

    Gaussian: ``sigma = 1 / (2 med^2)``; Laplacian: ``sigma = 1 / med``.
    """
    x = _as_points(points)
    med = median_heuristic(x)
    if family == "gaussian":
        return KernelSpec.gaussian(1.0 / (2.0 * med**2), x.shape[1])
    if family == "laplacian":
        return KernelSpec.laplacian(1.0 / med, x.shape[1])
    raise ValueError(f"median bandwidth not defined for {family!r}")
