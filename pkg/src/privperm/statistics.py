"""Kernel test statistics, their permuted evaluation and global sensitivities.

Two-sample statistics act on the pooled Gram matrix of ``(y; z)``: a
permutation ``perm`` of ``range(n + m)`` assigns pooled points
``perm[:n]`` to the first sample and ``perm[n:]`` to the second.
Independence statistics permute only the second coordinate: row ``i`` of
the permuted data is ``(y_i, z_perm[i])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from . import kernels as _k
from .kernels import KernelSpec

KINDS = ("mmd_v", "mmd_u", "hsic_v", "hsic_u", "mean_diff")
TWO_SAMPLE_KINDS = ("mmd_v", "mmd_u", "mean_diff")
INDEPENDENCE_KINDS = ("hsic_v", "hsic_u")

_BATCH = 256


def _matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("samples must be 1-d or 2-d arrays")
    return x


@dataclass(frozen=True)
class TwoSampleData:
    """Samples ``y`` (n x d) and ``z`` (m x d) from two distributions."""

    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y, z = _matrix(self.y), _matrix(self.z)
        if len(y) < 1 or len(z) < 1:
            raise ValueError("both samples must be non-empty")
        if y.shape[1] != z.shape[1]:
            raise ValueError("samples must share their dimension")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def m(self) -> int:
        return len(self.z)

    @property
    def pooled(self) -> np.ndarray:
        return np.vstack([self.y, self.z])

    @property
    def size(self) -> int:
        """Length of the permutations acting on this data."""
        return self.n + self.m


@dataclass(frozen=True)
class PairedData:
    """Paired observations ``(y_i, z_i)`` for independence testing."""

    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y, z = _matrix(self.y), _matrix(self.z)
        if len(y) != len(z) or len(y) < 1:
            raise ValueError("y and z need the same positive number of rows")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def size(self) -> int:
        return self.n


def _check_perm(perm, size):
    perm = np.asarray(perm)
    if perm.shape != (size,):
        raise ValueError(f"permutation must have length {size}")
    return perm


# ---------------------------------------------------------------- MMD


def _mmd_blocks(gram_pooled, n, m, perm):
    g = np.asarray(gram_pooled, dtype=float)
    if g.shape != (n + m, n + m):
        raise ValueError(f"Gram matrix is {g.shape}, expected {(n + m, n + m)}")
    perm = np.arange(n + m) if perm is None else _check_perm(perm, n + m)
    iy, iz = perm[:n], perm[n:]
    return g[np.ix_(iy, iy)], g[np.ix_(iz, iz)], g[np.ix_(iy, iz)]


def mmd_v(gram_pooled, n: int, m: int, perm=None) -> float:
    """Plug-in (biased) empirical MMD, i.e. the square root of the V-statistic."""
    gyy, gzz, gyz = _mmd_blocks(gram_pooled, n, m, perm)
    sq = gyy.sum() / n**2 + gzz.sum() / m**2 - 2.0 * gyz.sum() / (n * m)
    return math.sqrt(max(sq, 0.0))


def mmd_u(gram_pooled, n: int, m: int, perm=None) -> float:
    """Unbiased U-statistic estimate of MMD^2 (may be negative)."""
    if n < 2 or m < 2:
        raise ValueError("mmd_u needs at least two points per sample")
    gyy, gzz, gyz = _mmd_blocks(gram_pooled, n, m, perm)
    syy = gyy.sum() - np.trace(gyy)
    szz = gzz.sum() - np.trace(gzz)
    return float(syy / (n * (n - 1)) + szz / (m * (m - 1)) - 2.0 * gyz.sum() / (n * m))


def v_u_gap_mmd(gram_pooled, n: int, m: int) -> float:
    """Closed form of ``mmd_v**2 - mmd_u`` for a kernel with constant diagonal K.

    ``K/n + K/m`` minus the within-sample off-diagonal sums scaled by
    ``1/(n^2 (n-1))`` and ``1/(m^2 (m-1))``.
    """
    if n < 2 or m < 2:
        raise ValueError("the U-statistic needs at least two points per sample")
    gyy, gzz, _ = _mmd_blocks(gram_pooled, n, m, None)
    diag = np.concatenate([np.diag(gyy), np.diag(gzz)])
    K = diag[0]
    if not np.allclose(diag, K, rtol=0, atol=1e-14 * max(1.0, abs(K))):
        raise ValueError("v_u_gap_mmd requires a constant Gram diagonal")
    syy = gyy.sum() - np.trace(gyy)
    szz = gzz.sum() - np.trace(gzz)
    return float(K / n + K / m - syy / (n**2 * (n - 1)) - szz / (m**2 * (m - 1)))


# --------------------------------------------------------------- HSIC


def _hsic_grams(gram_y, gram_z, perm):
    k = np.asarray(gram_y, dtype=float)
    l = np.asarray(gram_z, dtype=float)
    n = k.shape[0]
    if k.shape != (n, n) or l.shape != (n, n):
        raise ValueError("HSIC needs two square Gram matrices of equal size")
    if perm is not None:
        perm = _check_perm(perm, n)
        l = l[np.ix_(perm, perm)]
    return k, l, n


def hsic_v(gram_y, gram_z, perm=None) -> float:
    """Plug-in empirical HSIC (square root of the V-statistic); only Z is permuted."""
    k, l, n = _hsic_grams(gram_y, gram_z, perm)
    sq = (
        np.einsum("ij,ij->", k, l) / n**2
        + k.sum() * l.sum() / n**4
        - 2.0 * (k.sum(axis=1) @ l.sum(axis=1)) / n**3
    )
    return math.sqrt(max(sq, 0.0))


def _distinct_sums(k, l):
    """Sums of ``k l`` over distinct index 2-, 3- and 4-tuples."""
    kt = k - np.diag(np.diag(k))
    lt = l - np.diag(np.diag(l))
    s2 = np.einsum("ij,ij->", kt, lt)
    s3 = kt.sum(axis=1) @ lt.sum(axis=1) - s2
    s4 = kt.sum() * lt.sum() - 4.0 * s3 - 2.0 * s2
    return kt, lt, s2, s3, s4


def hsic_u(gram_y, gram_z, perm=None) -> float:
    """Unbiased U-statistic estimate of HSIC^2, in O(n^2)."""
    k, l, n = _hsic_grams(gram_y, gram_z, perm)
    if n < 4:
        raise ValueError("hsic_u needs n >= 4")
    _, _, s2, s3, s4 = _distinct_sums(k, l)
    return float(
        s2 / (n * (n - 1))
        + s4 / (n * (n - 1) * (n - 2) * (n - 3))
        - 2.0 * s3 / (n * (n - 1) * (n - 2))
    )


def v_u_gap_hsic(gram_y, gram_z, perm=None):
    """The two parts ``(D1, D2)`` of ``hsic_v**2 - hsic_u``.

    Requires constant Gram diagonals ``K`` and ``L``. ``D1`` does not
    depend on the permutation.
    """
    k, l, n = _hsic_grams(gram_y, gram_z, perm)
    if n < 4:
        raise ValueError("hsic_u needs n >= 4")
    K, L = k[0, 0], l[0, 0]
    if not (np.allclose(np.diag(k), K, rtol=0, atol=1e-14) and np.allclose(np.diag(l), L, rtol=0, atol=1e-14)):
        raise ValueError("v_u_gap_hsic requires constant Gram diagonals")
    kt, lt, s2, s3, s4 = _distinct_sums(k, l)
    d1 = (n - 1) / n**2 * K * L - L * kt.sum() / n**3 - K * lt.sum() / n**3
    d2 = (
        -(3 * n**2 - 4 * n + 2) / ((n - 1) * n**4) * s2
        + 2 * (5 * n**2 - 8 * n + 4) / (n**4 * (n - 1) * (n - 2)) * s3
        - (6 * n**2 - 11 * n + 6) / (n**4 * (n - 1) * (n - 2) * (n - 3)) * s4
    )
    return float(d1), float(d2)


# ---------------------------------------------------------- mean diff


def mean_diff(data: TwoSampleData, p_norm: float = 2.0, perm=None) -> float:
    """l_p norm of the difference between the two (permuted) sample means."""
    if p_norm < 1:
        raise ValueError("p_norm must be >= 1")
    x = data.pooled
    perm = np.arange(len(x)) if perm is None else _check_perm(perm, len(x))
    diff = x[perm[: data.n]].mean(axis=0) - x[perm[data.n :]].mean(axis=0)
    return float(np.linalg.norm(diff, ord=p_norm))


# -------------------------------------------------------- sensitivity


def sensitivity(kind: str, n: int, m: Optional[int] = None, K: float = 1.0, L: float = 1.0,
                domain_diameter: Optional[float] = None) -> float:
    """Global sensitivity (uniform over permutations) of a statistic.

    ``n, m`` are the sample sizes (``m`` unused for independence
    statistics), ``K`` and ``L`` the kernel bounds. U-statistic values use
    the upper end of the known constant ranges (8 for MMD, 24 for HSIC).
    """
    if kind in TWO_SAMPLE_KINDS:
        if m is None:
            raise ValueError(f"{kind} needs both sample sizes")
        lo = 2 if kind == "mmd_u" else 1
        if n < lo or m < lo:
            raise ValueError(f"{kind} needs sample sizes >= {lo}")
        if kind == "mmd_v":
            return math.sqrt(2.0 * K) / min(n, m)
        if kind == "mmd_u":
            return 8.0 * K / min(n, m)
        if domain_diameter is None or domain_diameter <= 0:
            raise ValueError("mean_diff needs a positive domain_diameter")
        return domain_diameter / min(n, m)
    if kind == "hsic_v":
        if n < 1:
            raise ValueError("hsic_v needs n >= 1")
        return 4.0 * (n - 1) / n**2 * math.sqrt(K * L)
    if kind == "hsic_u":
        if n < 4:
            raise ValueError("hsic_u needs n >= 4")
        return 24.0 * K * L / n
    raise ValueError(f"unknown statistic kind {kind!r}")


# ---------------------------------------------------- compressed forms


def _unique_weights(x):
    atoms, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    return atoms, inverse.ravel(), counts / counts.sum()


def mmd_v_compressed(data: TwoSampleData, kernel: KernelSpec) -> float:
    """``mmd_v`` of the unpermuted data computed on distinct atoms only.

    Exact for any data; memory is quadratic in the number of distinct
    points instead of the sample size, which makes large samples from
    discrete laws cheap.
    """
    atoms, inv, _ = _unique_weights(data.pooled)
    w = np.zeros(len(atoms))
    np.add.at(w, inv[: data.n], 1.0 / data.n)
    np.add.at(w, inv[data.n :], -1.0 / data.m)
    sq = w @ _k.gram(kernel, atoms) @ w
    return math.sqrt(max(float(sq), 0.0))


def hsic_v_compressed(data: PairedData, kernel_y: KernelSpec, kernel_z: KernelSpec) -> float:
    """``hsic_v`` of the unpermuted data computed on distinct (y, z) rows."""
    joint = np.hstack([data.y, data.z])
    atoms, _, w = _unique_weights(joint)
    dy = data.y.shape[1]
    k = _k.gram(kernel_y, atoms[:, :dy])
    l = _k.gram(kernel_z, atoms[:, dy:])
    kw, lw = k @ w, l @ w
    sq = w @ (k * l) @ w + (w @ kw) * (w @ lw) - 2.0 * (w * kw) @ lw
    return math.sqrt(max(float(sq), 0.0))


# ------------------------------------------------ descriptor & binding


@dataclass(frozen=True)
class StatisticDescriptor:
    """A test statistic paired with its global sensitivity.

    ``kernel`` (and ``kernel_z`` for HSIC) may be left as ``None``, in
    which case a Gaussian kernel with median-heuristic bandwidth is fitted
    when the statistic is bound to data. The median is computed on pooled
    (two-sample) or per-coordinate-block (independence) data, so it is
    invariant under the test's permutations; it is however a function of
    the private data, so pass fixed kernels when the bandwidth itself must
    not leak. ``sensitivity`` overrides the closed-form value.
    """

    kind: str
    kernel: Optional[KernelSpec] = None
    kernel_z: Optional[KernelSpec] = None
    p_norm: float = 2.0
    domain_diameter: Optional[float] = None
    sensitivity: Optional[float] = None
    kernel_family: str = "gaussian"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown statistic kind {self.kind!r}")
        if self.kind == "mean_diff":
            if self.p_norm < 1:
                raise ValueError("p_norm must be >= 1")
            if self.domain_diameter is None and self.sensitivity is None:
                raise ValueError("mean_diff needs a domain_diameter")

    @property
    def is_independence(self) -> bool:
        return self.kind in INDEPENDENCE_KINDS

    def check_data(self, data):
        want = PairedData if self.is_independence else TwoSampleData
        if not isinstance(data, want):
            raise TypeError(f"{self.kind} expects {want.__name__}, got {type(data).__name__}")

    def bind(self, data) -> "BoundStatistic":
        self.check_data(data)
        return BoundStatistic(self, data)

    def sensitivity_for(self, data, bound: Optional["BoundStatistic"] = None) -> float:
        if self.sensitivity is not None:
            return float(self.sensitivity)
        if bound is None:
            bound = self.bind(data)
        if self.is_independence:
            return sensitivity(self.kind, data.n, K=bound.kernel_bounds[0], L=bound.kernel_bounds[1])
        return sensitivity(self.kind, data.n, data.m, K=bound.kernel_bounds[0],
                           domain_diameter=self.domain_diameter)

    def evaluate(self, data, perm=None) -> float:
        return float(self.bind(data).value(perm))


@dataclass
class BoundStatistic:
    """A statistic attached to one dataset, with its Gram matrices cached.

    ``values(perms)`` evaluates a ``(B, size)`` stack of permutations,
    reusing the cached Gram matrices; no kernel is re-evaluated.
    """

    descriptor: StatisticDescriptor
    data: object
    kernel_bounds: tuple = field(init=False, default=(1.0, 1.0))

    def __post_init__(self):
        d, data = self.descriptor, self.data
        kind = d.kind
        if kind in ("mmd_v", "mmd_u"):
            if kind == "mmd_u" and (data.n < 2 or data.m < 2):
                raise ValueError("mmd_u needs at least two points per sample")
            kern = d.kernel or _k.median_kernel(data.pooled, d.kernel_family)
            self.kernel = kern
            self._g = _k.gram(kern, data.pooled)
            self._gdiag = np.diag(self._g).copy()
            self._gtotal = self._g.sum()
            self.kernel_bounds = (_k.kernel_bound(kern), 1.0)
        elif kind in INDEPENDENCE_KINDS:
            if kind == "hsic_u" and data.n < 4:
                raise ValueError("hsic_u needs n >= 4")
            if (d.kernel is None) != (d.kernel_z is None):
                raise ValueError("give both kernel and kernel_z, or neither")
            ky = d.kernel or _k.median_kernel(data.y, d.kernel_family)
            kz = d.kernel_z or _k.median_kernel(data.z, d.kernel_family)
            self.kernel, self.kernel_z = ky, kz
            self._k = _k.gram(ky, data.y)
            self._l = _k.gram(kz, data.z)
            self.kernel_bounds = (_k.kernel_bound(ky), _k.kernel_bound(kz))
            self._ksum = self._k.sum()
            self._krow = self._k.sum(axis=1)
            self._lsum = self._l.sum()
            self._lrow = self._l.sum(axis=1)
            if kind == "hsic_u":
                self._kt = self._k - np.diag(np.diag(self._k))
                self._lt = self._l - np.diag(np.diag(self._l))
                self._ktrow = self._kt.sum(axis=1)
                self._ltrow = self._lt.sum(axis=1)
                self._ktsum = self._kt.sum()
                self._ltsum = self._lt.sum()
        else:
            self._x = data.pooled
            if d.domain_diameter is not None and len(self._x) > 1:
                metric = "chebyshev" if np.isinf(d.p_norm) else "minkowski"
                kw = {} if np.isinf(d.p_norm) else {"p": d.p_norm}
                diam = pdist(self._x, metric=metric, **kw).max()
                if diam > d.domain_diameter * (1 + 1e-12):
                    raise ValueError(
                        f"data spread {diam:.6g} exceeds the declared domain_diameter {d.domain_diameter:.6g}"
                    )

    @property
    def size(self) -> int:
        return self.data.size

    def value(self, perm=None) -> float:
        perm = np.arange(self.size) if perm is None else np.asarray(perm)
        return float(self.values(perm[None, :])[0])

    def values(self, perms) -> np.ndarray:
        perms = np.asarray(perms)
        if perms.ndim != 2 or perms.shape[1] != self.size:
            raise ValueError(f"expected permutations of shape (B, {self.size})")
        out = np.empty(len(perms))
        for start in range(0, len(perms), _BATCH):
            chunk = perms[start : start + _BATCH]
            out[start : start + len(chunk)] = self._values(chunk)
        return out

    def _values(self, perms):
        kind = self.descriptor.kind
        if kind in ("mmd_v", "mmd_u"):
            return self._mmd_values(perms)
        if kind == "mean_diff":
            return self._mean_diff_values(perms)
        return np.array([self._hsic_value(p) for p in perms])

    def _assignment(self, perms):
        n = self.data.n
        a = np.zeros((self.size, len(perms)))
        cols = np.arange(len(perms))
        a[perms[:, :n].T, cols] = 1.0
        return a

    def _mmd_values(self, perms):
        n, m = self.data.n, self.data.m
        a = self._assignment(perms)
        ga = self._g @ a
        syy = np.einsum("ij,ij->j", a, ga)
        rowsum_a = ga.sum(axis=0)  # 1' G a
        syz = rowsum_a - syy
        szz = self._gtotal - syy - 2.0 * syz
        if self.descriptor.kind == "mmd_v":
            sq = syy / n**2 + szz / m**2 - 2.0 * syz / (n * m)
            return np.sqrt(np.maximum(sq, 0.0))
        dy = self._gdiag @ a
        dz = self._gdiag.sum() - dy
        return (syy - dy) / (n * (n - 1)) + (szz - dz) / (m * (m - 1)) - 2.0 * syz / (n * m)

    def _mean_diff_values(self, perms):
        n, m = self.data.n, self.data.m
        a = self._assignment(perms)
        w = a / n - (1.0 - a) / m
        diff = w.T @ self._x
        return np.linalg.norm(diff, ord=self.descriptor.p_norm, axis=1)

    def _hsic_value(self, perm):
        n = self.data.n
        if self.descriptor.kind == "hsic_v":
            lp = self._l[np.ix_(perm, perm)]
            sq = (
                np.einsum("ij,ij->", self._k, lp) / n**2
                + self._ksum * self._lsum / n**4
                - 2.0 * (self._krow @ self._lrow[perm]) / n**3
            )
            return math.sqrt(max(sq, 0.0))
        ltp = self._lt[np.ix_(perm, perm)]
        s2 = np.einsum("ij,ij->", self._kt, ltp)
        s3 = self._ktrow @ self._ltrow[perm] - s2
        s4 = self._ktsum * self._ltsum - 4.0 * s3 - 2.0 * s2
        return (
            s2 / (n * (n - 1))
            + s4 / (n * (n - 1) * (n - 2) * (n - 3))
            - 2.0 * s3 / (n * (n - 1) * (n - 2))
        )


def two_sample_statistic(kind: str = "mmd_v", kernel: Optional[KernelSpec] = None, **kw) -> StatisticDescriptor:
    if kind not in TWO_SAMPLE_KINDS:
        raise ValueError(f"{kind!r} is not a two-sample statistic")
    return StatisticDescriptor(kind, kernel=kernel, **kw)


def independence_statistic(kind: str = "hsic_v", kernel_y: Optional[KernelSpec] = None,
                           kernel_z: Optional[KernelSpec] = None, **kw) -> StatisticDescriptor:
    if kind not in INDEPENDENCE_KINDS:
        raise ValueError(f"{kind!r} is not an independence statistic")
    return StatisticDescriptor(kind, kernel=kernel_y, kernel_z=kernel_z, **kw)
