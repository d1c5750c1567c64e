"""Brute-force references: exhaustive permutation p-values and sensitivity search.

Everything here evaluates statistics through the plain per-permutation
functions of :mod:`privperm.statistics`, never through the batched path the
test engine uses, so agreement between the two is a meaningful check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import kernels as _k
from . import statistics as st
from .core import RandomStream
from .dp_perm import sample_permutations
from .statistics import PairedData, StatisticDescriptor, TwoSampleData

# same tie rule as the engine's noiseless p-value
_TIE_RTOL = 1e-9
_TIE_ATOL = 1e-12


class OracleBudgetError(ValueError):
    """An enumeration would exceed its configured budget."""


@dataclass(frozen=True)
class OracleBudget:
    """Caps on enumeration size."""

    max_pooled_size: int = 8
    max_grid_points: int = 64
    max_evaluations: int = 10**7

    def __post_init__(self):
        if not 1 <= self.max_pooled_size <= 8:
            raise ValueError("max_pooled_size must lie in [1, 8]")


def _kernels(statistic: StatisticDescriptor, data):
    bound = statistic.bind(data)
    return getattr(bound, "kernel", None), getattr(bound, "kernel_z", None)


def reference_evaluator(statistic: StatisticDescriptor, data, kernel=None, kernel_z=None):
    """``f(perm) -> T(X^perm)`` built on the unbatched statistic functions."""
    kind = statistic.kind
    if kind == "mean_diff":
        return lambda perm: st.mean_diff(data, statistic.p_norm, perm)
    if kind in ("mmd_v", "mmd_u"):
        g = _k.gram(kernel, data.pooled)
        fn = st.mmd_v if kind == "mmd_v" else st.mmd_u
        return lambda perm: fn(g, data.n, data.m, perm)
    gy, gz = _k.gram(kernel, data.y), _k.gram(kernel_z, data.z)
    fn = st.hsic_v if kind == "hsic_v" else st.hsic_u
    return lambda perm: fn(gy, gz, perm)


def _arrangements(data):
    """One representative permutation per distinct arrangement, identity first."""
    if isinstance(data, TwoSampleData):
        size = data.size
        for combo in itertools.combinations(range(size), data.n):
            rest = [i for i in range(size) if i not in combo]
            yield np.array(list(combo) + rest)
    else:
        for perm in itertools.permutations(range(data.n)):
            yield np.array(perm)


def arrangement_count(data) -> int:
    if isinstance(data, TwoSampleData):
        return math.comb(data.size, data.n)
    return math.factorial(data.n)


def exhaustive_statistics(data, statistic: StatisticDescriptor, budget: OracleBudget = OracleBudget()) -> np.ndarray:
    """Statistic values over every distinct arrangement; entry 0 is the observed data.

    Two-sample data enumerates the ``C(n+m, n)`` group assignments (the
    statistic only depends on the assignment); paired data enumerates all
    ``n!`` permutations of the Z rows.
    """
    statistic.check_data(data)
    if data.size > budget.max_pooled_size:
        raise OracleBudgetError(f"size {data.size} exceeds the oracle cap {budget.max_pooled_size}")
    f = reference_evaluator(statistic, data, *_kernels(statistic, data))
    return np.array([f(p) for p in _arrangements(data)])


def _count_at_least(values: np.ndarray, t0: float) -> int:
    tol = _TIE_ATOL + _TIE_RTOL * np.maximum(np.abs(values), abs(t0))
    return int(np.count_nonzero(values >= t0 - tol))


def exhaustive_permutation_pvalue(data, statistic: StatisticDescriptor,
                                  budget: OracleBudget = OracleBudget()) -> Fraction:
    """``#{arrangements with T >= T_obs} / #arrangements``, identity included."""
    values = exhaustive_statistics(data, statistic, budget)
    return Fraction(_count_at_least(values, values[0]), len(values))


def exhaustive_pvalue_sorted(data, statistic: StatisticDescriptor,
                             budget: OracleBudget = OracleBudget()) -> Fraction:
    """Same p-value read off the sorted values: the rank of ``T_obs`` from the top."""
    values = exhaustive_statistics(data, statistic, budget)
    t0 = values[0]
    ordered = np.sort(values)
    # the tie-widened predicate is monotone along the sorted values
    ok = ordered >= t0 - (_TIE_ATOL + _TIE_RTOL * np.maximum(np.abs(ordered), abs(t0)))
    first = int(np.argmax(ok))
    return Fraction(len(ordered) - first, len(ordered))


def all_nonidentity_permutations(size: int) -> np.ndarray:
    """Every permutation of ``range(size)`` except the identity, as rows."""
    perms = np.array(list(itertools.permutations(range(size))), dtype=np.int64)
    return perms[1:]


# ------------------------------------------------------------ sensitivity


def sensitivity_permutations(size: int, extra: int = 10, seed: int = 0) -> np.ndarray:
    """Identity, every transposition and ``extra`` seeded uniform permutations."""
    rows = [np.arange(size)]
    for i, j in itertools.combinations(range(size), 2):
        p = np.arange(size)
        p[[i, j]] = p[[j, i]]
        rows.append(p)
    if extra and size > 1:
        rows.extend(sample_permutations(RandomStream(seed).derive("permutations"), size, extra))
    return np.array(rows)


def _dataset(statistic, rows, n, dy):
    rows = np.asarray(rows, dtype=float)
    if statistic.is_independence:
        return PairedData(rows[:, :dy], rows[:, dy:])
    return TwoSampleData(rows[:n], rows[n:])


def brute_force_sensitivity(statistic: StatisticDescriptor, n: int, m: Optional[int], grid, *,
                            permutations=None, y_dimension: Optional[int] = None,
                            budget: OracleBudget = OracleBudget()) -> float:
    """Largest ``|T(X^p) - T(X~^p)|`` over grid datasets and one-row replacements.

    Parameters
    ----------
    statistic : StatisticDescriptor
        Must carry fixed kernels (a data-driven bandwidth would change
        between neighbours).
    n, m : int
        Sample sizes; ``m`` is ignored for independence statistics.
    grid : array of shape (G, d)
        Candidate rows. For independence statistics a row is ``(y, z)`` and
        ``y_dimension`` gives the split (default: half the columns).
    permutations : array of shape (P, N), optional
        Defaults to :func:`sensitivity_permutations`.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if statistic.kind != "mean_diff" and (statistic.kernel is None or
                                           (statistic.is_independence and statistic.kernel_z is None)):
        raise ValueError("brute_force_sensitivity needs fixed kernels")
    size = n if statistic.is_independence else n + int(m)
    if size > budget.max_pooled_size or len(grid) > budget.max_grid_points:
        raise OracleBudgetError("dataset size or grid exceeds the oracle budget")
    perms = sensitivity_permutations(size) if permutations is None else np.atleast_2d(permutations)
    dy = y_dimension if y_dimension is not None else grid.shape[1] // 2
    g = len(grid)
    cost = g**size * size * (g - 1) * len(perms)
    if cost > budget.max_evaluations:
        raise OracleBudgetError(f"{cost} evaluations exceed the budget of {budget.max_evaluations}")
    kz = statistic.kernel_z
    worst = 0.0
    for idx in itertools.product(range(g), repeat=size):
        base = _dataset(statistic, grid[list(idx)], n, dy)
        f = reference_evaluator(statistic, base, statistic.kernel, kz)
        t = np.array([f(p) for p in perms])
        for row in range(size):
            for alt in range(idx[row] + 1, g):  # each unordered neighbour pair once
                nb = list(idx)
                nb[row] = alt
                f2 = reference_evaluator(statistic, _dataset(statistic, grid[nb], n, dy), statistic.kernel, kz)
                t2 = np.array([f2(p) for p in perms])
                worst = max(worst, float(np.max(np.abs(t - t2))))
    return worst
