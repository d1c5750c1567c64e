"""Subsample-and-aggregate private tests: TOT (Tulap noise) and SARRM (randomized response).

Both split the data into disjoint blocks, run the non-private Monte Carlo
permutation test on each block and release only a privatized aggregate of
the block decisions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .core import ConvergenceError, InfeasibleError, RandomStream, TestConfig
from .dp_perm import TestOutcome, dp_permutation_test, rejects, sample_permutations
from .statistics import PairedData, StatisticDescriptor, TwoSampleData

_BISECT_TOL = 1e-10
_BISECT_ITERS = 200


# ------------------------------------------------------------------ Tulap


@dataclass(frozen=True)
class TulapParam:
    """Tulap noise parameter ``b = exp(-epsilon)``."""

    b: float

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"Tulap parameter b must lie in (0, 1), got {self.b}")

    @classmethod
    def from_epsilon(cls, epsilon: float) -> "TulapParam":
        return cls(math.exp(-epsilon))


def _b(b) -> float:
    return b.b if isinstance(b, TulapParam) else TulapParam(float(b)).b


def tulap_cdf(b, x):
    """CDF of the Tulap law with parameter ``b`` (no truncation).

    ``[x]`` is the nearest integer to ``x``; the CDF is continuous at
    half-integers so the rounding rule there does not matter.
    """
    b = _b(b)
    x = np.asarray(x, dtype=float)
    r = np.rint(x)
    with np.errstate(over="ignore", invalid="ignore"):
        lo = b ** (-r) * (b + (x - r + 0.5) * (1.0 - b)) / (1.0 + b)
        hi = 1.0 - b ** r * (b + (r - x + 0.5) * (1.0 - b)) / (1.0 + b)
    out = np.where(x <= 0, lo, hi)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def tulap_sample(b, stream: RandomStream, size=None):
    """Draws ``g1 - g2 + u`` with ``g ~ Geometric(1 - b)`` on ``{0, 1, ..}`` and ``u ~ U(-1/2, 1/2)``.

    Each draw consumes three consecutive uniforms of ``stream``.
    """
    b = _b(b)
    shape = () if size is None else (size if isinstance(size, tuple) else (int(size),))
    u = stream.uniforms(shape + (3,))
    g = np.floor(np.log(u[..., :2]) / math.log(b))
    out = g[..., 0] - g[..., 1] + (u[..., 2] - 0.5)
    return float(out) if size is None else out


# ------------------------------------------------------------ partitions


def _split_order(stream: RandomStream, size: int, blocks: int):
    order = sample_permutations(stream, size, 1)[0] if size > 1 else np.zeros(1, dtype=np.int64)
    return np.array_split(order, blocks)


def partition(data, blocks: int, stream: RandomStream):
    """Disjoint sub-datasets after a seeded shuffle.

    Two-sample data is shuffled within each sample and every block takes a
    near-equal share of both samples; paired data is shuffled by rows.
    Block sizes differ by at most one row per sample.
    """
    if blocks < 1:
        raise ValueError("need at least one block")
    if isinstance(data, TwoSampleData):
        if blocks > min(data.n, data.m):
            raise ValueError(f"cannot split samples of sizes {data.n}, {data.m} into {blocks} blocks")
        ys = _split_order(stream.derive("partition", 0), data.n, blocks)
        zs = _split_order(stream.derive("partition", 1), data.m, blocks)
        return [TwoSampleData(data.y[iy], data.z[iz]) for iy, iz in zip(ys, zs)]
    if isinstance(data, PairedData):
        if blocks > data.n:
            raise ValueError(f"cannot split {data.n} rows into {blocks} blocks")
        return [PairedData(data.y[i], data.z[i]) for i in _split_order(stream.derive("partition", 0), data.n, blocks)]
    raise TypeError(f"unsupported data type {type(data).__name__}")


def _rows(data) -> int:
    return min(data.n, data.m) if isinstance(data, TwoSampleData) else data.n


def effective_subtest_level(alpha0: float, num_permutations: int) -> float:
    """Null rejection probability ``floor((B + 1) alpha0) / (B + 1)`` of a Monte Carlo sub-test."""
    return math.floor((num_permutations + 1) * alpha0) / (num_permutations + 1)


def subtest_pvalues(data, statistic: StatisticDescriptor, config: TestConfig, blocks: int,
                    stream: RandomStream, cache: Optional[dict] = None):
    """Non-private permutation p-values of the ``blocks`` sub-datasets.

    The p-values do not depend on the privacy level, so callers sweeping
    over levels may pass a ``cache`` dict keyed by ``blocks``.
    """
    if cache is not None and blocks in cache:
        return cache[blocks]
    parts = partition(data, blocks, stream)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sub = TestConfig(alpha=0.5, num_permutations=config.num_permutations, seed=config.seed)
    pv = [
        dp_permutation_test(part, statistic, sub, stream=stream.derive("subtest", s)).p_value
        for s, part in enumerate(parts)
    ]
    if cache is not None:
        cache[blocks] = pv
    return pv


# -------------------------------------------------------------------- TOT


def tot_pvalue(rejections_noisy: float, num_blocks: int, alpha0: float, b) -> float:
    """``sum_s Binom(s; S, alpha0) F_b(s - z)``, the TOT p-value of the noisy count ``z``."""
    s = np.arange(num_blocks + 1)
    w = stats.binom.pmf(s, num_blocks, alpha0)
    return float(np.clip(w @ tulap_cdf(b, s - rejections_noisy), 0.0, 1.0))


def tot_test(data, statistic: StatisticDescriptor, config: TestConfig, epsilon: float, *,
             num_blocks: Optional[int] = None, alpha0: Optional[float] = None,
             stream: Optional[RandomStream] = None, cache: Optional[dict] = None) -> TestOutcome:
    """Test of tests: Tulap-noised count of sub-test rejections.

    Defaults: ``S = floor(sqrt(n))`` blocks (``n`` the smaller sample size for
    two-sample data) and sub-test level ``alpha0 = min(5 alpha, 0.5)``.
    ``noise_scale`` of the outcome holds the Tulap parameter ``b`` and
    ``noisy_statistic`` the noisy count ``z``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    root = stream if stream is not None else RandomStream(config.seed)
    n = _rows(data)
    S = math.isqrt(n) if num_blocks is None else int(num_blocks)
    if not 1 <= S <= n:
        raise ValueError(f"need 1 <= S <= n, got S={S}, n={n}")
    a0 = min(5 * config.alpha, 0.5) if alpha0 is None else alpha0
    pv = subtest_pvalues(data, statistic, config, S, root, cache)
    count = sum(rejects(p, a0) for p in pv)
    if math.isinf(epsilon):
        b, z = 0.0, float(count)
        s = np.arange(S + 1)
        p = float(stats.binom.pmf(s, S, a0) @ (s >= z))
    else:
        b = math.exp(-epsilon)
        z = count + tulap_sample(b, root.derive("tulap"))
        p = tot_pvalue(z, S, a0, b)
    return TestOutcome(
        p_value=p, reject=p <= config.alpha, noisy_statistic=float(z), noise_scale=b,
        num_permutations=config.num_permutations, seed=int(config.seed), mechanism="tot",
        alpha=config.alpha, epsilon=epsilon, delta=0.0, statistic=statistic.kind,
    )


# ------------------------------------------------------------------ SARRM


@dataclass(frozen=True)
class SarrmParams:
    """Majority threshold ``k`` (``2k+1`` blocks), retention probability ``p`` and sub-test level."""

    k: int
    p: float
    alpha0: float

    @property
    def num_blocks(self) -> int:
        return 2 * self.k + 1

    @property
    def q(self) -> float:
        return _q(self.p, self.alpha0)


def _q(p, alpha0):
    return p * alpha0 + (1.0 - p) * (1.0 - alpha0)


def sarrm_level(k: int, p: float, alpha0: float) -> float:
    """``P(Bin(2k+1, q) > k)`` with ``q = p alpha0 + (1 - p)(1 - alpha0)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(stats.binom.sf(k, 2 * k + 1, _q(p, alpha0)))


def sarrm_dp_epsilon(k: int, p: float) -> float:
    """Privacy level of the randomized-response majority with parameters ``(k, p)``.

    ``log P(B1 > k) - log P(B0 > k)`` where ``B0 ~ Bin(2k+1, 1-p)`` and
    ``B1 ~ Bern(p) + Bin(2k, 1-p)``, evaluated on the log scale.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.5 <= p <= 1.0:
        raise ValueError("p must lie in [0.5, 1]")
    if p == 1.0:
        return math.inf
    r = 1.0 - p
    log_p0 = _log_tail(k + 1, 2 * k + 1, r)
    log_p1 = np.logaddexp(math.log(p) + _log_tail(k, 2 * k, r), math.log(r) + _log_tail(k + 1, 2 * k, r))
    return max(float(log_p1 - log_p0), 0.0)


def _log_tail(lo: int, n: int, r: float) -> float:
    """``log P(Bin(n, r) >= lo)`` summed term by term, free of underflow."""
    return float(logsumexp(stats.binom.logpmf(np.arange(lo, n + 1), n, r)))


def _bisect(f, lo, hi, target):
    """Root of increasing ``f`` at ``target`` on ``[lo, hi]``; returns ``(lo, hi)`` bracket."""
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if abs(val - target) <= _BISECT_TOL or hi - lo <= 1e-15 * max(1.0, abs(mid)):
            return mid, lo, hi
        if val < target:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not reach tolerance {_BISECT_TOL}")


def sarrm_retention(k: int, epsilon: float) -> float:
    """``p`` in ``(1/2, 1)`` with ``sarrm_dp_epsilon(k, p) = epsilon``."""
    if math.isinf(epsilon):
        return 1.0
    p, _, _ = _bisect(lambda x: sarrm_dp_epsilon(k, x), 0.5, 1.0, epsilon)
    return p


def sarrm_params(alpha: float, epsilon: float, alpha0_min: float = 0.0025, k_max: int = 1000) -> SarrmParams:
    """Smallest feasible ``k`` and its ``p`` and ``alpha0``.

    ``k`` qualifies when ``sarrm_level(k, p, alpha0_min) <= alpha`` with ``p``
    matched to ``epsilon``; qualification is monotone in ``k`` so the search
    bisects over ``[1, k_max]``. ``alpha0`` then solves
    ``sarrm_level(k, p, alpha0) = alpha`` (the lower bracket end is returned,
    so the level never exceeds ``alpha``).

    Raises
    ------
    InfeasibleError
        No ``k <= k_max`` qualifies.
    """
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if k_max < 1:
        raise InfeasibleError(f"SARRM needs at least 3 blocks (k_max={k_max})")

    def ok(k):
        return sarrm_level(k, sarrm_retention(k, epsilon), alpha0_min) <= alpha

    if not ok(k_max):
        raise InfeasibleError(f"SARRM infeasible: no k <= {k_max} reaches level {alpha} at epsilon={epsilon}")
    lo, hi = 0, k_max  # ok(hi) holds; ok(lo) is taken as false
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    k = hi
    p = sarrm_retention(k, epsilon)
    if sarrm_level(k, p, 0.5) <= alpha:
        a0 = 0.5
    else:
        _, a0, _ = _bisect(lambda a: sarrm_level(k, p, a), alpha0_min, 0.5, alpha)
    return SarrmParams(k=k, p=p, alpha0=a0)


def sarrm_k_max(n: int) -> int:
    """Largest ``k`` with ``2k + 1 <= n`` blocks of at least one row."""
    return (n - 1) // 2


def sarrm_statistic(indicators, p: float, stream: RandomStream) -> int:
    """``T = sum_s r_p(t_s)``: each bit is kept with probability ``p``, flipped otherwise."""
    t = np.asarray(indicators, dtype=bool)
    keep = stream.uniforms(len(t)) < p
    return int(np.count_nonzero(np.where(keep, t, ~t)))


def sarrm_test(data, statistic: StatisticDescriptor, config: TestConfig, epsilon: float, *,
               params: Optional[SarrmParams] = None, alpha0_min: float = 0.0025,
               stream: Optional[RandomStream] = None, cache: Optional[dict] = None) -> TestOutcome:
    """Majority vote of randomized-response sub-test decisions.

    Rejects iff ``T > k``. The reported ``p_value`` is the null tail
    ``P(Bin(2k+1, q) >= T)``; ``noisy_statistic`` is ``T`` and
    ``noise_scale`` the flip probability ``1 - p``.

    Raises
    ------
    InfeasibleError
        The sample is too small for the requested ``epsilon`` and ``alpha``.
    """
    root = stream if stream is not None else RandomStream(config.seed)
    if params is None:
        params = sarrm_params(config.alpha, epsilon, alpha0_min, sarrm_k_max(_rows(data)))
    if params.num_blocks > _rows(data):
        raise InfeasibleError(f"SARRM needs {params.num_blocks} blocks but only {_rows(data)} rows")
    pv = subtest_pvalues(data, statistic, config, params.num_blocks, root, cache)
    t = [rejects(p, params.alpha0) for p in pv]
    T = sarrm_statistic(t, params.p, root.derive("response"))
    tail = float(stats.binom.sf(T - 1, params.num_blocks, params.q))
    return TestOutcome(
        p_value=tail, reject=T > params.k, noisy_statistic=float(T), noise_scale=1.0 - params.p,
        num_permutations=config.num_permutations, seed=int(config.seed), mechanism="sarrm",
        alpha=config.alpha, epsilon=epsilon, delta=0.0, statistic=statistic.kind,
    )
