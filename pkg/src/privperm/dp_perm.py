"""Differentially private Monte Carlo permutation tests.

The engine evaluates a statistic on the identity arrangement and on ``B``
uniformly drawn permutations, adds i.i.d. Laplace noise to every value and
returns the usual Monte Carlo permutation p-value of the noisy values.

Random streams used under the root stream of a test:

* ``derive("permutations")``: permutation ``i`` (1-based) is built by
  Fisher-Yates from uniforms ``(i-1)(N-1) .. i(N-1)-1`` of this stream;
* ``derive("noise")``: uniform ``i`` gives the Laplace variate of ``M_i``;
* ``derive("randomize")``: first uniform drives exact-level randomization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .core import RandomStream, TestConfig, laplace_from_uniform, xi_of
from .statistics import BoundStatistic, StatisticDescriptor

MECHANISMS = ("refined", "naive", "nonprivate")

_CHUNK = 256
# ties between noiseless statistics are decided up to roundoff, so that
# reordered floating-point sums of equal quantities still count as ties
_TIE_RTOL = 1e-9
_TIE_ATOL = 1e-12


@dataclass
class TestOutcome:
    """Result of one (possibly private) permutation test."""

    __test__ = False

    p_value: Fraction
    reject: bool
    noisy_statistic: float
    noise_scale: float
    num_permutations: int
    seed: int
    mechanism: str
    alpha: float
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    statistic: str = ""
    sensitivity: Optional[float] = None
    randomized_reject: Optional[bool] = None
    noisy_statistics: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def final_reject(self) -> bool:
        """Decision after the optional exact-level randomization."""
        return self.reject if self.randomized_reject is None else self.randomized_reject

    def to_dict(self) -> dict:
        return {
            "p_value": float(self.p_value),
            "reject": bool(self.final_reject),
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "B": self.num_permutations,
            "statistic": self.statistic,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
        }


# ------------------------------------------------------------ permutations


def fisher_yates(uniforms: np.ndarray) -> np.ndarray:
    """Row-wise Fisher-Yates shuffles of ``range(N)`` from ``(rows, N-1)`` uniforms.

    Step ``j`` (for ``j = N-1 .. 1``) swaps position ``j`` with position
    ``floor(u * (j + 1))`` where ``u`` is column ``N-1-j`` of the row.
    """
    u = np.atleast_2d(uniforms)
    rows, size = u.shape[0], u.shape[1] + 1
    perms = np.tile(np.arange(size), (rows, 1))
    r = np.arange(rows)
    for col, j in enumerate(range(size - 1, 0, -1)):
        k = np.minimum((u[:, col] * (j + 1)).astype(np.int64), j)
        tmp = perms[r, j].copy()
        perms[r, j] = perms[r, k]
        perms[r, k] = tmp
    return perms


def iter_permutations(stream: RandomStream, size: int, count: int, chunk: int = _CHUNK):
    """Yield the ``count`` permutations of ``stream`` in blocks of at most ``chunk`` rows."""
    if size == 1:
        for start in range(0, count, chunk):
            yield np.zeros((min(chunk, count - start), 1), dtype=np.int64)
        return
    gen = stream.generator()
    for start in range(0, count, chunk):
        rows = min(chunk, count - start)
        k = gen.integers(0, 2**53, size=(rows, size - 1), dtype=np.int64)
        yield fisher_yates((k + 0.5) / 2.0**53)


def sample_permutations(stream: RandomStream, size: int, count: int) -> np.ndarray:
    """All ``count`` permutations of ``stream`` as a ``(count, size)`` array."""
    if count == 0:
        return np.empty((0, size), dtype=np.int64)
    return np.vstack(list(iter_permutations(stream, size, count)))


def _bound(data, statistic):
    if isinstance(statistic, BoundStatistic):
        return statistic
    return statistic.bind(data)


def permuted_statistics(data, statistic, num_permutations: int, stream: RandomStream,
                        permutations=None) -> np.ndarray:
    """``[T_0, T_1, .., T_B]`` with ``T_0`` the statistic of the observed data.

    ``statistic`` is a ``StatisticDescriptor`` or an already bound statistic.
    Explicit ``permutations`` replace the random draws.
    """
    bound = _bound(data, statistic)
    out = [np.array([bound.value()])]
    if permutations is not None:
        out.append(bound.values(np.asarray(permutations)))
    else:
        for block in iter_permutations(stream.derive("permutations"), bound.size, num_permutations):
            out.append(bound.values(block))
    return np.concatenate(out)


# ------------------------------------------------------------ noise scales


def refined_noise_scale(sensitivity: float, budget) -> float:
    """``2 Delta / xi``."""
    return 2.0 * sensitivity / xi_of(budget)


def naive_noise_scale(sensitivity: float, budget, num_permutations: int) -> float:
    """Per-statistic scale when the budget is split evenly over ``B + 1`` releases."""
    b1 = num_permutations + 1
    return sensitivity / (budget.epsilon / b1 - math.log1p(-budget.delta / b1))


def noise_scale_for(mechanism: str, sensitivity: float, budget, num_permutations: int) -> float:
    """Laplace scale of each statistic; 0 without a budget."""
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    if budget is None or mechanism == "nonprivate":
        return 0.0
    if not sensitivity > 0:
        raise ValueError("a private test needs a positive sensitivity")
    if mechanism == "naive":
        return naive_noise_scale(sensitivity, budget, num_permutations)
    return refined_noise_scale(sensitivity, budget)


# ------------------------------------------------------------- decisions


def pvalue_from_noisy(m: np.ndarray, exact_ties: bool = True) -> Fraction:
    """``(1 + #{i >= 1 : M_i >= M_0}) / (B + 1)``."""
    m = np.asarray(m, dtype=float)
    m0, rest = m[0], m[1:]
    if exact_ties:
        count = int(np.count_nonzero(rest >= m0))
    else:
        tol = _TIE_ATOL + _TIE_RTOL * np.maximum(np.abs(rest), abs(m0))
        count = int(np.count_nonzero(rest >= m0 - tol))
    return Fraction(1 + count, len(m))


def alpha_fraction(alpha: float) -> Fraction:
    """``alpha`` as the rational its shortest decimal repr denotes (0.15 -> 3/20)."""
    return Fraction(repr(float(alpha)))


def rejects(p_value: Fraction, alpha: float) -> bool:
    return p_value <= alpha_fraction(alpha)


def quantile_form_decision(m, alpha: float) -> bool:
    """``M_0 > M_(k)`` with ``k = ceil((1 - alpha)(B + 1))`` and ``M_(0) = -inf``.

    Order statistics run over all ``B + 1`` values. Equivalent to
    ``p <= alpha`` for the Monte Carlo p-value.
    """
    m = np.asarray(m, dtype=float)
    total = len(m)
    if total < 1:
        raise ValueError("need at least one value")
    k = math.ceil((1 - alpha_fraction(alpha)) * total)
    threshold = -math.inf if k == 0 else np.sort(m)[k - 1]
    return bool(m[0] > threshold)


def exact_level_probability(alpha: float, num_permutations: int) -> float:
    """Extra rejection probability ``(alpha - gamma) / (1 - gamma)`` after a non-rejection."""
    a = alpha_fraction(alpha)
    gamma = Fraction(math.floor((num_permutations + 1) * a), num_permutations + 1)
    return float((a - gamma) / (1 - gamma))


def randomize_exact_level(outcome: TestOutcome, config: TestConfig, stream: RandomStream) -> bool:
    """Randomized decision whose null level is exactly ``alpha``."""
    if outcome.reject:
        return True
    prob = exact_level_probability(config.alpha, outcome.num_permutations)
    return bool(prob > 0 and float(stream.uniforms()) < prob)


def outcome_from_statistics(stats: np.ndarray, sensitivity: float, config: TestConfig, *,
                            stream: Optional[RandomStream] = None, mechanism: str = "refined",
                            kind: str = "") -> TestOutcome:
    """Noise, p-value and decision for precomputed ``[T_0, .., T_B]``.

    Given the same root stream this reproduces ``dp_permutation_test``
    exactly, which lets callers reuse one statistic vector across
    budgets and mechanisms.
    """
    stats = np.asarray(stats, dtype=float)
    b = len(stats) - 1
    root = stream if stream is not None else RandomStream(config.seed)
    if config.budget is None:
        mechanism = "nonprivate"
    scale = noise_scale_for(mechanism, sensitivity, config.budget, b)
    if scale > 0:
        m = stats + scale * laplace_from_uniform(root.derive("noise").uniforms(b + 1))
    else:
        m = stats.copy()
    p = pvalue_from_noisy(m, exact_ties=scale > 0)
    budget = config.budget
    out = TestOutcome(
        p_value=p,
        reject=rejects(p, config.alpha),
        noisy_statistic=float(m[0]),
        noise_scale=float(scale),
        num_permutations=b,
        seed=int(config.seed),
        mechanism=mechanism,
        alpha=config.alpha,
        epsilon=None if budget is None else budget.epsilon,
        delta=None if budget is None else budget.delta,
        statistic=kind,
        sensitivity=float(sensitivity),
        noisy_statistics=m if config.keep_statistics else None,
    )
    if config.exact_level_randomization:
        out.randomized_reject = randomize_exact_level(out, config, root.derive("randomize"))
    return out


def dp_permutation_test(data, statistic: StatisticDescriptor, config: TestConfig, *,
                        stream: Optional[RandomStream] = None, permutations=None,
                        mechanism: str = "refined") -> TestOutcome:
    """Private permutation test with noise scale ``2 Delta / xi`` per statistic.

    Parameters
    ----------
    data : TwoSampleData or PairedData
    statistic : StatisticDescriptor
        Supplies the statistic and its global sensitivity.
    config : TestConfig
        ``budget=None`` runs the classical Monte Carlo permutation test.
    stream : RandomStream, optional
        Root stream; defaults to ``RandomStream(config.seed)``.
    permutations : array of shape (B, N), optional
        Explicit permutations; ``B`` is then their number.
    mechanism : {"refined", "naive"}

    Returns
    -------
    TestOutcome
    """
    if mechanism not in ("refined", "naive"):
        raise ValueError(f"unknown mechanism {mechanism!r}")
    root = stream if stream is not None else RandomStream(config.seed)
    bound = _bound(data, statistic)
    desc = bound.descriptor
    sens = desc.sensitivity_for(data, bound)
    if config.budget is not None and not sens > 0:
        raise ValueError("a private test needs a positive sensitivity")
    stats = permuted_statistics(data, bound, config.num_permutations, root, permutations)
    return outcome_from_statistics(stats, sens, config, stream=root, mechanism=mechanism, kind=desc.kind)


def naive_dp_permutation_test(data, statistic: StatisticDescriptor, config: TestConfig, *,
                              stream: Optional[RandomStream] = None, permutations=None) -> TestOutcome:
    """Private permutation test that privatizes each of the ``B + 1`` statistics separately."""
    if config.budget is None:
        raise ValueError("the naive mechanism needs a privacy budget")
    return dp_permutation_test(data, statistic, config, stream=stream, permutations=permutations,
                               mechanism="naive")
