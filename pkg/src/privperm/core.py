"""Privacy budgets, test configuration and deterministic random streams."""

from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

_UINT64_MAX = 2**64 - 1


class InfeasibleError(RuntimeError):
    """A baseline cannot be run with the requested privacy level, level and sample size."""


class DegenerateDataError(ValueError):
    """Input data carries no usable spread (e.g. all points identical)."""


class ConvergenceError(RuntimeError):
    """A bisection search failed to reach its tolerance."""


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential-privacy budget."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")

    @property
    def xi(self) -> float:
        return xi_of(self)


def xi_of(budget: PrivacyBudget) -> float:
    """Effective Laplace calibration parameter ``epsilon + log(1 / (1 - delta))``."""
    return budget.epsilon - math.log1p(-budget.delta)


def min_permutations(alpha: float, beta: float) -> int:
    """Smallest B with ``B >= 6 / alpha * log(2 / beta)``.

    Number of Monte Carlo permutations under which the uniform power
    guarantee of the private permutation test holds with probability
    at least ``1 - beta``.
    """
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("alpha and beta must lie in (0, 1)")
    return math.ceil(6.0 / alpha * math.log(2.0 / beta))


@dataclass(frozen=True)
class TestConfig:
    """Parameters shared by every permutation test in the package.

    ``budget=None`` gives the classical (non-private) Monte Carlo
    permutation test.
    """

    __test__ = False  # keep pytest from collecting this class

    alpha: float = 0.05
    num_permutations: int = 500
    seed: int = 0
    budget: Optional[PrivacyBudget] = None
    exact_level_randomization: bool = False
    keep_statistics: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.num_permutations) != self.num_permutations or self.num_permutations < 1:
            raise ValueError(f"num_permutations must be a positive integer, got {self.num_permutations}")
        if not 0 <= int(self.seed) <= _UINT64_MAX:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if (self.num_permutations + 1) * self.alpha < 1.0 - 1e-12:
            warnings.warn(
                f"B={self.num_permutations} < 1/alpha - 1: the test can never reject",
                stacklevel=3,
            )


# Stream derivation: child index = first 8 bytes (little endian) of
# BLAKE2b(pack('<QQ', parent_index, index) + tag). Purpose tags used in
# the package: "permutations", "noise", "randomize", "tulap", "response",
# "partition", "subtest", "data", "cell", "rep", "test".


@dataclass(frozen=True)
class RandomStream:
    """A counter-based random stream keyed by ``(master_seed, stream_index)``.

    The stream is a Philox4x64 generator whose 128-bit key is the pair
    itself, so the k-th variate drawn from a stream depends only on the
    pair and on k.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        for v in (self.master_seed, self.stream_index):
            if not 0 <= int(v) <= _UINT64_MAX:
                raise ValueError("stream keys must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, tag: str, index: int = 0) -> "RandomStream":
        payload = struct.pack("<QQ", self.stream_index, int(index)) + tag.encode()
        digest = hashlib.blake2b(payload, digest_size=8).digest()
        return RandomStream(self.master_seed, int.from_bytes(digest, "little"))

    def uniforms(self, size=None) -> np.ndarray:
        """Draws on the open interval (0, 1) with 53-bit resolution."""
        k = self.generator().integers(0, 2**53, size=size, dtype=np.int64)
        return (k + 0.5) / 2.0**53


def laplace_from_uniform(u):
    """Inverse CDF of the standard Laplace law."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(u < 0.5, np.log(2.0 * u), -np.log(2.0 * (1.0 - u)))
    return out if out.ndim else float(out)


def laplace_sample(stream: RandomStream) -> float:
    """One standard Laplace(0, 1) draw consuming exactly one uniform."""
    return laplace_from_uniform(stream.uniforms())


def laplace_samples(stream: RandomStream, size: int) -> np.ndarray:
    """``size`` i.i.d. standard Laplace draws; draw i uses the i-th uniform of the stream."""
    return laplace_from_uniform(stream.uniforms(size))
