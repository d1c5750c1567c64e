import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from scipy import stats

from privperm.core import (
    PrivacyBudget,
    RandomStream,
    TestConfig,
    laplace_from_uniform,
    laplace_sample,
    laplace_samples,
    min_permutations,
    xi_of,
)


def test_xi_pure_dp_is_epsilon():
    assert xi_of(PrivacyBudget(0.7)) == 0.7


def test_xi_with_delta():
    # 1 + ln(1 / 0.9)
    assert xi_of(PrivacyBudget(1.0, 0.1)) == pytest.approx(1.1053605156578263, abs=1e-15)
    assert PrivacyBudget(1.0, 0.1).xi == xi_of(PrivacyBudget(1.0, 0.1))


@pytest.mark.parametrize("eps,delta", [(0.0, 0.0), (-1.0, 0.0), (math.inf, 0.0), (1.0, 1.0), (1.0, -0.1)])
def test_budget_rejects_invalid(eps, delta):
    with pytest.raises(ValueError):
        PrivacyBudget(eps, delta)


def test_min_permutations_values():
    # ceil(6 / 0.05 * ln 20) = ceil(359.487...)
    assert min_permutations(0.05, 0.1) == 360
    assert min_permutations(0.5, 0.5) == math.ceil(12 * math.log(4))
    with pytest.raises(ValueError):
        min_permutations(0.0, 0.1)


@given(hst.floats(0.001, 0.999), hst.floats(0.001, 0.999))
def test_min_permutations_is_smallest(alpha, beta):
    b = min_permutations(alpha, beta)
    bound = 6.0 / alpha * math.log(2.0 / beta)
    assert b >= bound and b - 1 < bound


def test_config_validation_and_warning():
    with pytest.raises(ValueError):
        TestConfig(alpha=1.5)
    with pytest.raises(ValueError):
        TestConfig(num_permutations=0)
    with pytest.warns(UserWarning):
        TestConfig(alpha=0.05, num_permutations=18)


def test_stream_is_deterministic_and_keyed():
    a = RandomStream(7, 3).uniforms(5)
    assert np.array_equal(a, RandomStream(7, 3).uniforms(5))
    assert not np.array_equal(a, RandomStream(7, 4).uniforms(5))
    assert not np.array_equal(a, RandomStream(8, 3).uniforms(5))


def test_stream_prefix_property():
    # the k-th draw does not depend on how many draws follow it
    long = RandomStream(1, 2).uniforms(100)
    assert np.array_equal(long[:10], RandomStream(1, 2).uniforms(10))


def test_derive_formula_frozen():
    # BLAKE2b-64 of pack('<QQ', 0, 0) + b"noise", little endian
    import hashlib
    import struct

    expect = int.from_bytes(hashlib.blake2b(struct.pack("<QQ", 0, 0) + b"noise", digest_size=8).digest(), "little")
    assert RandomStream(5).derive("noise").stream_index == expect
    assert RandomStream(5).derive("noise", 1) != RandomStream(5).derive("noise", 0)
    assert RandomStream(5).derive("noise") != RandomStream(5).derive("permutations")


def test_uniforms_open_interval():
    u = RandomStream(0).uniforms(10000)
    assert u.min() > 0 and u.max() < 1


def test_laplace_inverse_cdf_values():
    assert laplace_from_uniform(0.5) == 0.0
    assert laplace_from_uniform(0.25) == pytest.approx(-math.log(2), abs=1e-15)
    assert laplace_from_uniform(0.75) == pytest.approx(math.log(2), abs=1e-15)


def test_laplace_sample_consumes_one_uniform():
    s = RandomStream(3, 9)
    assert laplace_sample(s) == laplace_from_uniform(s.uniforms())
    assert np.array_equal(laplace_samples(s, 4), laplace_from_uniform(s.uniforms(4)))


@settings(deadline=None, max_examples=5)
@given(hst.integers(0, 2**63))
def test_laplace_distribution(seed):
    x = laplace_samples(RandomStream(seed), 20000)
    assert stats.kstest(x, "laplace").pvalue > 1e-4
