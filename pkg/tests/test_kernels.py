import math

import numpy as np
import pytest

from privperm.core import DegenerateDataError
from privperm.kernels import KernelSpec, evaluate, gram, kernel_bound, median_heuristic, median_kernel


def test_gaussian_value():
    k = KernelSpec.gaussian(1.0, 2)
    assert evaluate(k, [0, 0], [1, 1]) == pytest.approx(math.exp(-2), abs=1e-15)


def test_laplacian_value():
    k = KernelSpec.laplacian(0.5, 2)
    assert evaluate(k, [0, 0], [1, -2]) == pytest.approx(math.exp(-1.5), abs=1e-15)


def test_gaussian_product_value_and_bound():
    k = KernelSpec.gaussian_product([1.0, 2.0])
    bound = 1.0 / (2 * math.pi * 2.0)
    assert kernel_bound(k) == pytest.approx(bound, rel=1e-15)
    # exp(-1/2) * exp(-4/8) = exp(-1)
    assert evaluate(k, [0, 0], [1, 2]) == pytest.approx(bound * math.exp(-1.0), rel=1e-14)
    assert evaluate(k, [3, 4], [3, 4]) == pytest.approx(bound, rel=1e-15)


@pytest.mark.parametrize("family", ["gaussian", "laplacian"])
def test_gram_matches_pointwise_and_is_symmetric(family, rng):
    k = KernelSpec(family, 0.7, 3)
    a, b = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    g = gram(k, a, b)
    ref = np.array([[evaluate(k, x, y) for y in b] for x in a])
    assert np.allclose(g, ref, rtol=0, atol=1e-14)
    s = gram(k, a)
    assert np.array_equal(s, s.T)
    assert np.all(np.diag(s) == kernel_bound(k))


def test_gram_dimension_mismatch():
    with pytest.raises(ValueError):
        gram(KernelSpec.gaussian(1.0, 2), np.zeros((3, 3)))


def test_flat_input_is_a_sample_of_scalars():
    g = gram(KernelSpec.gaussian(1.0), [0.0, 1.0, 2.0])
    assert g.shape == (3, 3)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf])
def test_bandwidth_validation(bad):
    with pytest.raises(ValueError):
        KernelSpec.gaussian(bad)


def test_product_needs_one_bandwidth_per_coordinate():
    with pytest.raises(ValueError):
        KernelSpec("gaussian_product", (1.0,), 2)


def test_median_heuristic_values():
    # pairwise distances 1, 2, 3 on the line
    assert median_heuristic([0.0, 1.0, 3.0]) == 2.0
    k = median_kernel([0.0, 1.0, 3.0])
    assert k.bandwidth == pytest.approx(1 / 8)
    assert median_kernel([0.0, 1.0, 3.0], "laplacian").bandwidth == pytest.approx(0.5)


def test_median_heuristic_degenerate():
    with pytest.raises(DegenerateDataError):
        median_heuristic(np.ones((5, 2)))
    with pytest.raises(DegenerateDataError):
        median_heuristic([1.0])


def test_median_heuristic_mostly_tied_uses_positive_distances():
    # 6 of 10 pairs coincide; the positive distances are all 1
    assert median_heuristic([0, 0, 0, 0, 1]) == 1.0


def test_median_heuristic_subsamples_deterministically(rng):
    x = rng.normal(size=(2500, 2))
    assert median_heuristic(x) == median_heuristic(x)
    assert median_heuristic(x) == pytest.approx(median_heuristic(x[::3]), rel=0)
