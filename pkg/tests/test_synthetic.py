import math

import numpy as np
import pytest
from scipy import integrate, stats

from privperm import kernels as K
from privperm import statistics as st
from privperm import synthetic as syn
from privperm.core import RandomStream
from privperm.kernels import KernelSpec

G1 = KernelSpec.gaussian(1.0)


def test_perturbation_values():
    assert syn.perturbation_1d(0.5) == 0.0
    assert syn.perturbation_1d(0.25) == 1.0
    assert syn.perturbation_1d(0.75) == -1.0
    assert syn.perturbation_1d(-0.1) == 0.0 and syn.perturbation_1d(1.0) == 0.0
    x = np.linspace(0, 1, 2001)
    assert np.allclose(syn.perturbation_1d(x), -syn.perturbation_1d(1 - x), atol=1e-15)
    assert np.all(np.abs(syn.perturbation_1d(x)) <= 1)


def test_density_values():
    assert syn.perturbed_uniform_density([0.25], syn.PerturbedUniformSpec(1, 0.5)) == 1.5
    assert syn.perturbed_uniform_density([0.3, 0.9], syn.PerturbedUniformSpec(2, 0.0)) == 1.0
    assert syn.perturbed_uniform_density([1.3], syn.PerturbedUniformSpec(1, 0.5)) == 0.0


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("a", [0.0, 0.25, 0.5, 1.0])
def test_density_nonnegative(d, a, rng):
    x = rng.random((10000, d))
    assert np.all(syn.perturbed_uniform_density(x, syn.PerturbedUniformSpec(d, a)) >= 0)


@pytest.mark.parametrize("d", [1, 2])
def test_density_integrates_to_one(d):
    k = 1000 if d == 2 else 10**6
    g = (np.arange(k) + 0.5) / k
    pts = np.stack(np.meshgrid(*[g] * d, indexing="ij"), -1).reshape(-1, d)
    assert syn.perturbed_uniform_density(pts, syn.PerturbedUniformSpec(d, 1.0)).mean() == pytest.approx(1, abs=1e-3)


def test_sampler_zero_amplitude_is_uniform():
    x = syn.sample_perturbed_uniform(20000, syn.PerturbedUniformSpec(1, 0.0), RandomStream(2))
    assert stats.kstest(x[:, 0], "uniform").pvalue > 1e-3


def test_sampler_matches_density_cdf():
    spec = syn.PerturbedUniformSpec(1, 1.0)
    x = syn.sample_perturbed_uniform(100000, spec, RandomStream(3))[:, 0]
    assert np.all((x >= 0) & (x <= 1))
    grid = np.linspace(0, 1, 2001)
    dens = syn.perturbed_uniform_density(grid[:, None], spec)
    cdf = np.r_[0, integrate.cumulative_trapezoid(dens, grid)]
    ks = stats.kstest(x, lambda t: np.interp(t, grid, cdf)).statistic
    assert ks < 0.01


def test_sampler_mass_shift():
    spec = syn.PerturbedUniformSpec(1, 1.0)
    n = 100000
    x = syn.sample_perturbed_uniform(n, spec, RandomStream(9))[:, 0]
    shift, _ = integrate.quad(syn.perturbation_1d, 0, 0.5)
    p = 0.5 + shift
    assert abs((x < 0.5).mean() - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_joint_sampler_uniform_marginals():
    data = syn.sample_joint_perturbed_uniform(100000, 1, 1, 1.0, RandomStream(5))
    assert stats.kstest(data.y[:, 0], "uniform").pvalue > 1e-3
    assert stats.kstest(data.z[:, 0], "uniform").pvalue > 1e-3


def test_joint_sampler_dependence_is_detected():
    from privperm.core import TestConfig
    from privperm.dp_perm import dp_permutation_test
    from privperm.statistics import StatisticDescriptor

    data = syn.sample_joint_perturbed_uniform(3000, 1, 1, 0.4, RandomStream(6))
    kern = KernelSpec.gaussian(20.0)
    out = dp_permutation_test(data, StatisticDescriptor("hsic_v", kern, kern),
                              TestConfig(alpha=0.05, num_permutations=49, seed=1))
    assert out.reject


def test_two_point_mmd_values():
    assert syn.two_point_mmd(syn.TwoPointSpec([0.0], [1.0], 0.4, 0.4), G1) == 0.0
    v = syn.two_point_mmd(syn.TwoPointSpec([0.0], [1.0], 0.75, 0.25), G1)
    assert v == pytest.approx(math.sqrt(0.5 * (1 - math.exp(-1))), abs=1e-15)
    assert v == pytest.approx(0.5621923865, abs=1e-9)


def test_two_point_hsic_values():
    spec = syn.DependentTwoPointSpec([0.0], [1.0], [0.0], [1.0], 0.25)
    assert syn.two_point_hsic(spec, G1, G1) == pytest.approx(0.5 * (1 - math.exp(-1)), abs=1e-15)
    assert syn.two_point_hsic(spec, G1, G1) == pytest.approx(0.3160602794, abs=1e-9)
    assert syn.two_point_hsic(syn.DependentTwoPointSpec([0.0], [1.0], [0.0], [1.0], 0.0), G1, G1) == 0.0


def test_two_point_sampler_degenerate_weight():
    x = syn.sample_two_point(100, [[1.0], [2.0]], [1.0, 0.0], RandomStream(0))
    assert np.all(x == 1.0)


def test_two_point_sampler_frequencies():
    n = 100000
    x = syn.sample_two_point(n, [[0.0], [1.0], [2.0]], [0.2, 0.5, 0.3], RandomStream(1))[:, 0]
    for atom, w in ((0.0, 0.2), (1.0, 0.5), (2.0, 0.3)):
        assert abs((x == atom).mean() - w) <= 3 * math.sqrt(w * (1 - w) / n)


def test_dependent_sampler_extreme_nu():
    spec = syn.DependentTwoPointSpec([0.0], [1.0], [5.0], [6.0], 0.25)
    data = syn.sample_dependent_two_point(1000, spec, RandomStream(3))
    assert set(zip(data.y[:, 0], data.z[:, 0])) == {(0.0, 5.0), (1.0, 6.0)}


def test_spec_validation():
    with pytest.raises(ValueError):
        syn.PerturbedUniformSpec(1, 1.5)
    with pytest.raises(ValueError):
        syn.TwoPointSpec([0.0], [1.0, 2.0], 0.5, 0.5)
    with pytest.raises(ValueError):
        syn.DependentTwoPointSpec([0.0], [1.0], [0.0], [1.0], 0.3)


def test_empirical_mmd_near_population():
    spec = syn.TwoPointSpec([0.0], [1.0], 0.8, 0.3)
    data = syn.sample_two_point_pair(10000, 10000, spec, RandomStream(8))
    assert abs(st.mmd_v_compressed(data, G1) - syn.two_point_mmd(spec, G1)) < 0.02
