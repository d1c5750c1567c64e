"""Differentially private permutation tests (dpMMD, dpHSIC) and private baselines."""

from .baselines import SarrmParams, TulapParam, sarrm_params, sarrm_test, tot_test, tulap_cdf, tulap_sample
from .core import (
    ConvergenceError,
    DegenerateDataError,
    InfeasibleError,
    PrivacyBudget,
    RandomStream,
    TestConfig,
    laplace_sample,
    min_permutations,
    xi_of,
)
from .dp_perm import (
    TestOutcome,
    dp_permutation_test,
    naive_dp_permutation_test,
    quantile_form_decision,
    randomize_exact_level,
)
from .kernels import KernelSpec, gram, median_heuristic
from .statistics import (
    PairedData,
    StatisticDescriptor,
    TwoSampleData,
    independence_statistic,
    sensitivity,
    two_sample_statistic,
)

__version__ = "0.1.0"
