"""Private independence testing with dpHSIC and the two subsample baselines.

The data come from a perturbed uniform law on the unit square whose
marginals are exactly uniform, so only a dependence test can detect it.

    python3 demos/independence.py
"""

from privperm import RandomStream, TestConfig, PrivacyBudget, independence_statistic
from privperm import baselines as bl
from privperm.core import InfeasibleError
from privperm.dp_perm import dp_permutation_test
from privperm.synthetic import sample_joint_perturbed_uniform

data = sample_joint_perturbed_uniform(400, 1, 1, 1.0, RandomStream(3))
stat = independence_statistic("hsic_v")

for eps in (0.5, 2.0, 10.0):
    cfg = TestConfig(alpha=0.05, num_permutations=199, seed=4, budget=PrivacyBudget(eps))
    out = dp_permutation_test(data, stat, cfg)
    tot = bl.tot_test(data, stat, cfg, eps)
    try:
        sarrm = f"{bl.sarrm_test(data, stat, cfg, eps).reject}"
    except InfeasibleError:
        sarrm = "infeasible"
    print(f"eps={eps:<5} dpHSIC p={float(out.p_value):.3f} reject={out.reject}  "
          f"TOT p={tot.p_value:.3f}  SARRM reject={sarrm}")
