"""Command-line front end.

Subcommands
-----------
two-sample Y.csv Z.csv      private two-sample test, JSON result on stdout
independence XY.csv --split K   private independence test on columns [:K] vs [K:]
experiment SPEC.json        level/power study, CSV table on stdout or --out

Exit codes: 0 success, 1 some experiment cell failed, 2 malformed input,
3 infeasible baseline.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional, Sequence

from . import baselines as bl
from . import experiments as ex
from .core import InfeasibleError, PrivacyBudget, TestConfig
from .dataio import InputError, read_csv
from .dp_perm import dp_permutation_test
from .kernels import KernelSpec
from .statistics import PairedData, StatisticDescriptor, TwoSampleData

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3

_STATISTICS = {"mmd": "mmd_v", "mmd-u": "mmd_u", "hsic": "hsic_v", "hsic-u": "hsic_u", "mean-diff": "mean_diff"}


def _float(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None


def _bandwidth(s: str):
    if s == "median":
        return s
    v = _float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return v


def _add_test_flags(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=_float, default=0.05, help="test level (default 0.05)")
    p.add_argument("--epsilon", type=_float, default=1.0, help="privacy epsilon; 'inf' runs the non-private test")
    p.add_argument("--delta", type=_float, default=0.0, help="privacy delta (default 0)")
    p.add_argument("--permutations", "-B", type=int, default=500, help="Monte Carlo permutations B (default 500)")
    p.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    p.add_argument("--kernel", choices=("gaussian", "laplacian"), default="gaussian")
    p.add_argument("--bandwidth", type=_bandwidth, default="median",
                   help="'median' or the kernel's scale parameter sigma in exp(-sigma * dist)")
    p.add_argument("--statistic", choices=sorted(_STATISTICS), default=None)
    p.add_argument("--mechanism", choices=("refined", "naive"), default="refined")
    p.add_argument("--baseline", choices=("tot", "sarrm"), default=None,
                   help="run a subsample-and-aggregate baseline instead")
    p.add_argument("--p-norm", type=_float, default=2.0, help="norm for mean-diff (default 2)")
    p.add_argument("--domain-diameter", type=_float, default=None, help="data domain diameter for mean-diff")
    p.add_argument("--threads", type=int, default=None, help="accepted for symmetry; single tests run serially")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privperm", description="Differentially private permutation tests.")
    sub = parser.add_subparsers(dest="command", required=True)
    p2 = sub.add_parser("two-sample", help="test whether two samples share a distribution")
    p2.add_argument("y", help="CSV of the first sample")
    p2.add_argument("z", help="CSV of the second sample")
    _add_test_flags(p2)
    pi = sub.add_parser("independence", help="test independence of two column blocks")
    pi.add_argument("data", help="CSV of paired observations")
    pi.add_argument("--split", type=int, required=True, help="columns [:K] are Y, [K:] are Z")
    _add_test_flags(pi)
    pe = sub.add_parser(
        "experiment", help="run a level/power study",
        description="Run a JSON experiment spec. Cost grows quadratically in n; desk-scale defaults "
                    "are n=500, B=500, R=100.")
    pe.add_argument("spec", help="JSON experiment specification")
    pe.add_argument("--out", default=None, help="CSV output path (default stdout)")
    pe.add_argument("--svg", default=None, help="write a power chart to this path")
    pe.add_argument("--threads", type=int, default=None, help="worker threads (default $PRIVPERM_THREADS or 1)")
    pe.add_argument("--timings", action="store_true", help="append a wall-clock seconds column")
    return parser


def _kernel(args, points) -> Optional[KernelSpec]:
    if args.bandwidth == "median":
        return None
    return KernelSpec(args.kernel, args.bandwidth, points.shape[1])


def _descriptor(args, data, independence: bool) -> StatisticDescriptor:
    name = args.statistic or ("hsic" if independence else "mmd")
    kind = _STATISTICS[name]
    if independence != (kind in ("hsic_v", "hsic_u")):
        raise InputError(f"statistic {name!r} does not fit the {'independence' if independence else 'two-sample'} test")
    if kind == "mean_diff":
        if args.domain_diameter is None:
            raise InputError("mean-diff needs --domain-diameter")
        return StatisticDescriptor(kind, p_norm=args.p_norm, domain_diameter=args.domain_diameter)
    if independence:
        return StatisticDescriptor(kind, _kernel(args, data.y), _kernel(args, data.z), kernel_family=args.kernel)
    return StatisticDescriptor(kind, _kernel(args, data.pooled), kernel_family=args.kernel)


def run_test(args, independence: bool) -> dict:
    if independence:
        x = read_csv(args.data)
        if not 1 <= args.split < x.shape[1]:
            raise InputError(f"--split must lie in [1, {x.shape[1] - 1}]")
        data = PairedData(x[:, : args.split], x[:, args.split:])
    else:
        data = TwoSampleData(read_csv(args.y), read_csv(args.z))
    desc = _descriptor(args, data, independence)
    private = not math.isinf(args.epsilon)
    budget = PrivacyBudget(args.epsilon, args.delta) if private else None
    config = TestConfig(alpha=args.alpha, num_permutations=args.permutations, seed=args.seed, budget=budget)
    if args.baseline == "tot":
        out = bl.tot_test(data, desc, config, args.epsilon)
    elif args.baseline == "sarrm":
        out = bl.sarrm_test(data, desc, config, args.epsilon)
    elif private:
        out = dp_permutation_test(data, desc, config, mechanism=args.mechanism)
    else:
        out = dp_permutation_test(data, desc, config)
    result = out.to_dict()
    if not private:
        result["epsilon"], result["delta"] = None, None
    return result


def _run_experiment(args) -> int:
    spec = ex.ExperimentSpec.load(args.spec)
    rows = ex.run_experiment(spec, threads=args.threads)
    text = ex.rows_to_csv(rows, timings=args.timings)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.svg:
        axis = ex.sweep_axis(spec)
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(ex.rows_to_svg(rows, axis, title=f"{spec.scenario}: power vs {axis}"))
    if ex.any_failed(rows):
        bad = next(r for r in rows if r.status.startswith("failed"))
        print(f"privperm: cell {bad.test} n={bad.n} epsilon={bad.epsilon_label} {bad.status}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "experiment":
            return _run_experiment(args)
        result = run_test(args, independence=args.command == "independence")
    except InfeasibleError as exc:
        print(f"privperm: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, ex.SpecError, ValueError, TypeError, KeyError) as exc:
        print(f"privperm: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(json.dumps(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
