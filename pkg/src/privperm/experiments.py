"""Level and power studies over parameter grids.

A study is described by a JSON document (see :class:`ExperimentSpec`).
Each data grid point and repetition owns a stream derived from the master
seed and its grid coordinates, so results do not depend on scheduling or on
the number of worker threads.
"""

from __future__ import annotations

import ast
import csv
import io
import itertools
import json
import math
import operator
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import stats as _stats

from . import baselines as bl
from . import synthetic as syn
from .core import InfeasibleError, PrivacyBudget, RandomStream, TestConfig
from .dataio import read_csv
from .dp_perm import outcome_from_statistics, permuted_statistics
from .kernels import KernelSpec, median_kernel
from .statistics import PairedData, StatisticDescriptor, TwoSampleData

SCENARIOS = (
    "two_sample_perturbed_uniform",
    "independence_perturbed_uniform",
    "two_point",
    "independence_two_point",
    "user_data",
)
GRID_AXES = ("epsilon", "delta", "n", "d", "amplitude", "nu")
DATA_AXES = ("n", "d", "amplitude", "nu")
TEST_KEYS = ("dp", "dp_u", "naive", "tot", "sarrm", "nonprivate")

_ALIASES = {
    "dp": "dp", "dpmmd": "dp", "dphsic": "dp",
    "dp_u": "dp_u", "dp-u": "dp_u", "dpmmd-u": "dp_u", "dphsic-u": "dp_u", "u": "dp_u", "ustat": "dp_u",
    "naive": "naive", "naive-dpmmd": "naive", "naive-dphsic": "naive",
    "tot": "tot", "sarrm": "sarrm", "nonprivate": "nonprivate", "non-private": "nonprivate",
}

CSV_COLUMNS = (
    "scenario", "n", "d", "amplitude", "nu", "epsilon", "epsilon_label", "delta", "test",
    "rejections", "repetitions", "power", "ci_low", "ci_high", "status",
)

DEFAULTS = {"n": 500, "d": 1, "amplitude": 0.0, "nu": 0.0, "delta": 0.0, "epsilon": "inf"}


class SpecError(ValueError):
    """Malformed experiment specification."""


# ----------------------------------------------------------- expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"sqrt": math.sqrt, "log": math.log, "exp": math.exp}


def eval_expression(expr, n: int) -> float:
    """Evaluate a number or an arithmetic expression in ``n`` (e.g. ``"10/sqrt(n)"``)."""
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        return float(expr)
    if not isinstance(expr, str):
        raise SpecError(f"cannot interpret {expr!r} as a number")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "n":
                return float(n)
            if node.id == "inf":
                return math.inf
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
                and len(node.args) == 1 and not node.keywords:
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise SpecError(f"unsupported expression {expr!r}")

    try:
        return float(ev(ast.parse(expr.strip(), mode="eval")))
    except (SyntaxError, ZeroDivisionError, OverflowError, ValueError) as exc:
        raise SpecError(f"bad expression {expr!r}: {exc}") from None


# ------------------------------------------------------------------ spec


@dataclass
class ExperimentSpec:
    """A level/power study.

    ``grid`` maps axis names (``epsilon``, ``delta``, ``n``, ``d``,
    ``amplitude``, ``nu``) to lists; ``epsilon`` entries may be expressions in
    ``n`` such as ``"10/sqrt(n)"`` or ``"inf"`` (non-private). ``tests``
    lists test keys or display names. ``data`` is only used by the
    ``user_data`` scenario.
    """

    scenario: str
    grid: Dict[str, list]
    tests: List[str]
    repetitions: int = 100
    alpha: float = 0.05
    B: int = 500
    seed: int = 0
    kernel: str = "gaussian"
    bandwidth: object = "median"
    data: Optional[dict] = None
    sweep: Optional[str] = None
    tests_canonical: List[str] = field(init=False, default_factory=list)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise SpecError(f"unknown scenario {self.scenario!r}")
        if not isinstance(self.grid, dict) or not self.grid:
            raise SpecError("grid must be a non-empty mapping")
        for axis, values in self.grid.items():
            if axis not in GRID_AXES:
                raise SpecError(f"unknown grid axis {axis!r}")
            if not isinstance(values, list) or not values:
                raise SpecError(f"grid axis {axis!r} needs a non-empty list")
        if not self.tests:
            raise SpecError("no tests requested")
        canon = []
        for t in self.tests:
            key = _ALIASES.get(str(t).lower())
            if key is None:
                raise SpecError(f"unknown test {t!r}")
            if key not in canon:
                canon.append(key)
        self.tests_canonical = canon
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise SpecError("repetitions must be a positive integer")
        if not 0 < self.alpha < 1:
            raise SpecError("alpha must lie in (0, 1)")
        if int(self.B) != self.B or self.B < 1:
            raise SpecError("B must be a positive integer")
        if self.kernel not in ("gaussian", "laplacian"):
            raise SpecError("kernel must be gaussian or laplacian")
        if self.bandwidth != "median" and not (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0):
            raise SpecError("bandwidth must be 'median' or a positive number")
        if self.scenario == "user_data" and not isinstance(self.data, dict):
            raise SpecError("user_data needs a 'data' object")
        if self.sweep is not None and self.sweep not in GRID_AXES:
            raise SpecError(f"unknown sweep axis {self.sweep!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        if not isinstance(doc, dict):
            raise SpecError("the spec must be a JSON object")
        allowed = {"scenario", "grid", "tests", "repetitions", "alpha", "B", "seed", "kernel",
                   "bandwidth", "data", "sweep"}
        unknown = set(doc) - allowed
        if unknown:
            raise SpecError(f"unknown spec keys: {sorted(unknown)}")
        missing = {"scenario", "grid", "tests"} - set(doc)
        if missing:
            raise SpecError(f"missing spec keys: {sorted(missing)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecError(f"{path}: {exc}") from None
        return cls.from_dict(doc)

    @property
    def independence(self) -> bool:
        if self.scenario == "user_data":
            return self.data.get("kind") == "independence"
        return self.scenario.startswith("independence")

    def axis(self, name):
        return self.grid.get(name, [DEFAULTS[name]])


# ---------------------------------------------------------------- data


def _load_user_data(spec: ExperimentSpec):
    d = spec.data
    if d.get("kind") == "independence":
        x = read_csv(d["path"])
        k = int(d["split"])
        if not 1 <= k < x.shape[1]:
            raise SpecError("split must leave at least one column on each side")
        return PairedData(x[:, :k], x[:, k:])
    if d.get("kind") == "two_sample":
        return TwoSampleData(read_csv(d["y"]), read_csv(d["z"]))
    raise SpecError("data.kind must be 'two_sample' or 'independence'")


def generate(spec: ExperimentSpec, point: dict, stream: RandomStream, user=None):
    """Dataset for one data grid point and repetition stream."""
    n, d = int(point["n"]), int(point["d"])
    s = spec.scenario
    if s == "two_sample_perturbed_uniform":
        return syn.sample_two_sample_perturbed(n, n, syn.PerturbedUniformSpec(d, float(point["amplitude"])), stream)
    if s == "independence_perturbed_uniform":
        return syn.sample_joint_perturbed_uniform(n, d, d, float(point["amplitude"]), stream)
    if s == "two_point":
        a = float(point["amplitude"])
        tp = syn.TwoPointSpec(np.zeros(d), np.ones(d), 0.5 + a / 2, 0.5 - a / 2)
        return syn.sample_two_point_pair(n, n, tp, stream)
    if s == "independence_two_point":
        dp = syn.DependentTwoPointSpec(np.zeros(d), np.ones(d), np.zeros(d), np.ones(d), float(point["nu"]))
        return syn.sample_dependent_two_point(n, dp, stream)
    return user


# ---------------------------------------------------------------- tests


def _kernel_for(spec, points):
    if spec.bandwidth == "median":
        # the two-point laws put >half the pairs at distance 0; the median rule copes with that
        return median_kernel(points, spec.kernel)
    return KernelSpec(spec.kernel, float(spec.bandwidth), points.shape[1])


def descriptors(spec: ExperimentSpec, data):
    """``(V-form, U-form)`` descriptors with kernels fitted to ``data``."""
    if spec.independence:
        ky, kz = _kernel_for(spec, data.y), _kernel_for(spec, data.z)
        return (StatisticDescriptor("hsic_v", ky, kz), StatisticDescriptor("hsic_u", ky, kz))
    k = _kernel_for(spec, data.pooled)
    return StatisticDescriptor("mmd_v", k), StatisticDescriptor("mmd_u", k)


def display_name(key: str, independence: bool) -> str:
    base = "dpHSIC" if independence else "dpMMD"
    return {"dp": base, "dp_u": base + "-U", "naive": "naive-" + base, "tot": "TOT",
            "sarrm": "SARRM", "nonprivate": "nonprivate"}[key]


@dataclass
class _Budget:
    label: str
    epsilon: float
    delta: float

    @property
    def budget(self):
        return None if math.isinf(self.epsilon) else PrivacyBudget(self.epsilon, self.delta)


def _budgets(spec, n):
    out = []
    for e in spec.axis("epsilon"):
        for dl in spec.axis("delta"):
            eps = eval_expression(e, n)
            delta = eval_expression(dl, n)
            if not eps > 0:
                raise SpecError(f"epsilon {e!r} evaluates to {eps}, not positive")
            out.append(_Budget(str(e), eps, delta))
    return out


def run_unit(spec: ExperimentSpec, point: dict, rep_stream: RandomStream, sarrm_cache: dict, user=None):
    """All decisions for one data grid point and repetition.

    Returns ``{(budget index, test key): True | False | "infeasible" | error string}``.
    Every test shares the repetition's ``test`` stream, so the permutations
    and noise uniforms are common across budgets and mechanisms.
    """
    data = generate(spec, point, rep_stream.derive("data"), user)
    test_stream = rep_stream.derive("test")
    v_desc, u_desc = descriptors(spec, data)
    n = data.n if spec.independence else min(data.n, data.m)
    budgets = _budgets(spec, data.n)
    B = int(spec.B)
    tests = spec.tests_canonical
    out = {}

    stats_v = stats_u = None
    if {"dp", "naive", "nonprivate"} & set(tests):
        bound = v_desc.bind(data)
        sens_v = v_desc.sensitivity_for(data, bound)
        stats_v = permuted_statistics(data, bound, B, test_stream)
    if "dp_u" in tests:
        bound_u = u_desc.bind(data)
        sens_u = u_desc.sensitivity_for(data, bound_u)
        stats_u = permuted_statistics(data, bound_u, B, test_stream)
    sub_cache: dict = {}
    np_config = TestConfig(alpha=spec.alpha, num_permutations=B, seed=spec.seed)

    def guard(fn):
        try:
            return fn()
        except InfeasibleError:
            return "infeasible"
        except Exception as exc:  # isolate the cell
            return f"{type(exc).__name__}: {exc}"

    nonprivate = None
    if "nonprivate" in tests:
        nonprivate = guard(lambda: outcome_from_statistics(stats_v, sens_v, np_config, stream=test_stream).reject)
    for bi, b in enumerate(budgets):
        cfg = TestConfig(alpha=spec.alpha, num_permutations=B, seed=spec.seed, budget=b.budget)
        for key in tests:
            if key == "dp":
                res = guard(lambda: outcome_from_statistics(stats_v, sens_v, cfg, stream=test_stream).reject)
            elif key == "naive":
                res = guard(lambda: outcome_from_statistics(stats_v, sens_v, cfg, stream=test_stream,
                                                            mechanism="naive").reject)
            elif key == "dp_u":
                res = guard(lambda: outcome_from_statistics(stats_u, sens_u, cfg, stream=test_stream).reject)
            elif key == "nonprivate":
                res = nonprivate
            elif key == "tot":
                res = guard(lambda: bl.tot_test(data, v_desc, cfg, b.epsilon, stream=test_stream,
                                                cache=sub_cache).reject)
            else:
                def run_sarrm():
                    ck = (spec.alpha, b.epsilon, bl.sarrm_k_max(n))
                    if ck not in sarrm_cache:
                        try:
                            sarrm_cache[ck] = bl.sarrm_params(spec.alpha, b.epsilon, k_max=ck[2])
                        except InfeasibleError as exc:
                            sarrm_cache[ck] = exc
                    params = sarrm_cache[ck]
                    if isinstance(params, Exception):
                        raise params
                    return bl.sarrm_test(data, v_desc, cfg, b.epsilon, params=params, stream=test_stream,
                                         cache=sub_cache).reject
                res = guard(run_sarrm)
            out[(bi, key)] = res
    return out


# ------------------------------------------------------------- results


def wilson_interval(k: int, n: int, confidence: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    z = float(_stats.norm.ppf(0.5 + confidence / 2))
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class ResultRow:
    scenario: str
    n: int
    d: int
    amplitude: float
    nu: float
    epsilon: float
    epsilon_label: str
    delta: float
    test: str
    rejections: int
    repetitions: int
    power: float
    ci_low: float
    ci_high: float
    status: str = "ok"
    seconds: Optional[float] = None

    def cells(self, timings: bool = False):
        vals = [getattr(self, c) for c in CSV_COLUMNS]
        if timings:
            vals.append(self.seconds)
        return [_fmt(v) for v in vals]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def data_points(spec: ExperimentSpec):
    axes = [(a, spec.axis(a)) for a in DATA_AXES]
    for combo in itertools.product(*[vals for _, vals in axes]):
        yield {a: v for (a, _), v in zip(axes, combo)}


def run_experiment(spec: ExperimentSpec, threads: Optional[int] = None, progress=None) -> List[ResultRow]:
    """Run every (data point, repetition) unit and aggregate rejection rates.

    Rows are ordered by data grid point, then budget, then test, in the
    order given by the spec, whatever the thread count.
    """
    if threads is None:
        threads = int(os.environ.get("PRIVPERM_THREADS", "1"))
    threads = max(1, int(threads))
    user = _load_user_data(spec) if spec.scenario == "user_data" else None
    points = list(data_points(spec))
    if user is not None:
        points = points[:1]
        points[0]["n"] = user.n
        points[0]["d"] = user.y.shape[1]
    root = RandomStream(int(spec.seed))
    R = int(spec.repetitions)
    sarrm_caches = [dict() for _ in points]
    units = [(ci, r) for ci in range(len(points)) for r in range(R)]

    def work(unit):
        ci, r = unit
        t0 = time.perf_counter()
        res = run_unit(spec, points[ci], root.derive("cell", ci).derive("rep", r), sarrm_caches[ci], user)
        return unit, res, time.perf_counter() - t0

    results, elapsed = {}, {}
    if threads == 1:
        it = map(work, units)
        for unit, res, sec in it:
            results[unit], elapsed[unit] = res, sec
            if progress:
                progress(len(results), len(units))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for unit, res, sec in pool.map(work, units):
                results[unit], elapsed[unit] = res, sec
                if progress:
                    progress(len(results), len(units))

    rows = []
    for ci, point in enumerate(points):
        budgets = _budgets(spec, int(point["n"]))
        secs = sum(elapsed[(ci, r)] for r in range(R))
        for bi, b in enumerate(budgets):
            for key in spec.tests_canonical:
                outs = [results[(ci, r)][(bi, key)] for r in range(R)]
                errors = [o for o in outs if not isinstance(o, bool)]
                k = sum(1 for o in outs if o is True)
                if any(o == "infeasible" for o in errors):
                    status = "infeasible"
                elif errors:
                    status = "failed: " + str(errors[0]).replace("\n", " ")
                else:
                    status = "ok"
                done = R - len(errors)
                lo, hi = wilson_interval(k, done)
                rows.append(ResultRow(
                    scenario=spec.scenario, n=int(point["n"]), d=int(point["d"]),
                    amplitude=float(point["amplitude"]), nu=float(point["nu"]),
                    epsilon=b.epsilon, epsilon_label=b.label, delta=b.delta,
                    test=display_name(key, spec.independence), rejections=k, repetitions=done,
                    power=k / done if done else float("nan"), ci_low=lo, ci_high=hi, status=status,
                    seconds=secs,
                ))
    return rows


def rows_to_csv(rows: List[ResultRow], timings: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CSV_COLUMNS) + (["seconds"] if timings else []))
    for r in rows:
        w.writerow(r.cells(timings))
    return buf.getvalue()


def any_failed(rows: List[ResultRow]) -> bool:
    return any(r.status.startswith("failed") for r in rows)


# ------------------------------------------------------------------- SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def sweep_axis(spec: ExperimentSpec) -> str:
    if spec.sweep:
        return spec.sweep
    for a in GRID_AXES:
        if len(spec.grid.get(a, [])) > 1:
            return a
    return "epsilon"


def rows_to_svg(rows: List[ResultRow], axis: str, title: str = "") -> str:
    """Multi-line power chart against ``axis``, one line per test (and fixed other coordinates)."""
    width, height, ml, mr, mt, mb = 640, 400, 60, 170, 30, 50
    series: Dict[str, list] = {}
    others = [a for a in ("n", "d", "amplitude", "nu", "epsilon_label", "delta") if a != axis and
              not (axis == "epsilon" and a == "epsilon_label")]
    varying = [a for a in others if len({getattr(r, a) for r in rows}) > 1]
    for r in rows:
        if r.status != "ok":
            continue
        label = r.test + "".join(f" {a}={getattr(r, a)}" for a in varying)
        series.setdefault(label, []).append((float(getattr(r, axis)), r.power))
    xs = [x for pts in series.values() for x, _ in pts if math.isfinite(x)]
    if not xs:
        xs = [0.0, 1.0]
    logx = min(xs) > 0 and max(xs) / min(xs) > 100
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    lo, hi = tx(min(xs)), tx(max(xs))
    if hi == lo:
        lo, hi = lo - 1, hi + 1

    def px(v):
        return ml + (tx(v) - lo) / (hi - lo) * (width - ml - mr)

    def py(p):
        return height - mb - p * (height - mt - mb)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml}" y="18" font-size="13">{_esc(title)}</text>',
           f'<line x1="{ml}" y1="{py(0)}" x2="{width - mr}" y2="{py(0)}" stroke="black"/>',
           f'<line x1="{ml}" y1="{py(0)}" x2="{ml}" y2="{py(1)}" stroke="black"/>']
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<text x="{ml - 8}" y="{py(t) + 4:.1f}" font-size="11" text-anchor="end">{t:g}</text>')
    for v in sorted(set(xs)):
        out.append(f'<text x="{px(v):.1f}" y="{height - mb + 16}" font-size="11" text-anchor="middle">{v:.3g}</text>')
    xlab = axis + (" (log scale)" if logx else "")
    out.append(f'<text x="{(ml + width - mr) / 2}" y="{height - 10}" font-size="12" text-anchor="middle">{xlab}</text>')
    out.append(f'<text x="16" y="{(mt + height - mb) / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {(mt + height - mb) / 2})">power</text>')
    for i, (label, pts) in enumerate(series.items()):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = sorted(p for p in pts if math.isfinite(p[0]))
        path = " ".join(f"{px(x):.1f},{py(p):.1f}" for x, p in pts)
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{path}"/>')
        for x, p in pts:
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(p):.1f}" r="3" fill="{colour}"/>')
        ly = mt + 16 * i + 10
        out.append(f'<line x1="{width - mr + 10}" y1="{ly}" x2="{width - mr + 30}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{width - mr + 35}" y="{ly + 4}" font-size="11">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
