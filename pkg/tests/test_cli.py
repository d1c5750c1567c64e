import json
import math

import numpy as np
import pytest

from privperm import experiments as ex
from privperm.cli import main
from privperm.dataio import InputError, read_csv


@pytest.fixture
def files(tmp_path):
    r = np.random.default_rng(0)
    y = tmp_path / "y.csv"
    y.write_text("a,b\n" + "\n".join(f"{u},{v}" for u, v in r.random((20, 2))) + "\n")
    z = tmp_path / "z.csv"
    z.write_text("\n".join(f"{u},{v}" for u, v in r.random((25, 2)) + 0.4) + "\n")
    xy = tmp_path / "xy.csv"
    xy.write_text("\n".join(f"{u},{v},{w}" for u, v, w in r.random((30, 3))) + "\n")
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_read_csv_header_detection(files):
    assert read_csv(files / "y.csv").shape == (20, 2)
    assert read_csv(files / "z.csv").shape == (25, 2)


@pytest.mark.parametrize("text", ["1,2\n3\n", "a,b\n", "1,2\nx,3\n", "1,nan\n"])
def test_read_csv_malformed(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(InputError):
        read_csv(p)


def test_two_sample_json(files, capsys):
    code, out, _ = run(capsys, "two-sample", files / "y.csv", files / "z.csv", "-B", 99, "--seed", 5)
    assert code == 0
    res = json.loads(out)
    assert list(res) == ["p_value", "reject", "alpha", "epsilon", "delta", "B", "statistic", "noise_scale", "seed"]
    assert res["B"] == 99 and res["seed"] == 5 and res["statistic"] == "mmd_v"


def test_identical_samples_nonprivate(files, capsys):
    code, out, _ = run(capsys, "two-sample", files / "y.csv", files / "y.csv", "--epsilon", "inf")
    res = json.loads(out)
    assert code == 0 and not res["reject"] and res["p_value"] > 0.5
    assert res["epsilon"] is None and res["noise_scale"] == 0.0


def test_byte_identical_reruns(files, capsys):
    args = ("two-sample", files / "y.csv", files / "z.csv", "--seed", 9, "--epsilon", 0.5)
    assert run(capsys, *args)[1] == run(capsys, *args)[1]


def test_p_value_lattice(files, capsys):
    for seed in range(10):
        _, out, _ = run(capsys, "two-sample", files / "y.csv", files / "z.csv", "-B", 19, "--seed", seed)
        res = json.loads(out)
        assert math.isclose(res["p_value"] * 20, round(res["p_value"] * 20))
        assert res["reject"] == (round(res["p_value"] * 20) == 1)


def test_independence_and_flags(files, capsys):
    code, out, _ = run(capsys, "independence", files / "xy.csv", "--split", 2, "--statistic", "hsic-u",
                       "--kernel", "laplacian", "--bandwidth", 0.5, "--delta", 0.01)
    assert code == 0 and json.loads(out)["statistic"] == "hsic_u"
    code, out, _ = run(capsys, "independence", files / "xy.csv", "--split", 1, "--mechanism", "naive")
    assert code == 0


def test_baselines_and_infeasible(files, capsys):
    code, out, _ = run(capsys, "independence", files / "xy.csv", "--split", 1, "--baseline", "tot")
    assert code == 0 and 0 <= json.loads(out)["p_value"] <= 1
    code, out, err = run(capsys, "independence", files / "xy.csv", "--split", 1, "--baseline", "sarrm",
                         "--epsilon", 0.1)
    assert code == 3 and "infeasible" in err and out == ""


def test_malformed_inputs(files, capsys):
    assert run(capsys, "two-sample", files / "y.csv", files / "missing.csv")[0] == 2
    assert run(capsys, "independence", files / "xy.csv", "--split", 3)[0] == 2
    assert run(capsys, "two-sample", files / "y.csv", files / "z.csv", "--statistic", "hsic")[0] == 2
    assert run(capsys, "two-sample", files / "y.csv", files / "z.csv", "--statistic", "mean-diff")[0] == 2
    assert run(capsys, "two-sample", files / "y.csv", files / "z.csv", "--epsilon", -1)[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["two-sample", str(files / "y.csv")])
    assert exc.value.code == 2


# ---------------------------------------------------------------- experiments


SPEC = {
    "scenario": "two_sample_perturbed_uniform",
    "grid": {"n": [30], "amplitude": [0.0, 1.0], "epsilon": ["10/sqrt(n)", "inf"]},
    "tests": ["dpMMD", "naive", "dp_u", "TOT", "SARRM", "nonprivate"],
    "repetitions": 4, "B": 19, "seed": 3,
}


def write_spec(path, **kw):
    doc = dict(SPEC)
    doc.update(kw)
    path.write_text(json.dumps(doc))
    return path


def test_expression_evaluation():
    assert ex.eval_expression("10/sqrt(n)", 100) == 1.0
    assert ex.eval_expression("1/n", 4) == 0.25
    assert ex.eval_expression("inf", 4) == math.inf
    assert ex.eval_expression(2, 4) == 2.0
    for bad in ("__import__('os')", "n.real", "sqrt(n, 2)", "1/0"):
        with pytest.raises(ex.SpecError):
            ex.eval_expression(bad, 3)


def test_spec_validation():
    with pytest.raises(ex.SpecError):
        ex.ExperimentSpec.from_dict(dict(SPEC, typo=1))
    with pytest.raises(ex.SpecError):
        ex.ExperimentSpec.from_dict(dict(SPEC, tests=["bogus"]))
    with pytest.raises(ex.SpecError):
        ex.ExperimentSpec.from_dict(dict(SPEC, grid={}))
    with pytest.raises(ex.SpecError):
        ex.ExperimentSpec.from_dict(dict(SPEC, repetitions=0))


def test_wilson_interval():
    lo, hi = ex.wilson_interval(5, 20)
    assert lo < 0.25 < hi
    assert ex.wilson_interval(0, 10)[0] == 0.0
    assert ex.wilson_interval(10, 10)[1] == pytest.approx(1.0)
    z, k, n = 1.959963984540054, 37, 80
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    assert ex.wilson_interval(k, n) == pytest.approx((centre - half, centre + half), abs=1e-9)


def test_experiment_table(tmp_path, capsys):
    spec = write_spec(tmp_path / "s.json")
    code, out, _ = run(capsys, "experiment", spec, "--svg", tmp_path / "p.svg")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0].split(",") == list(ex.CSV_COLUMNS)
    assert len(lines) == 1 + 2 * 2 * 6
    assert (tmp_path / "p.svg").read_text().startswith("<svg")
    for line in lines[1:]:
        row = dict(zip(ex.CSV_COLUMNS, line.split(",")))
        if row["status"] == "ok":
            assert float(row["ci_low"]) <= float(row["power"]) <= float(row["ci_high"])


def test_experiment_deterministic_across_threads(tmp_path, capsys):
    spec = write_spec(tmp_path / "s.json", repetitions=3)
    a = run(capsys, "experiment", spec, "--threads", 1)[1]
    b = run(capsys, "experiment", spec, "--threads", 3)[1]
    assert a == b


def test_experiment_timings_column(tmp_path, capsys):
    spec = write_spec(tmp_path / "s.json", repetitions=1, tests=["dp"])
    out = run(capsys, "experiment", spec, "--timings")[1]
    assert out.split("\n")[0].endswith(",seconds")


def test_unusable_user_data_is_input_error(tmp_path, capsys):
    (tmp_path / "y.csv").write_text("0.1\n")
    (tmp_path / "z.csv").write_text("0.2\n0.5\n")
    spec = tmp_path / "u.json"
    spec.write_text(json.dumps({
        "scenario": "user_data", "grid": {"epsilon": [1.0]}, "tests": ["dp", "dp_u"],
        "repetitions": 2, "B": 19,
        "data": {"kind": "two_sample", "y": str(tmp_path / "y.csv"), "z": str(tmp_path / "z.csv")},
    }))
    code, out, err = run(capsys, "experiment", spec)
    assert code == 2 and "mmd_u" in err


def test_failed_cell_exit_code(tmp_path, capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(ex.bl, "tot_test", boom)
    spec = write_spec(tmp_path / "s.json", repetitions=2, tests=["dp", "TOT"], grid={"n": [20], "epsilon": [1.0]})
    code, out, err = run(capsys, "experiment", spec)
    assert code == 1 and "synthetic failure" in err
    rows = out.strip().split("\n")[1:]
    assert rows[0].endswith(",ok") and ",failed" in rows[1]


def test_unknown_spec_key_exit_code(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps(dict(SPEC, colour="red")))
    assert run(capsys, "experiment", spec)[0] == 2


def test_independence_scenarios(tmp_path, capsys):
    for scen, axis in (("independence_perturbed_uniform", {"amplitude": [1.0]}),
                       ("independence_two_point", {"nu": [0.2]}), ("two_point", {"amplitude": [0.5]})):
        spec = write_spec(tmp_path / "s.json", scenario=scen, grid=dict(axis, n=[20], epsilon=[1.0]),
                          tests=["dp", "nonprivate"], repetitions=2)
        code, out, _ = run(capsys, "experiment", spec)
        assert code == 0, out
        assert ("dpHSIC" in out) == scen.startswith("independence")
