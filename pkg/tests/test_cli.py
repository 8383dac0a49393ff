import csv
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from reluflow.cli import main
from reluflow.schemas import (
    CONTROL_PATH_SCHEMA,
    ERROR_SCHEMA,
    MATCHING_PLAN_SCHEMA,
    REPORT_SCHEMA,
    SCHEDULE_SCHEMA,
)

MIXTURE = {"kind": "mixture", "weights": [0.5, 0.5], "means": [[-1.0], [1.0]], "covs": [[[0.36]], [[0.36]]]}
SYNTH = {
    "base": {"mean": [0.0], "cov": [[1.0]]},
    "target": MIXTURE,
    "sigma_tail": 1.5,
    "epsilon": 0.05,
    "seed": 0,
}


def run(tmp_path, command, config, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    out = tmp_path / "out"
    code = main([command, str(path), "--output-dir", str(out), *extra])
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_cloud(path, pts):
    path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in pts) + "\n")


def error_doc(out):
    doc = json.loads((out / "error.json").read_text())
    jsonschema.validate(doc, ERROR_SCHEMA)
    return doc


@pytest.fixture(scope="module")
def synth_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("synth")
    code, out = run(tmp, "synthesize", SYNTH)
    return code, out, tmp


def test_synthesize_outputs(synth_run):
    code, out, _ = synth_run
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, REPORT_SCHEMA)
    jsonschema.validate(json.loads((out / "schedule.json").read_text()), SCHEDULE_SCHEMA)
    assert report["kl_achieved"] <= 0.05
    assert report["switch_count"] <= report["switch_budget"]
    rows = read_csv(out / "divergences.csv")
    assert [r["name"] for r in rows] == ["kl", "tv"]
    assert (out / "densities.svg").read_text().startswith("<svg")
    assert len(read_csv(out / "summary.csv")) == 1


def test_synthesize_is_byte_identical(synth_run):
    _, out, tmp = synth_run
    again = tmp / "again"
    assert main(["synthesize", str(tmp / "cfg.json"), "--output-dir", str(again)]) == 0
    for name in ("report.json", "schedule.json", "divergences.csv", "summary.csv", "densities.svg"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_synthesize_violated_tail_exits_3(tmp_path):
    cfg = dict(SYNTH, target={"kind": "gaussian", "mean": [0.0], "cov": [[4.0]]}, sigma_tail=1.0, radius=1.0)
    code, out = run(tmp_path, "synthesize", cfg)
    assert code == 3
    assert error_doc(out)["error"] == "tail_hypothesis"


def test_synthesize_missing_seed_exits_2(tmp_path):
    cfg = {k: v for k, v in SYNTH.items() if k != "seed"}
    code, out = run(tmp_path, "synthesize", cfg)
    assert code == 2
    assert error_doc(out)["error"] == "validation"


def test_divergence_gaussians(tmp_path):
    cfg = {
        "p": {"mean": [0.0], "cov": [[1.0]]},
        "q": {"mean": [1.0], "cov": [[1.0]]},
        "divergences": ["kl", "tv", "hellinger_sq", "renyi:0.5"],
    }
    code, out = run(tmp_path, "divergence", cfg)
    assert code == 0
    rows = {r["name"]: r for r in read_csv(out / "divergences.csv")}
    assert float(rows["kl"]["value"]) == pytest.approx(0.5, abs=1e-6)
    assert float(rows["renyi:0.5"]["value"]) == pytest.approx(0.25, abs=1e-6)
    assert rows["pinsker"]["note"] == "ok"
    # equal variances with shifted means have an unbounded ratio
    assert rows["reverse_pinsker"]["value"] == "n/a"
    cert = json.loads((out / "pinsker.json").read_text())
    assert cert["pinsker_ok"] and not cert["reverse_applicable"]


def test_divergence_absolute_continuity_row(tmp_path):
    cfg = {
        "p": {"kind": "uniform", "low": [0.0], "high": [2.0]},
        "q": {"kind": "uniform", "low": [0.0], "high": [1.0]},
        "divergences": ["kl", "tv"],
    }
    code, out = run(tmp_path, "divergence", cfg)
    assert code == 0
    rows = {r["name"]: r for r in read_csv(out / "divergences.csv")}
    assert rows["kl"]["value"] == "n/a"
    assert float(rows["tv"]["value"]) == pytest.approx(1.0, abs=1e-9)


def test_divergence_monte_carlo_needs_seed(tmp_path):
    cfg = {"p": {"mean": [0.0], "cov": [[1.0]]}, "q": {"mean": [1.0], "cov": [[1.0]]}, "method": "monte_carlo"}
    code, out = run(tmp_path, "divergence", cfg)
    assert code == 2
    code, out = run(tmp_path, "divergence", cfg, "--set", "seed=4")
    assert code == 0
    assert {r["seed"] for r in read_csv(out / "divergences.csv")} == {"4"}


def test_points_exact(tmp_path):
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    write_cloud(tmp_path / "x.csv", X)
    write_cloud(tmp_path / "y.csv", Y)
    code, out = run(tmp_path, "points", {"source": "x.csv", "target": "y.csv"})
    assert code == 0
    plan = json.loads((out / "plan.json").read_text())
    jsonschema.validate(plan, MATCHING_PLAN_SCHEMA)
    assert len(plan["segments"]) == 4 * 4 + 3
    res = read_csv(out / "residuals.csv")
    assert max(float(r["residual"]) for r in res) <= 1e-8 * max(1.0, np.abs(Y).max())
    assert (out / "trajectories.svg").exists()


def test_points_minimum_norm(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(2, 3))
    write_cloud(tmp_path / "x.csv", X)
    write_cloud(tmp_path / "y.csv", X + rng.normal(size=(2, 3)))
    cfg = {"source": "x.csv", "target": "y.csv", "mode": "minimum_norm", "activation": "tanh", "n_grid": 64}
    code, out = run(tmp_path, "points", cfg)
    assert code == 0
    jsonschema.validate(json.loads((out / "path.json").read_text()), CONTROL_PATH_SCHEMA)


def test_points_duplicates_exit_2(tmp_path):
    write_cloud(tmp_path / "x.csv", [[0.0, 0.0], [0.0, 0.0]])
    write_cloud(tmp_path / "y.csv", [[1.0, 0.0], [0.0, 1.0]])
    code, out = run(tmp_path, "points", {"source": "x.csv", "target": "y.csv"})
    assert code == 2
    assert error_doc(out)["error"] == "distinctness"


def test_points_too_few_dimensions_exit_2(tmp_path):
    write_cloud(tmp_path / "x.csv", np.arange(6.0).reshape(3, 2))
    write_cloud(tmp_path / "y.csv", np.arange(6.0).reshape(3, 2) + 1)
    cfg = {"source": "x.csv", "target": "y.csv", "mode": "minimum_norm", "activation": "tanh"}
    code, out = run(tmp_path, "points", cfg)
    assert code == 2
    assert error_doc(out)["error"] == "rank"


def test_points_exact_requires_relu(tmp_path):
    code, _ = run(tmp_path, "points", {"source": "x.csv", "target": "y.csv", "activation": "tanh"})
    assert code == 2


def test_xlogx(tmp_path):
    code, out = run(tmp_path, "xlogx", {"p": 2.0, "q": 1.0, "t_values": [0.5, 1.0]})
    assert code == 0
    rows = read_csv(out / "xlogx_summary.csv")
    assert [r["finite"] for r in rows] == ["False", "True"]
    assert float(rows[0]["threshold"]) == pytest.approx(np.log(2.0))
    assert (out / "xlogx.svg").exists()
    assert len(read_csv(out / "xlogx_table.csv")) == 2 * 200


@pytest.mark.parametrize("cfg", [{"p": 0.0, "q": 1.0, "t_values": [1.0]}, {"p": 1.0, "q": 2.0, "t_values": [1.0]}])
def test_xlogx_invalid_exponents(tmp_path, cfg):
    code, out = run(tmp_path, "xlogx", cfg)
    assert code == 2
    assert error_doc(out)["error"] == "validation"


def test_flow_eval(tmp_path):
    schedule = {
        "horizon": 1.0,
        "segments": [
            {"t0": 0.0, "t1": 0.5, "w": [1.0, 0.0], "a": [1.0, 0.0], "b": 0.0},
            {"t0": 0.5, "t1": 1.0, "w": [0.0, 1.0], "a": [1.0, 1.0], "b": -0.5},
        ],
    }
    (tmp_path / "sched.json").write_text(json.dumps(schedule))
    code, out = run(tmp_path, "flow-eval", {"schedule": "sched.json", "points": [[1.0, 0.0], [-1.0, 2.0]]})
    assert code == 0
    rows = read_csv(out / "flow.csv")
    assert float(rows[0]["x_0"]) == pytest.approx(np.exp(0.5), rel=1e-12)
    assert all(float(r["oracle_error"]) < 1e-8 for r in rows)


def test_flow_eval_dimension_mismatch(tmp_path):
    schedule = {"horizon": 1.0, "segments": [{"t0": 0.0, "t1": 1.0, "w": [1.0], "a": [1.0], "b": 0.0}]}
    code, out = run(tmp_path, "flow-eval", {"schedule": schedule, "points": [[1.0, 2.0]]})
    assert code == 2


def test_env_output_dir(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("RELUFLOW_OUTPUT_DIR", str(target))
    cfg = tmp_path / "x.json"
    cfg.write_text(json.dumps({"p": 2.0, "q": 1.0, "t_values": [1.0], "output_dir": str(tmp_path / "cfg_dir")}))
    assert main(["xlogx", str(cfg)]) == 0
    assert (target / "xlogx_summary.csv").exists()
    assert not (tmp_path / "cfg_dir").exists()


def test_unreadable_config(tmp_path, capsys):
    assert main(["xlogx", str(tmp_path / "missing.json"), "--output-dir", str(tmp_path / "o")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "validation"


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize(
    "command,name",
    [("synthesize", "synthesize"), ("divergence", "divergence"), ("points", "points"), ("xlogx", "xlogx"),
     ("flow-eval", "flow_eval")],
)
def test_shipped_configs_run(tmp_path, command, name):
    assert main([command, str(CONFIG_DIR / f"{name}.json"), "--output-dir", str(tmp_path)]) == 0
