import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from ebmprior.bench.cli import main
from ebmprior.bench.config import Exp1Config, Exp2Config, PlanSettings, config_from_dict, config_to_dict, load_config
from ebmprior.bench.parallel import parallel_map
from ebmprior.bench.plots import plot_report
from ebmprior.bench.report import Report, RunRecord, read_records, read_report
from ebmprior.errors import ConfigInvalid

ROOT = Path(__file__).resolve().parents[1]

TINY = {
    "experiment": "exp1", "seed": 3, "n_train_envs": 2, "n_eval_envs": 2, "n_goals": 2, "free_points": 64,
    "budgets": [0, 5], "expert": {"iterations": 60, "plans_per_goal": 2},
    "train": {"iterations": 50, "hidden": 16}, "bc_train": {"iterations": 50, "hidden": 16},
    "planner": {"plans_per_goal": 2},
}


def _square(x):
    return x * x


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    code = main(["run", "--config", str(cfg), "--out", str(root / "run"), "--fresh"])
    return root, cfg, code


def test_config_roundtrip():
    for kind in ("exp1", "exp2"):
        cfg = load_config(None, kind)
        again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
        assert again == cfg
    for name in ("exp1.json", "exp2.json"):
        cfg = load_config(ROOT / "configs" / name)
        assert config_to_dict(cfg) == config_to_dict(load_config(None, cfg.experiment))


@pytest.mark.parametrize("bad", [
    {"experiment": "exp9"},
    {"n_goals": 0},
    {"budgets": [5, 0]},
    {"not_a_key": 1},
    {"planner": {"bogus": 1}},
])
def test_invalid_configs(bad):
    with pytest.raises((ConfigInvalid, TypeError)):
        config_from_dict(bad)


def test_plan_settings_steps():
    assert PlanSettings(n_steps=10, ebm_stride=4).ebm_steps() == [0, 4, 8, 10]
    assert PlanSettings(n_steps=8, ebm_stride=4).ebm_steps() == [0, 4, 8]
    assert Exp2Config().budgets == (50, 100)
    assert Exp1Config().eval_ids[0] == 1000


def test_report_aggregation():
    rep = Report()
    for env, goal, ok in [(0, 0, 1), (0, 1, 0), (1, 0, 1), (1, 1, 1), (1, 2, 1)]:
        rep.add(RunRecord("m", "5", env, goal, bool(ok), 0.5, 0.0))
    row = rep.rates()[0]
    assert (row["trials"], row["successes"]) == (5, 4)
    assert row["success_rate"] == pytest.approx(0.8)
    assert row["per_env_success_rate"] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        Report().write("/nonexistent/never")


def test_parallel_map_order_and_determinism():
    items = list(range(7))
    assert parallel_map(_square, items, 1) == [x * x for x in items]
    assert parallel_map(_square, items, 3) == parallel_map(_square, items, 1)


def test_tiny_pipeline_outputs(tiny_run):
    root, _, code = tiny_run
    assert code == 0
    run = root / "run"
    # report.csv is recomputed exactly from the per-run records
    recs = read_records(run / "report" / "records.csv")
    rows = read_report(run / "report" / "report.csv")
    assert len(rows) == len(recs.rates())
    for row, agg in zip(rows, recs.rates()):
        assert row["method"] == agg["method"] and row["budget"] == agg["budget"]
        assert int(row["trials"]) == agg["trials"] and int(row["successes"]) == agg["successes"]
        assert float(row["success_rate"]) == agg["success_rate"]
    methods = {r["method"] for r in rows}
    assert methods == {"ebm_expert", "ebm_free", "bc"}
    trials = {int(r["trials"]) for r in rows}
    assert trials == {4}  # 2 eval environments x 2 goals
    for svg in (run / "figs").glob("*.svg"):
        ET.parse(svg)
    assert (run / "figs" / "success.svg").exists()


def test_cli_subcommands(tiny_run, tmp_path):
    root, cfg, _ = tiny_run
    c = str(cfg)
    data = tmp_path / "data"
    assert main(["gen-data", "--config", c, "--out", str(data)]) == 0
    # regenerated data matches the pipeline's copy byte for byte
    for f in sorted((root / "run" / "data" / "train").iterdir()):
        assert (data / "train" / f.name).read_bytes() == f.read_bytes()
    ck = tmp_path / "m" / "e.json"
    assert main(["train", "--config", c, "--dataset", str(data), "--conditioning", "obstacle", "--out", str(ck)]) == 0
    assert ck.read_bytes() == (root / "run" / "models" / "ebm_expert.json").read_bytes()
    with open(ck.with_suffix(".csv")) as fh:
        assert len(list(csv.DictReader(fh))) == TINY["train"]["iterations"]
    assert main(["train", "--config", c, "--dataset", str(data), "--conditioning", "object", "--out",
                 str(tmp_path / "x.json")]) == 2
    assert main(["eval", "--config", c, "--models", f"ebm_expert={ck}", "--envs", str(data),
                 "--out", str(tmp_path / "r")]) == 0
    assert main(["eval", "--config", c, "--models", "nonsense", "--envs", str(data), "--out", str(tmp_path / "r2")]) == 2
    assert main(["plot", "--report", str(tmp_path / "missing"), "--out", str(tmp_path / "f")]) == 2
    assert not (tmp_path / "f").exists()
    assert main(["plot", "--report", str(tmp_path / "r"), "--out", str(tmp_path / "f"), "--model", str(ck),
                 "--resolution", "16"]) == 0
    for svg in (tmp_path / "f").glob("*.svg"):
        ET.parse(svg)
    with pytest.raises(SystemExit) as err:
        main(["train", "--config", c])
    assert err.value.code == 2


def test_cli_plan(tmp_path):
    prob = json.loads((ROOT / "configs" / "corridor_problem.json").read_text())
    prob["iterations"] = 5
    prob["planner"]["plans_per_goal"] = 2
    pf = tmp_path / "p.json"
    pf.write_text(json.dumps(prob))
    assert main(["plan", "--problem", str(pf), "--out", str(tmp_path / "o")]) == 0
    body = json.loads((tmp_path / "o" / "plan.json").read_text())
    assert sorted(body["plans"]["stochgpmp"]) == ["0.0", "0.1"]
    with open(tmp_path / "o" / "diagnostics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["iteration"]) for r in rows] == [1, 2, 3, 4, 5]
    assert all(np.isfinite(float(r["ess"])) for r in rows)
    prob["obstacle_weight"] = 0
    pf.write_text(json.dumps(prob))
    assert main(["plan", "--problem", str(pf), "--out", str(tmp_path / "o2")]) == 2


def test_empty_report_writes_nothing(tmp_path):
    (tmp_path / "rep").mkdir()
    (tmp_path / "rep" / "report.csv").write_text("method,budget,trials,successes,success_rate,per_env_success_rate\n")
    with pytest.raises(ValueError):
        plot_report(tmp_path / "rep", tmp_path / "figs")
    assert not (tmp_path / "figs").exists()
