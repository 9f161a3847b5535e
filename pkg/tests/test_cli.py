import json
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import make_dataset
from treepoison.cli import main
from treepoison.dataset import write_csv

CONFIG = """
dataset.path = toy.csv
dataset.label_column = label
dataset.positive_value = 1
model.trees.min = 1
model.trees.max = 2
model.depth.min = 2
model.depth.max = 3
defense.knn.N = 4
defense.knn.eta = 0.75
defense.knn.M = 1,3
defense.bagging.G = 5
defense.bagging.K = 0.2
sweep.strategies = timber,greedy,random
sweep.budgets = 0.02,0.05,0.1
"""


@pytest.fixture
def conf(tmp_path):
    write_csv(make_dataset(np.random.default_rng(2), 100, 3), tmp_path / "toy.csv")
    p = tmp_path / "exp.conf"
    p.write_text(CONFIG)
    return p


def run(*argv):
    return main([str(a) for a in argv])


def test_unknown_command_exits_2(capsys):
    assert run("frobnicate") == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_2(conf):
    assert run("train", "--config", conf, "--bogus") == 2


def test_no_command_exits_2():
    assert run() == 2


def test_bad_threads_type_exits_2():
    assert run("train", "--threads", "many") == 2


def test_missing_config_exits_1(tmp_path, capsys):
    assert run("train", "--config", tmp_path / "nope.conf") == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("treepoison: config error:") and "\n" not in err


def test_bad_config_value_exits_1(tmp_path, capsys):
    p = tmp_path / "bad.conf"
    p.write_text("attack.budget = 0.9\n")
    assert run("experiment", "--config", p) == 1
    assert "attack.budget" in capsys.readouterr().err


def test_runtime_error_one_line(tmp_path, capsys):
    p = tmp_path / "c.conf"
    p.write_text("dataset.path = absent.csv\ndataset.label_column = y\ndataset.positive_value = 1\n")
    assert run("train", "--config", p, "--out-dir", tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert err.startswith("treepoison: error: load:") and err.count("\n") == 1
    assert not (tmp_path / "o").exists()


def test_train(conf, tmp_path):
    out = tmp_path / "t"
    assert run("train", "--config", conf, "--out-dir", out, "--threads", 2) == 0
    model = json.loads((out / "model.json").read_text())
    assert model["format"] == "treepoison.forest"
    from treepoison.ensemble import loads
    assert len(loads((out / "model.json").read_text()).trees) == model["params"]["n_trees"]
    assert set(json.loads((out / "metrics.json").read_text())["test"]) == {"accuracy", "f1"}


def test_attack(conf, tmp_path):
    out = tmp_path / "a"
    assert run("attack", "--config", conf, "--out-dir", out) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "round,flipped_index,accuracy,f1,workload,candidates_evaluated"
    assert len(lines) == 1 + json.loads((out / "trace.json").read_text())["k"]


def test_defend(conf, tmp_path):
    out = tmp_path / "d"
    assert run("defend", "--config", conf, "--out-dir", out) == 0
    doc = json.loads((out / "defense.json").read_text())
    assert set(doc["defenses"]) == {"knn", "bagging"}
    assert (out / "knn_sanitized_train.csv").exists()


def test_sweep_rows(conf, tmp_path):
    out = tmp_path / "s"
    assert run("sweep", "--config", conf, "--out-dir", out) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "strategy,budget,k,accuracy,f1,accuracy_loss,f1_loss,workload"
    body = [r.split(",") for r in rows[1:]]
    assert len(body) == 3 * 3
    assert {(r[0], r[1]) for r in body} == {(s, b) for s in ("timber", "greedy", "random")
                                           for b in ("0.02", "0.05", "0.1")}
    w = {(r[0], r[1]): int(r[7]) for r in body}
    assert all(w[("timber", b)] <= w[("greedy", b)] for b in ("0.02", "0.05", "0.1"))


def test_verify(capsys):
    assert run("verify", "--cases", 3) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("verify: ")
    assert "FAIL" not in out


def test_experiment_rerun_byte_identical(conf, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("experiment", "--config", conf, "--out-dir", a) == 0
    assert run("experiment", "--config", conf, "--out-dir", b) == 0
    for name in sorted(p.name for p in a.iterdir()):
        if name != "timing.json":
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


@pytest.mark.parametrize("strategy", ["greedy", "timber"])
def test_threads_do_not_change_trace(conf, tmp_path, strategy):
    text = conf.read_text() + f"attack.strategy = {strategy}\ndefense.enabled = knn\n"
    conf.write_text(text)
    a, b = tmp_path / "one", tmp_path / "many"
    assert run("experiment", "--config", conf, "--out-dir", a, "--threads", 1) == 0
    assert run("experiment", "--config", conf, "--out-dir", b, "--threads", 16) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_seed_flag_changes_split(conf, tmp_path):
    assert run("experiment", "--config", conf, "--out-dir", tmp_path / "s0", "--seed", 0) == 0
    assert run("experiment", "--config", conf, "--out-dir", tmp_path / "s1", "--seed", 1) == 0
    r0 = json.loads((tmp_path / "s0" / "report.json").read_text())
    r1 = json.loads((tmp_path / "s1" / "report.json").read_text())
    assert r1["config"]["split.seed"] == 1 and r1["config"]["attack.seed"] == 1
    assert (tmp_path / "s0" / "test.csv").read_text() != (tmp_path / "s1" / "test.csv").read_text()
    assert r0["config"]["split.seed"] == 0


def test_module_entry_point():
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "treepoison", "--version"], capture_output=True, text=True, env=env)
    assert r.returncode == 0 and r.stdout.startswith("treepoison ")
    r = subprocess.run([sys.executable, "-m", "treepoison", "nope"], capture_output=True, text=True, env=env)
    assert r.returncode == 2
