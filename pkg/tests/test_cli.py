import json

import pytest

from conftest import seven_step_grid
from pipegrid import cli, toydata
from pipegrid.pipeline import compile_grid, save_pipeline


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    toydata.write_corpus(d)
    return d


@pytest.fixture(scope="module")
def ckpt(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("ck") / "agent"
    assert cli.main(["train", "--corpus", str(corpus), "--episodes", "3", "--out", str(out), "--seed", "1"]) == 0
    return out


def test_inspect_seven_step_grid(tmp_path, capsys):
    path = tmp_path / "grid.json"
    save_pipeline(compile_grid(seven_step_grid()), path)
    assert cli.main(["inspect", "--pipeline", str(path), "--dot", str(tmp_path / "g.dot")]) == 0
    out = capsys.readouterr().out
    assert "8 vertices, 8 edges" in out
    assert (tmp_path / "g.dot").read_text().count("->") == 8


def test_usage_errors_exit_1(capsys):
    assert cli.main([]) == 1
    assert cli.main(["train", "--corpus", "x"]) == 1
    assert cli.main(["eval", "--data", "a.csv", "--target", "y", "--ckpt", "nowhere", "--mode", "bad"]) == 1
    assert "error" in capsys.readouterr().err


def test_data_errors_exit_2(tmp_path, ckpt):
    assert cli.main(["inspect", "--pipeline", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2,3\n")
    assert cli.main(["search", "--data", str(bad), "--target", "b", "--ckpt", str(ckpt), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["train", "--corpus", str(tmp_path / "empty"), "--episodes", "1", "--out", str(tmp_path / "c")]) == 2


def test_bad_config_exit_1(tmp_path, corpus):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"agent": {"gamma": 5}}))
    assert cli.main(["train", "--corpus", str(corpus), "--episodes", "1", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 1
    cfg.write_text(json.dumps({"nonsense": {}}))
    assert cli.main(["train", "--corpus", str(corpus), "--episodes", "1", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 1


def test_train_outputs_and_determinism(corpus, ckpt, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["train", "--corpus", str(corpus), "--episodes", "3", "--out", str(again), "--seed", "1"]) == 0
    for name in ("metrics.csv", "manifest.json", "E.bin"):
        assert (ckpt / name).read_bytes() == (again / name).read_bytes()
    assert json.loads((ckpt / "datasets.json").read_text()) == sorted(f"{n}.csv" for n in toydata.TOY_DATASETS)
    assert (ckpt / "metrics.csv").read_text().splitlines()[0] == "episode,dataset,total_reward,epsilon,loss_mean"


def test_search_writes_outputs_and_is_deterministic(corpus, ckpt, tmp_path):
    data = corpus / "xor_negative.csv"
    args = ["search", "--data", str(data), "--target", "target", "--ckpt", str(ckpt), "--k", "3", "--beta", "0", "--episodes", "12"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "scores.csv").read_bytes()
    assert a == (tmp_path / "b" / "scores.csv").read_bytes()
    pipelines = sorted((tmp_path / "a").glob("pipeline_*.json"))
    assert 1 <= len(pipelines) <= 3 and pipelines[0].name == "pipeline_01.json"
    assert cli.main(["inspect", "--pipeline", str(pipelines[0])]) == 0


def test_eval_ensemble_k1_matches_vanilla(corpus, ckpt, capsys):
    data = corpus / "blobs_missing.csv"
    base = ["eval", "--data", str(data), "--target", "target", "--ckpt", str(ckpt), "--k", "1", "--episodes", "8"]
    assert cli.main(base + ["--mode", "vanilla"]) == 0
    van = capsys.readouterr().out.strip().split()[-1]
    assert cli.main(base + ["--mode", "ensemble"]) == 0
    ens = capsys.readouterr().out.strip().split()[-1]
    assert van == ens
    assert 0.0 <= float(van) <= 1.0


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "pipegrid", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "train" in res.stdout
