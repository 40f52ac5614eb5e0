import json

import pytest

from mlcoda.cli import main

FAST = {
    "simulation": {"n_clusters": 30, "seed": 11},
    "model": {"chains": 2, "iter": 120, "warmup": 60, "seed": 5},
    "substitution": {"deltas": [5, 10]},
}


def run(workdir, *args, config=None):
    argv = ["--workdir", str(workdir)]
    if config is not None:
        path = workdir.parent / f"{workdir.name}.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return main(argv + list(args))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    wd = tmp_path_factory.mktemp("run")
    for step in ("simulate", "transform", "fit", "pivot", "substitute"):
        assert run(wd, step, config=FAST) == 0, step
    assert run(wd, "substitute", "--ref", "clustermean", config=FAST) == 0
    assert run(wd, "plot", config=FAST) == 0
    return wd


def test_pipeline_artifacts(pipeline):
    for rel in ("data.csv", "truth.json", "complr/complr.csv", "complr/summary.txt",
                "fit/draws.csv", "fit/summary.csv", "fit/spec.json", "pivot/pivot_rotate.csv",
                "substitution/simple.csv", "substitution/average.csv",
                "plots/simple_between_TST.svg", "plots/average_within_SB.csv", "run.json"):
        assert (pipeline / rel).exists(), rel
    manifest = json.loads((pipeline / "run.json").read_text())
    assert {"simulate", "transform", "fit", "substitute_simple", "substitute_average",
            "plot"} <= set(manifest["steps"])
    assert manifest["steps"]["fit"]["seed"] == 5
    assert len(list((pipeline / "plots").glob("*.svg"))) == 20


def test_rerun_is_byte_identical(pipeline, tmp_path):
    wd = tmp_path / "again"
    wd.mkdir()
    for step in ("simulate", "transform"):
        assert run(wd, step, config=FAST) == 0
    # The pipeline fit above used every core; this one uses a single thread.
    assert run(wd, "--threads", "1", "fit", config=FAST) == 0
    for rel in ("data.csv", "complr/complr.csv", "fit/draws.csv"):
        assert (wd / rel).read_bytes() == (pipeline / rel).read_bytes(), rel


def test_flag_overrides_config(tmp_path):
    wd = tmp_path / "w"
    wd.mkdir()
    assert run(wd, "simulate", "--clusters", "12", config=FAST) == 0
    truth = json.loads((wd / "truth.json").read_text())
    assert truth["n_clusters"] == 12 and truth["seed"] == 11


def test_fit_without_transform(tmp_path):
    assert run(tmp_path, "fit") == 4


def test_plot_without_substitution(pipeline, tmp_path):
    wd = tmp_path / "p"
    wd.mkdir()
    (wd / "complr").mkdir()
    (wd / "complr" / "complr.json").write_text((pipeline / "complr" / "complr.json").read_text())
    assert run(wd, "plot") == 4


def test_config_errors(tmp_path, capsys):
    assert run(tmp_path, "transform", "--input", str(tmp_path / "x.csv")) == 2
    assert "parts" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["--workdir", str(tmp_path), "--config", str(bad), "simulate"]) == 2


def test_bad_covariance_is_numeric_failure(tmp_path):
    cfg = {"simulation": {"n_clusters": 5, "within_cov": [[1, 0, 0, 0]] * 4}}
    assert run(tmp_path, "simulate", config=cfg) == 3
