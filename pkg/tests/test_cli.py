import json
import shutil
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dance.cli import (PRESETS, REPORT_COLUMNS, load_config, main, phase_done, pipeline_runs,
                       read_manifest, run_finalize)
from dance.cosearch import SearchConfig, SearchResult
from dance.workload import ZERO, ArchSpace
from dance.oracle import read_dataset

SMALL_EVAL = ["--set", "evaluator.hwgen_width=16", "--set", "evaluator.costest_width=16",
              "--set", "evaluator.hwgen.batch_size=16"]
SMALL_SEARCH = ["--set", "search.task_train=128", "--set", "search.task_search=64",
                "--set", "search.task_val=64", "--set", "search.retrain_epochs=2"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """dataset -> evaluator -> search -> finalize with tiny settings."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-dataset", "--networks", "20", "--seed", "1", "--out", str(d / "data/ds.csv")]) == 0
    assert main(["train-evaluator", "--dataset", str(d / "data/ds.csv"), "--out",
                 str(d / "ev/model.bin"), "--epochs", "2"] + SMALL_EVAL) == 0
    assert main(["search", "--evaluator", str(d / "ev/model.bin"), "--lambda2", "1e-4",
                 "--epochs", "2", "--seed", "3", "--out", str(d / "run")] + SMALL_SEARCH) == 0
    assert main(["finalize", "--arch", str(d / "run/arch.json"), "--evaluator",
                 str(d / "ev/model.bin")] + SMALL_SEARCH) == 0
    return d


def test_gen_dataset_deterministic_with_ratio(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-dataset", "--networks", "10", "--seed", "1", "--out",
                     str(tmp_path / name / "ds.csv")]) == 0
    a, b = (tmp_path / "a/ds.csv").read_bytes(), (tmp_path / "b/ds.csv").read_bytes()
    assert a == b
    ds = read_dataset(tmp_path / "a/ds.csv")
    assert np.sum(ds.kind == "rand") == 8 * np.sum(ds.kind == "opt") == 80
    man = read_manifest(tmp_path / "a")
    assert man["phases"]["gen-dataset"]["seeds"] == {"seed": 1}
    assert phase_done(tmp_path / "a", "gen-dataset")


def test_usage_errors_exit_2(tmp_path, capsys, monkeypatch):
    assert main(["gen-dataset", "--networks", "0", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["gen-dataset", "--networks", "2", "--cost", "bogus",
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["gen-dataset", "--networks", "2", "--set", "hw_space.bogus=1",
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["gen-dataset", "--networks", "2", "--set", "search.lambda2=-1",
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["search", "--lambda2", "1e-3", "--out", str(tmp_path / "s")]) == 2
    assert main(["search", "--warmup", "3", "--out", str(tmp_path / "s")]) == 2
    assert main(["bogus-command"]) == 2
    monkeypatch.setenv("DANCE_THREADS", "zero")
    assert main(["gen-dataset", "--networks", "2", "--out", str(tmp_path / "x.csv")]) == 2
    assert not (tmp_path / "x.csv").exists()
    capsys.readouterr()


def test_collision_policy(tmp_path, capsys):
    path = str(tmp_path / "ds.csv")
    assert main(["gen-dataset", "--networks", "2", "--out", path]) == 0
    assert main(["gen-dataset", "--networks", "2", "--out", path]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["gen-dataset", "--networks", "3", "--out", path, "--force"]) == 0


def test_threads_do_not_change_output(tmp_path, monkeypatch):
    assert main(["gen-dataset", "--networks", "6", "--out", str(tmp_path / "a/ds.csv")]) == 0
    monkeypatch.setenv("DANCE_THREADS", "3")
    assert main(["gen-dataset", "--networks", "6", "--out", str(tmp_path / "b/ds.csv")]) == 0
    assert (tmp_path / "a/ds.csv").read_bytes() == (tmp_path / "b/ds.csv").read_bytes()


def test_config_file_and_overrides(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"search": {"lambda2": 0.5}, "cost_model": {"e_dram": 100.0}}))
    cfg = load_config(str(cfg_path), ["search.epochs=7", "search.cost=linear:1,0,0"])
    assert cfg["search"]["lambda2"] == 0.5 and cfg["search"]["epochs"] == 7
    assert cfg["cost_model"]["e_dram"] == 100.0 and cfg["search"]["cost"] == "linear:1,0,0"


def test_pipeline_ends_to_end_pieces(workdir):
    man = read_manifest(workdir / "ev")
    assert set(man["phases"]) == {"train-evaluator"}
    assert (workdir / "ev/model.val.csv").exists()
    final = json.loads((workdir / "run/final.json").read_text())
    assert final["method"] == "dance" and "relative_gap" in final
    assert set(read_manifest(workdir / "run")["phases"]) == {"search", "finalize"}
    # a manifest reproduces its run
    assert main(["search", "--config", str(workdir / "run/manifest.json"), "--evaluator",
                 str(workdir / "ev/model.bin"), "--out", str(workdir / "rerun")]) == 0
    assert (workdir / "rerun/arch.json").read_bytes() == (workdir / "run/arch.json").read_bytes()
    assert (workdir / "rerun/trace.csv").read_bytes() == (workdir / "run/trace.csv").read_bytes()


def test_eval_evaluator(workdir):
    report = workdir / "ev/report.csv"
    assert main(["eval-evaluator", "--model", str(workdir / "ev/model.bin"), "--dataset",
                 str(workdir / "ev/model.val.csv"), "--report", str(report)]) == 0
    lines = report.read_text().splitlines()
    assert len(lines) == 5 and lines[1].startswith("hardware_generation")
    # the training split itself is rejected
    assert main(["eval-evaluator", "--model", str(workdir / "ev/model.bin"), "--dataset",
                 str(workdir / "data/ds.csv"), "--report", str(workdir / "ev/r2.csv")]) == 1


def test_collapsed_run_is_recorded_and_reported(workdir, tmp_path, capsys):
    space = ArchSpace()
    cfg = SearchConfig(task_train=128, task_search=64, task_val=64, retrain_epochs=2, seed=3,
                       loss_variant="edd_original", lambda2=1e-4)
    alpha = np.zeros((space.positions, 7))
    res = SearchResult([ZERO] * space.positions, alpha, alpha[None], [], cfg, space)
    rd = tmp_path / "collapsed_run"
    res.save(rd)
    arch = rd / "arch.json"
    # standalone finalize refuses, the pipeline form records the collapse instead
    assert main(["finalize", "--arch", str(arch)]) == 1
    doc = run_finalize(arch, None, rd / "final.json", load_config(None), None, 1, False,
                       record_collapse=True)
    assert doc["collapsed"] and 0 < doc["accuracy"] <= 100
    assert phase_done(rd, "finalize") and not (rd / "final.json").exists()
    capsys.readouterr()
    assert main(["report", str(workdir / "run"), str(rd), "--out", str(tmp_path / "rep")]) == 0
    assert "collapsed to Zero" in capsys.readouterr().err
    rows = [dict(zip(REPORT_COLUMNS, line.split(",")))
            for line in (tmp_path / "rep/report.csv").read_text().splitlines()[1:]]
    assert [r["dataflow"] for r in rows][1] == "collapsed"
    assert rows[1]["method"] == "edd" and rows[1]["EDAP"] == "nan"


def test_report_one_run(workdir, tmp_path, capsys):
    out = tmp_path / "rep"
    missing = tmp_path / "not_finalized"
    missing.mkdir()
    assert main(["report", str(workdir / "run"), str(missing), "--out", str(out)]) == 0
    assert "skipped" in capsys.readouterr().err
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0].split(",") == list(REPORT_COLUMNS) and len(lines) == 2
    row = dict(zip(REPORT_COLUMNS, lines[1].split(",")))
    lat, en, ar = float(row["latency"]), float(row["energy"]), float(row["area"])
    assert float(row["EDAP"]) == pytest.approx(lat * en * ar, rel=1e-8)
    root = ET.parse(out / "scatter.svg").getroot()
    assert root.tag.endswith("svg")
    assert main(["report", str(missing), "--out", str(tmp_path / "rep2")]) == 1


def test_pipeline_runs_layout():
    runs = dict(pipeline_runs(PRESETS["smoke"], {"lambda2": 0.0}, 4))
    assert set(runs) == {"dance_l1e-05", "dance_l0.0001", "dance_l0.001", "no_penalty",
                         "edd_original_l0.0001"}
    assert all(r["seed"] == 4 and r["epochs"] == 10 for r in runs.values())
    assert runs["no_penalty"]["loss_variant"] == "nas"


def test_pipeline_refuses_non_empty_out(tmp_path):
    (tmp_path / "junk").write_text("x")
    assert main(["pipeline", "--out", str(tmp_path)]) == 1


@pytest.mark.slow
def test_pipeline_resume_skips_completed_phases(smoke_pipeline, tmp_path, capsys):
    out = tmp_path / "copy"
    shutil.copytree(smoke_pipeline, out)
    # simulate a kill during the last search: its outputs and everything after are gone
    last = out / "runs" / "edd_original_l0.0001"
    shutil.rmtree(last)
    (out / "report.csv").unlink()
    capsys.readouterr()
    assert main(["pipeline", "--preset", "smoke", "--seed", "1", "--out", str(out), "--resume"]) == 0
    log = capsys.readouterr().out
    for phase in ("gen-dataset", "train-evaluator"):
        assert f"[{phase}] up to date" in log
    assert log.count("[search] up to date") == 4
    assert (out / "report.csv").read_bytes() == (smoke_pipeline / "report.csv").read_bytes()
    assert read_manifest(out / "evaluator") == read_manifest(smoke_pipeline / "evaluator")
