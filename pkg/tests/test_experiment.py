import csv
import json

import pytest

from ctcdesign import cli
from ctcdesign.design import _IDEAL_CACHE
from ctcdesign.experiment import (
    ExperimentConfig,
    derive_seed,
    emit_figure_data,
    load_record,
    run_experiment,
)

SMALL_GA = {"population_size": 8, "min_generations": 2, "stall_generations": 2, "max_generations": 4, "n_polish": 1, "polish_starts": 1}


def tiny_config(tmp_path, **kw):
    base = dict(
        M_grid=[10],
        replicates=1,
        models=["mnl"],
        validation_markets=20,
        I_true=500,
        I_search=100,
        ideal_polish=1,
        ga=SMALL_GA,
        output_dir=str(tmp_path / "run"),
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("exp")
    config = tiny_config(tmp, models=["mnl", "ctc"], M_grid=[10, 20], multistart={"mnl": 1, "ctc": 1}, max_iterations=200)
    return config, run_experiment(config)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(M_grid=[50, 10])
    with pytest.raises(ValueError):
        ExperimentConfig(replicates=0)
    with pytest.raises(ValueError):
        ExperimentConfig(models=["probit"])
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"M_grid": [10], "bogus": 1})
    with pytest.raises(TypeError):
        ExperimentConfig(ga={"nonsense": 3})


def test_config_roundtrip_and_paper_scale(tmp_path):
    c = ExperimentConfig()
    c.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == c
    p = ExperimentConfig.paper_scale()
    assert p.M_grid == [10, 25, 50, 100, 200, 500, 1000]
    assert p.replicates == 20 and p.I_true == 100_000
    assert c.content_hash() != p.content_hash()


def test_derive_seed_pure():
    assert derive_seed(0, "data", 10, 1) == derive_seed(0, "data", 10, 1)
    assert len({derive_seed(0, "data", 10, r) for r in range(5)}) == 5
    assert derive_seed(0, "data", 10, 1) != derive_seed(1, "data", 10, 1)
    assert derive_seed(0, "data", 10, 1) != derive_seed(0, "estimate", 10, 1)


def test_single_cell_outputs(tmp_path):
    config = tiny_config(tmp_path, multistart={"mnl": 1})
    record = run_experiment(config)
    assert record.ok
    out = tmp_path / "run"
    assert len(read_csv(out / "metrics.csv")) == 1
    assert len(read_csv(out / "timings.csv")) == 1
    metrics = read_csv(out / "metrics.csv")[0]
    assert len(read_csv(out / "designs.csv")) == int(metrics["n_vehicles"])
    assert len((out / "cells.jsonl").read_text().splitlines()) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_cells"] == 1 and manifest["n_failed"] == 0
    rows = emit_figure_data(record, 1)
    assert len(rows) == 1
    assert rows[0]["min"] == rows[0]["mean"] == rows[0]["max"]


def test_metric_rows_and_bounds(tiny_run):
    config, record = tiny_run
    rows = read_csv(config.output_dir + "/metrics.csv")
    assert [(r["model"], r["M"], r["replicate"]) for r in rows] == [("mnl", "10", "0"), ("mnl", "20", "0"), ("ctc", "10", "0"), ("ctc", "20", "0")]
    for r in rows:
        assert r["schema_version"] == "1" and r["status"] == "ok"
        assert float(r["kld_full"]) >= 0
        assert float(r["design_error"]) >= 0
        assert float(r["profit_recovery"]) <= 1 + 3 * float(r["true_profit_se"]) / record.ideal.true_profit
        assert float(r["repriced_true_profit"]) >= float(r["true_profit"])


def test_figure_means_recomputed_from_csv(tiny_run):
    config, record = tiny_run
    rows = read_csv(config.output_dir + "/metrics.csv")
    for fig, name in ((1, "kld"), (2, "design_error"), (3, "profit_recovery"), (4, "pricing_on_offering_recovery")):
        for out in emit_figure_data(record, fig):
            vals = [float(r[name]) for r in rows if r["model"] == out["model"] and int(r["M"]) == out["M"]]
            assert out["mean"] == pytest.approx(sum(vals) / len(vals), abs=1e-12)
    fig5 = emit_figure_data(record, 5)
    assert len(fig5) == len(config.models) * len(config.M_grid)


def test_gap_markers(tiny_run):
    config, record = tiny_run
    partial = type(record)(config, record.config_hash, record.ideal, record.cells[:1])
    rows = emit_figure_data(partial, 3)
    assert [r["status"] for r in rows] == ["ok", "gap", "gap", "gap"]
    assert rows[1]["mean"] is None
    assert not partial.ok
    with pytest.raises(ValueError):
        emit_figure_data(record, 6)


def test_load_record_roundtrip(tiny_run):
    config, record = tiny_run
    back = load_record(config.output_dir)
    assert back.config == config
    assert emit_figure_data(back, 1) == emit_figure_data(record, 1)


def test_resume_reuses_cells(tiny_run):
    config, record = tiny_run
    again = run_experiment(config, resume=True)
    assert [c["metrics"] for c in again.cells] == [c["metrics"] for c in record.cells]


def test_failed_cell_recorded(tmp_path, monkeypatch):
    import ctcdesign.experiment as exp

    def boom(*a, **k):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(exp, "estimate", boom)
    config = tiny_config(tmp_path)
    record = run_experiment(config)
    assert not record.ok
    assert record.failures()[0]["error"] == "RuntimeError: synthetic failure"
    rows = read_csv(tmp_path / "run" / "metrics.csv")
    assert rows[0]["status"] == "failed"
    assert emit_figure_data(record, 1)[0]["status"] == "gap"


def test_reruns_identical(tmp_path):
    a = tiny_config(tmp_path / "a", multistart={"mnl": 1})
    b = tiny_config(tmp_path / "b", multistart={"mnl": 1})
    run_experiment(a)
    _IDEAL_CACHE.clear()
    run_experiment(b)
    assert (tmp_path / "a/run/metrics.csv").read_bytes() == (tmp_path / "b/run/metrics.csv").read_bytes()
    assert (tmp_path / "a/run/designs.csv").read_bytes() == (tmp_path / "b/run/designs.csv").read_bytes()


# ---------------------------------------------------------------------------
# command line


def write_config(tmp_path, **kw):
    path = tmp_path / "config.json"
    tiny_config(tmp_path, **kw).save(path)
    return path


def test_cli_pipeline(tmp_path, capsys):
    conf = write_config(tmp_path, multistart={"mnl": 1})
    out = tmp_path / "cli"
    common = ["--config", str(conf), "--output-dir", str(out), "--seed", "3"]
    assert cli.main(["generate", *common, "-M", "12"]) == 0
    assert (out / "shares.csv").exists()
    assert cli.main(["estimate", *common, "--data", str(out / "shares.csv"), "--model", "mnl", "--log", str(out / "log.csv")]) == 0
    doc = json.loads((out / "model_mnl.json").read_text())
    assert doc["kind"] == "mnl" and doc["estimation"]["M"] == 12 and doc["estimation"]["seed"] == 3
    assert cli.main(["design", *common, "--model-file", str(out / "model_mnl.json")]) == 0
    assert cli.main(["design", *common, "--truth"]) == 0
    capsys.readouterr()
    args = ["--model-file", str(out / "model_mnl.json"), "--design-file", str(out / "design_mnl.json"), "--ideal-file", str(out / "ideal.json")]
    assert cli.main(["evaluate", *common, *args]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"kld", "kld_full", "true_profit", "design_error", "profit_recovery", "pricing_on_offering_recovery"}
    assert report["pricing_on_offering_recovery"] >= report["profit_recovery"]


def test_cli_bundle_input(tmp_path):
    conf = write_config(tmp_path)
    out = tmp_path / "cli"
    common = ["--config", str(conf), "--output-dir", str(out)]
    assert cli.main(["generate", *common]) == 0
    assert cli.main(["estimate", *common, "--data", str(out / "bundle.json"), "--model", "nml", "--multistart", "1"]) in (0, 1)
    assert (out / "model_nml.json").exists()


def test_cli_experiment_and_figure(tmp_path, capsys):
    conf = write_config(tmp_path, multistart={"mnl": 1})
    out = tmp_path / "exp"
    assert cli.main(["experiment", "--config", str(conf), "--output-dir", str(out)]) == 0
    capsys.readouterr()
    assert cli.main(["figure", "3", "--output-dir", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "model,M,n,status,metric,min,mean,max"
    assert (out / "figure3.csv").exists()


def test_cli_engineering_csv(capsys):
    assert cli.main(["engineering", "--points", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "b,a,e,denominator,cost,within_bounds"
    assert len(lines) == 1 + 27


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main(["design", "--output-dir", str(tmp_path)]) == 2
    assert cli.main(["evaluate", "--output-dir", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        cli.main(["figure", "7"])
