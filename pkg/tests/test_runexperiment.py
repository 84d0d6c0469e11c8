import json
import math
import os

import numpy as np
import pytest
import toml
from typer.testing import CliRunner

from common.errors import ConfigurationError, IngestError
from discrepancy.discrepancy import DiscrepancyReport
from runexperiment.config import ALGORITHMS, load_config, parse_config
from runexperiment.emitresults import emit_results, summarise_reports
from runexperiment.ingest import ingest_csv
from runexperiment.runexperiment import apply_algorithm_filter, app, evenly_spaced, run_experiment

ENV_KEYS = ("GPMERGE_OUTPUT_DIR", "GPMERGE_WORKERS", "GPMERGE_LOG_LEVEL")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)
    yield
    # load_dotenv writes straight into os.environ
    for key in ENV_KEYS:
        os.environ.pop(key, None)


def _raw(**sections):
    raw = {"model": {"name": "rare_bernoulli", "true_theta": [0.01]}, "data": {"n": 100}, "partition": {"c_total": 4}}
    raw.update(sections)
    return raw


def test_parse_config_fills_defaults(tmp_path):
    config = parse_config(_raw(), env_file=tmp_path / ".env")
    assert config.partition.c_total == 4
    assert config.gp.j_train == 100
    assert config.recombine.dof == 5.0
    assert config.run.output_dir == "results"


@pytest.mark.parametrize(
    "raw",
    [
        _raw(partition={"c_total": 101}),
        _raw(recombine={"algorithms": ["dis", "magic"]}),
        _raw(recombine={"dof": 2.0}),
        _raw(hmc={"leapfrog_steps": 0}),
        _raw(reference={"kind": "exact"}),
        _raw(model={"name": "warped_gaussian"}, reference={"kind": "analytic"}),
        _raw(run={"repetitions": 1, "colour": "blue"}),
        _raw(data={"n": 100, "source": "csv"}),
    ],
)
def test_parse_config_rejects_bad_values(raw, tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(raw, env_file=tmp_path / ".env")


def test_algorithms_are_deduplicated(tmp_path):
    config = parse_config(_raw(recombine={"algorithms": ["dis", "gp_is", "dis"]}), env_file=tmp_path / ".env")
    assert config.recombine.algorithms == ["dis", "gp_is"]


def test_environment_then_explicit_overrides(tmp_path, monkeypatch):
    env_file = tmp_path / ".env"
    env_file.write_text("GPMERGE_WORKERS=3\n")
    monkeypatch.setenv("GPMERGE_OUTPUT_DIR", str(tmp_path / "from_env"))
    config = parse_config(_raw(), env_file=env_file)
    assert config.run.output_dir == str(tmp_path / "from_env")
    assert config.run.workers == 3
    config = parse_config(_raw(), {"output_dir": "explicit", "seed": None}, env_file=env_file)
    assert config.run.output_dir == "explicit"
    assert config.run.seed == 0


def test_bad_environment_value(tmp_path, monkeypatch):
    monkeypatch.setenv("GPMERGE_WORKERS", "many")
    with pytest.raises(ConfigurationError):
        parse_config(_raw(), env_file=tmp_path / ".env")


def test_config_hash_tracks_only_result_settings(tmp_path):
    env_file = tmp_path / ".env"
    base = parse_config(_raw(), env_file=env_file)
    moved = parse_config(_raw(), {"output_dir": "elsewhere", "workers": 4}, env_file=env_file)
    reseeded = parse_config(_raw(), {"seed": 1}, env_file=env_file)
    assert base.config_hash() == moved.config_hash()
    assert base.config_hash() != reseeded.config_hash()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[model\nname = ")
    with pytest.raises(ConfigurationError):
        load_config(broken)


@pytest.mark.parametrize("path", ["rare_bernoulli", "warped_gaussian", "gaussian_mixture", "logistic_regression", "laplace_mixture"])
def test_shipped_configs_are_valid(path, tmp_path):
    from runexperiment.config import REPO_ROOT

    config = load_config(REPO_ROOT / "configs" / f"{path}.toml", env_file=tmp_path / ".env")
    assert config.model.name == path


def test_algorithm_filter(tmp_path):
    config = parse_config(_raw(), env_file=tmp_path / ".env")
    assert apply_algorithm_filter(config, ["dis"]).recombine.algorithms == ["dis"]
    assert apply_algorithm_filter(config, None) is config
    with pytest.raises(ConfigurationError):
        apply_algorithm_filter(config, ["bogus"])


def test_evenly_spaced_keeps_ends():
    draws = np.arange(10.0)[:, None]
    np.testing.assert_array_equal(evenly_spaced(draws, 4).ravel(), [0.0, 3.0, 6.0, 9.0])
    assert evenly_spaced(draws, 20).shape == (10, 1)


def test_ingest_reads_declared_columns(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x1,x2,y,unused\n1,2,0,a\n3,4,1,b\n5,6,1,c\n")
    data = ingest_csv(path, "y", ["x1", "x2"])
    assert data.n == 3 and data.p == 2
    np.testing.assert_array_equal(data.responses, [0.0, 1.0, 1.0])
    np.testing.assert_array_equal(data.observations[:, 1], [2.0, 4.0, 6.0])


def test_ingest_names_missing_columns(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x1,y\n1,0\n")
    with pytest.raises(IngestError, match="x2"):
        ingest_csv(path, "y", ["x1", "x2"])
    with pytest.raises(IngestError):
        ingest_csv(tmp_path / "absent.csv", "y", ["x1"])


def test_ingest_names_bad_rows(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x,y\n1,0\nfoo,1\n3,\n4,1\n")
    with pytest.raises(IngestError, match="2, 3"):
        ingest_csv(path, "y", ["x"])


def _report(algorithm, value, repetition=0):
    return DiscrepancyReport(algorithm, repetition, value, 0.1, 0.2, 0.0)


def test_summary_mean_and_sd():
    summary = summarise_reports([_report("dis", 1.0, 0), _report("dis", 3.0, 1), _report("gp_is", 5.0, 0)])
    assert list(summary.index) == ["dis", "gp_is"]
    assert summary.loc["dis", "mahalanobis_mean"] == pytest.approx(2.0)
    assert summary.loc["dis", "mahalanobis_sd"] == pytest.approx(math.sqrt(2.0))
    assert summary.loc["gp_is", "mahalanobis_sd"] == 0.0
    assert summary.loc["dis", "repetitions"] == 2
    assert "kl_knn_fwd_mean" not in summary


def test_emit_results_writes_three_tables(tmp_path):
    paths = emit_results([_report("dis", 1.0, 0), _report("dis", 3.0, 1)], tmp_path, provenance={"config_hash": "h", "seed": 0})
    blob = json.loads(paths["json"].read_text())
    assert blob["algorithms"]["dis"]["mahalanobis"] == {"mean": 2.0, "sd": pytest.approx(math.sqrt(2.0))}
    assert blob["provenance"]["config_hash"] == "h"
    assert paths["csv"].read_text().startswith("# config_hash=h seed=0")
    assert "mahalanobis_mean" in paths["markdown"].read_text()
    with pytest.raises(ValueError):
        summarise_reports([])


def _tiny_config(tmp_path, name, workers):
    raw = {
        "model": {"name": "rare_bernoulli", "true_theta": [0.01]},
        "data": {"n": 2000, "seed": 1},
        "partition": {"c_total": 2},
        "hmc": {"n_iter": 300, "adapt_iters": 200, "leapfrog_steps": 10},
        "gp": {"j_train": 30, "restarts": 2},
        "recombine": {"algorithms": list(ALGORITHMS), "n_samples": 200, "m_realisations": 20},
        "reference": {"kind": "analytic"},
        "run": {"repetitions": 2, "seed": 5, "workers": workers, "output_dir": str(tmp_path / name)},
    }
    return parse_config(raw, env_file=tmp_path / ".env")


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("runs")
    serial = run_experiment(_tiny_config(tmp_path, "serial", 1), show_progress=False)
    threaded = run_experiment(_tiny_config(tmp_path, "threaded", 2), show_progress=False)
    return serial, threaded


def test_tiny_run_produces_every_artifact(tiny_runs):
    serial, _ = tiny_runs
    assert serial.exit_code == 0, serial.failures
    assert len(serial.reports) == 2 * len(ALGORITHMS)
    out = serial.output_dir
    for name in ("config.json", "reference_samples.csv", "reports.jsonl", "timings.csv", "summary.csv", "summary.md", "summary.json"):
        assert (out / name).exists(), name
    rep = out / "rep_000"
    assert (rep / "chain_batch_01.csv").exists() and (rep / "surrogate_batch_02.json").exists()
    assert (rep / "gp_is_summary.json").exists() and (rep / "weighted_dis.csv").exists()
    for algorithm in ALGORITHMS:
        assert (rep / f"samples_{algorithm}.csv").exists()
    assert not (out / "failures.json").exists()


def test_tiny_run_is_independent_of_worker_count(tiny_runs):
    serial, threaded = tiny_runs
    assert (serial.output_dir / "reports.jsonl").read_bytes() == (threaded.output_dir / "reports.jsonl").read_bytes()


def test_cli_summarize_rebuilds_tables(tiny_runs):
    serial, _ = tiny_runs
    (serial.output_dir / "summary.md").unlink()
    result = CliRunner().invoke(app, ["summarize", str(serial.output_dir)])
    assert result.exit_code == 0, result.output
    assert (serial.output_dir / "summary.md").exists()


def test_cli_summarize_needs_reports(tmp_path):
    result = CliRunner().invoke(app, ["summarize", str(tmp_path)])
    assert result.exit_code == 2


def test_cli_rejects_bad_config(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text(toml.dumps(_raw(partition={"c_total": 500})))
    result = CliRunner().invoke(app, ["run", str(path), "--no-progress"])
    assert result.exit_code == 2


def test_repetition_crash_is_recorded_and_run_continues(tmp_path, monkeypatch):
    import runexperiment.runexperiment as runner

    def flaky_repetition(config, model, data, reference, theta_star, repetition, output_dir, provenance):
        if repetition == 0:
            raise np.linalg.LinAlgError("Singular matrix")
        return [_report("dis", 1.0, repetition)], [{"algorithm": "dis", "repetition": repetition, "wall_time_seconds": 0.1}]

    monkeypatch.setattr(runner, "run_repetition", flaky_repetition)
    outcome = run_experiment(_tiny_config(tmp_path, "flaky", 1), show_progress=False)
    assert outcome.exit_code == 1
    assert [r.repetition for r in outcome.reports] == [1]
    failures = json.loads((outcome.output_dir / "failures.json").read_text())["failures"]
    assert failures[0]["repetition"] == 0
    assert failures[0]["error"] == "LinAlgError"
    assert (outcome.output_dir / "summary.md").exists()


def test_reference_crash_is_recorded(tmp_path, monkeypatch):
    import runexperiment.runexperiment as runner

    def broken_reference(config, model, data):
        raise ValueError("shape parameter is not positive definite")

    monkeypatch.setattr(runner, "reference_sample", broken_reference)
    outcome = run_experiment(_tiny_config(tmp_path, "no_reference", 1), show_progress=False)
    assert outcome.exit_code == 1
    failures = json.loads((outcome.output_dir / "failures.json").read_text())["failures"]
    assert failures == [
        {"repetition": -1, "stage": "reference", "error": "ValueError", "message": "shape parameter is not positive definite", "diagnostics": {}}
    ]


def test_summary_json_writes_partly_missing_metric_as_null(tmp_path):
    with_knn = DiscrepancyReport("dis", 0, 1.0, 0.1, 0.2, 0.0, kl_knn_fwd=0.3, kl_knn_rev=0.4)
    paths = emit_results([with_knn, _report("consensus", 2.0)], tmp_path)
    text = paths["json"].read_text()
    assert "NaN" not in text
    blob = json.loads(text)
    assert blob["algorithms"]["dis"]["kl_knn_fwd"]["mean"] == pytest.approx(0.3)
    assert blob["algorithms"]["consensus"]["kl_knn_fwd"]["mean"] is None
