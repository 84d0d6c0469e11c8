import json
import sys

from dashboard.dashboard import (
    RUNNER,
    build_run_command,
    list_configs,
    list_run_dirs,
    load_failures,
    load_gp_is_summaries,
    load_reports,
    load_summary,
    stream_command,
)


def _fake_run(root):
    run_dir = root / "bernoulli"
    (run_dir / "rep_000").mkdir(parents=True)
    (run_dir / "rep_001").mkdir()
    lines = [
        {"algorithm": "dis", "repetition": 0, "mahalanobis": 0.1, "provenance": {"seed": 0}},
        {"algorithm": "dis", "repetition": 1, "mahalanobis": 0.3, "provenance": {"seed": 0}},
    ]
    (run_dir / "reports.jsonl").write_text("\n".join(json.dumps(line) for line in lines) + "\n")
    (run_dir / "summary.csv").write_text("# config_hash=h seed=0\nalgorithm,repetitions,mahalanobis_mean\ndis,2,0.2\n")
    for rep, estimate in (("rep_000", 0.01), ("rep_001", 0.02)):
        blob = {"summary": {"mean_theta_1": {"estimate": estimate, "mean": estimate, "median": estimate, "q025": 0.0, "q975": 0.1}}}
        (run_dir / rep / "gp_is_summary.json").write_text(json.dumps(blob))
    (run_dir / "failures.json").write_text(json.dumps({"failures": [{"repetition": 2, "stage": "repetition"}]}))
    return run_dir


def test_loaders_read_run_directory(tmp_path):
    run_dir = _fake_run(tmp_path)
    assert list_run_dirs(tmp_path) == [run_dir]
    assert list_run_dirs(tmp_path / "nowhere") == []

    summary = load_summary(run_dir)
    assert summary.loc[0, "mahalanobis_mean"] == 0.2

    reports = load_reports(run_dir)
    assert list(reports["repetition"]) == [0, 1]
    assert "provenance" not in reports

    gp_is = load_gp_is_summaries(run_dir)
    assert list(gp_is["repetition"]) == [0, 1]
    assert set(gp_is["functional"]) == {"mean_theta_1"}

    assert load_failures(run_dir)[0]["repetition"] == 2


def test_loaders_tolerate_empty_directory(tmp_path):
    assert load_summary(tmp_path).empty
    assert load_reports(tmp_path).empty
    assert load_gp_is_summaries(tmp_path).empty
    assert load_failures(tmp_path) == []


def test_shipped_configs_are_listed():
    names = {path.stem for path in list_configs()}
    assert {"rare_bernoulli", "logistic_regression"} <= names


def test_build_run_command():
    command = build_run_command("configs/rare_bernoulli.toml", "out", ["dis", "gp_is"], workers=4, seed=0)
    assert command[:4] == [sys.executable, str(RUNNER), "run", "configs/rare_bernoulli.toml"]
    assert "--no-progress" in command
    assert command[command.index("--output-dir") + 1] == "out"
    assert command.count("--algorithm") == 2
    assert command[command.index("--seed") + 1] == "0"
    assert "--workers" not in build_run_command("x.toml")


def test_stream_command_yields_lines_then_exit_code():
    output = list(stream_command([sys.executable, "-c", "print('one'); print('two'); raise SystemExit(3)"]))
    assert output == ["one", "two", 3]
