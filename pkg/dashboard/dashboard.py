"""
Helpers behind the Streamlit pages: locate run directories, load their
tables, and build the command line that launches an experiment.
"""

import json
import subprocess
import sys
from pathlib import Path
from typing import Sequence

import pandas as pd

from common.csvio import read_frame

REPO_ROOT = Path(__file__).resolve().parent.parent
RUNNER = REPO_ROOT / "runexperiment" / "runexperiment.py"


def list_run_dirs(results_root: Path | str) -> list[Path]:
    """Directories below results_root holding a reports.jsonl, sorted by name"""
    results_root = Path(results_root)
    if not results_root.exists():
        return []
    return sorted(p.parent for p in results_root.rglob("reports.jsonl"))


def list_configs(config_dir: Path | str = REPO_ROOT / "configs") -> list[Path]:
    return sorted(Path(config_dir).glob("*.toml"))


def load_summary(run_dir: Path | str) -> pd.DataFrame:
    path = Path(run_dir) / "summary.csv"
    return read_frame(path) if path.exists() else pd.DataFrame()


def load_reports(run_dir: Path | str) -> pd.DataFrame:
    """One row per (algorithm, repetition), provenance dropped"""
    path = Path(run_dir) / "reports.jsonl"
    if not path.exists():
        return pd.DataFrame()
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                record.pop("provenance", None)
                records.append(record)
    return pd.DataFrame.from_records(records)


def load_gp_is_summaries(run_dir: Path | str) -> pd.DataFrame:
    """Long table: repetition, functional, estimate, mean, median, q025, q975"""
    rows = []
    for path in sorted(Path(run_dir).glob("rep_*/gp_is_summary.json")):
        repetition = int(path.parent.name.split("_")[1])
        with open(path, "r", encoding="utf-8") as f:
            blob = json.load(f)
        for functional, stats in blob.get("summary", {}).items():
            rows.append({"repetition": repetition, "functional": functional, **stats})
    return pd.DataFrame(rows)


def load_failures(run_dir: Path | str) -> list[dict]:
    path = Path(run_dir) / "failures.json"
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f).get("failures", [])


def build_run_command(
    config_path: Path | str,
    output_dir: str | None = None,
    algorithms: Sequence[str] = (),
    workers: int | None = None,
    seed: int | None = None,
) -> list[str]:
    """argv for running an experiment in a child process"""
    command = [sys.executable, str(RUNNER), "run", str(config_path), "--no-progress"]
    if output_dir:
        command += ["--output-dir", output_dir]
    for algorithm in algorithms:
        command += ["--algorithm", algorithm]
    if workers:
        command += ["--workers", str(workers)]
    if seed is not None:
        command += ["--seed", str(seed)]
    return command


def stream_command(command: list[str]):
    """Run a command, yielding its combined output line by line; the final item is the exit code"""
    process = subprocess.Popen(
        command,
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
        cwd=REPO_ROOT,
    )
    for line in process.stdout:
        yield line.rstrip("\n")
    yield process.wait()
