"""
Result tables: per-algorithm mean and standard deviation over repetitions
"""

import json
import logging
from pathlib import Path
from typing import Sequence

import pandas as pd

from common.csvio import write_frame
from discrepancy.discrepancy import DiscrepancyReport, finite_or_none

logger = logging.getLogger(__name__)

DEFAULT_LAYOUT = (
    "mahalanobis",
    "kl_gaussian_fwd",
    "kl_gaussian_rev",
    "kl_knn_fwd",
    "kl_knn_rev",
    "concentration_rho",
    "skew_eta",
)


def summarise_reports(reports: Sequence[DiscrepancyReport | dict], layout: Sequence[str] = DEFAULT_LAYOUT) -> pd.DataFrame:
    """
    One row per algorithm (first-seen order), columns <metric>_mean and <metric>_sd in layout order

    sd uses ddof=1 and is 0 for a single repetition; metrics that are
    missing for every report are left out.
    """
    if not reports:
        raise ValueError("No reports to summarise")
    records = [r.to_dict() if isinstance(r, DiscrepancyReport) else dict(r) for r in reports]
    frame = pd.DataFrame.from_records(records)
    order = list(dict.fromkeys(frame["algorithm"]))
    grouped = frame.groupby("algorithm", sort=False)

    columns = {}
    for metric in layout:
        if metric not in frame or frame[metric].isna().all():
            continue
        values = frame[metric].astype(float)
        columns[f"{metric}_mean"] = values.groupby(frame["algorithm"], sort=False).mean()
        columns[f"{metric}_sd"] = values.groupby(frame["algorithm"], sort=False).std(ddof=1).fillna(0.0)
    summary = pd.DataFrame(columns).reindex(order)
    summary.insert(0, "repetitions", grouped.size().reindex(order))
    summary.index.name = "algorithm"
    return summary


def emit_results(
    reports: Sequence[DiscrepancyReport | dict],
    output_dir: Path | str,
    layout: Sequence[str] = DEFAULT_LAYOUT,
    timings: pd.DataFrame | None = None,
    provenance: dict | None = None,
) -> dict[str, Path]:
    """
    Write summary.csv, summary.json and summary.md

    Args:
        timings: optional frame with algorithm and wall_time_seconds columns;
            its mean appears in the CSV and markdown tables only

    Returns:
        Mapping of artifact name to path
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    summary = summarise_reports(reports, layout)

    blob = {
        "layout": [m for m in layout if f"{m}_mean" in summary],
        "algorithms": {
            algorithm: {
                "repetitions": int(row["repetitions"]),
                **{
                    metric: {"mean": finite_or_none(float(row[f"{metric}_mean"])), "sd": finite_or_none(float(row[f"{metric}_sd"]))}
                    for metric in layout
                    if f"{metric}_mean" in summary
                },
            }
            for algorithm, row in summary.iterrows()
        },
    }
    if provenance:
        blob["provenance"] = provenance
    json_path = output_dir / "summary.json"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(blob, f, indent=2, allow_nan=False)

    table = summary.copy()
    if timings is not None and not timings.empty:
        table["time_seconds_mean"] = timings.groupby("algorithm", sort=False)["wall_time_seconds"].mean().reindex(table.index)
    csv_path = write_frame(table.reset_index(), output_dir / "summary.csv", provenance)
    md_path = output_dir / "summary.md"
    md_path.write_text(table.reset_index().to_markdown(index=False, floatfmt=".4g") + "\n", encoding="utf-8")
    logger.info(f"Wrote summary for {len(table)} algorithm(s) to {output_dir}")
    return {"csv": csv_path, "json": json_path, "markdown": md_path}
