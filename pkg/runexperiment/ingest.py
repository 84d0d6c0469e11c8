"""
CSV ingestion for real-data runs
"""

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from common.errors import IngestError
from targets.targets import Dataset

logger = logging.getLogger(__name__)


def ingest_csv(path: Path | str, response_column: str | None, covariate_columns: Sequence[str]) -> Dataset:
    """
    Load declared columns from a CSV file in a single pass

    Args:
        path: CSV file with a header row
        response_column: Column holding responses, or None for unsupervised models
        covariate_columns: Columns forming the observation matrix

    Returns:
        Dataset with the declared response/covariates

    Raises:
        IngestError: file missing, column missing, or missing/non-numeric cells
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"CSV file not found: {path}")
    covariate_columns = list(covariate_columns)
    if not covariate_columns:
        raise IngestError("At least one covariate column is required")
    wanted = covariate_columns + ([response_column] if response_column else [])

    header = pd.read_csv(path, nrows=0, comment="#").columns
    missing = [c for c in wanted if c not in header]
    if missing:
        raise IngestError(f"Column(s) not found in {path.name}: {', '.join(missing)}")

    frame = pd.read_csv(path, usecols=wanted, comment="#")
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy()
    if bad.any():
        rows = (np.flatnonzero(bad) + 1).tolist()
        shown = ", ".join(str(r) for r in rows[:20]) + (" ..." if len(rows) > 20 else "")
        raise IngestError(f"{path.name}: missing or non-numeric values in data row(s) {shown}")

    observations = numeric[covariate_columns].to_numpy(dtype=float)
    responses = numeric[response_column].to_numpy(dtype=float) if response_column else None
    logger.info(f"Loaded {len(numeric)} rows from {path.name}")
    return Dataset(observations, responses, tuple(covariate_columns))
