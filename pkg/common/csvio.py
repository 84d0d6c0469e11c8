"""
CSV helpers that stamp provenance into a leading comment line
"""

from pathlib import Path

import pandas as pd


def provenance_line(provenance: dict | None) -> str:
    if not provenance:
        return ""
    return "# " + " ".join(f"{key}={value}" for key, value in provenance.items()) + "\n"


def write_frame(frame: pd.DataFrame, path: Path | str, provenance: dict | None = None) -> Path:
    """
    Write a DataFrame as CSV, preceded by a '# key=value ...' line

    Args:
        frame: Table to write
        path: Output file
        provenance: Mapping written into the comment line (config hash, seed)

    Returns:
        The output path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(provenance_line(provenance))
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def read_frame(path: Path | str) -> pd.DataFrame:
    """Read a CSV written by write_frame (comment line skipped)"""
    return pd.read_csv(path, comment="#")
