"""CSV readers and writers for panels, groupings, TFP records and tables.

All writers sort rows deterministically and use pandas' shortest
round-trip float formatting, so re-reading a written file gives back the
same numbers.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .econometrics import RESULT_COLUMNS, format_table, stars
from .panel import PanelDataset, build_panel
from .productivity import INDICES, STATIC_INDICES

PANEL_COLUMNS = ["entity", "period", "variable", "value"]
GROUP_COLUMNS = ["entity", "scheme", "label"]
TFP_COLUMNS = ["entity", "t", "t1", *INDICES, "flags"]
STATIC_COLUMNS = ["entity", "period", *STATIC_INDICES]
DESCRIBE_COLUMNS = ["scheme", "variable", "group", "N", "mean", "min", "max", "defined"]
TREND_COLUMNS = ["period", "index", "mean", "N"]


def _read(path, columns, dtypes):
    path = Path(path)
    df = pd.read_csv(path, dtype=dtypes, keep_default_na=False, na_values=[""], encoding="utf-8",
                     float_precision="round_trip")
    if list(df.columns) != columns:
        raise ValueError(f"{path}: expected header {','.join(columns)}, got {','.join(df.columns)}")
    return df


def _int_column(df, col, path):
    try:
        num = pd.to_numeric(df[col], errors="raise")
    except (ValueError, TypeError) as exc:
        raise ValueError(f"{path}: column {col!r} must hold integers ({exc})") from None
    bad = ~np.isfinite(num) | (num != np.round(num))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{path}: non-integer {col} {df[col].iloc[row]!r} on data row {row + 1}")
    return num.astype(np.int64)


def _write(df, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n")
    return path


def read_panel_csv(path, groups: dict | None = None) -> PanelDataset:
    """Long ``entity,period,variable,value`` file to a panel."""
    df = _read(path, PANEL_COLUMNS, {"entity": str, "variable": str, "period": str})
    period = _int_column(df, "period", path)
    value = pd.to_numeric(df["value"], errors="coerce")
    bad = value.isna()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{path}: non-numeric value {df['value'].iloc[row]!r} on data row {row + 1}")
    recs = zip(df["entity"], period.tolist(), df["variable"], value.astype(float).tolist())
    return build_panel(recs, groups)


def write_panel_csv(panel: PanelDataset, path, variables=None) -> Path:
    names = list(variables) if variables is not None else panel.variables
    rows = [(e, p, n, v) for e, p, n, v in panel.to_records() if n in names]
    df = pd.DataFrame(rows, columns=PANEL_COLUMNS)
    df["order"] = df["variable"].map({n: k for k, n in enumerate(names)})
    df = df.sort_values(["entity", "period", "order"], kind="stable").drop(columns="order")
    return _write(df, path)


def read_groups_csv(path) -> dict:
    """``scheme -> {entity: label}``."""
    df = _read(path, GROUP_COLUMNS, str)
    if df.isna().any().any():
        raise ValueError(f"{path}: empty cells in grouping file")
    dup = df.duplicated(["entity", "scheme"])
    if dup.any():
        e, s = df.loc[dup, ["entity", "scheme"]].iloc[0]
        raise ValueError(f"{path}: entity {e!r} labeled twice in scheme {s!r}")
    out = {}
    for e, s, lab in df.itertuples(index=False):
        out.setdefault(s, {})[e] = lab
    return out


def write_groups_csv(groups: dict, path) -> Path:
    rows = [(e, s, lab) for s in sorted(groups) for e, lab in sorted(groups[s].items())]
    return _write(pd.DataFrame(rows, columns=GROUP_COLUMNS), path)


def write_tfp_csv(frame: pd.DataFrame, path) -> Path:
    return _write(frame[TFP_COLUMNS].sort_values(["entity", "t1"], kind="stable"), path)


def read_tfp_csv(path) -> pd.DataFrame:
    df = _read(path, TFP_COLUMNS, {"entity": str, "flags": str})
    for c in ("t", "t1"):
        df[c] = _int_column(df, c, path)
    df["flags"] = df["flags"].fillna("")
    return df


def write_static_csv(frame: pd.DataFrame, path) -> Path:
    return _write(frame[STATIC_COLUMNS].sort_values(["entity", "period"], kind="stable"), path)


def read_static_csv(path) -> pd.DataFrame:
    df = _read(path, STATIC_COLUMNS, {"entity": str})
    df["period"] = _int_column(df, "period", path)
    return df


def write_results(frame: pd.DataFrame, path) -> tuple:
    """Coefficient table as CSV plus an aligned text twin (``.txt``)."""
    path = Path(path)
    csv = _write(frame[RESULT_COLUMNS], path)
    txt = path.with_suffix(".txt")
    txt.write_text(format_table(frame) + "\n", encoding="utf-8")
    return csv, txt


def read_results_csv(path) -> pd.DataFrame:
    df = _read(path, RESULT_COLUMNS, {"term": str, "stars": str, "group": str})
    df["stars"] = df["stars"].fillna("")
    df["group"] = df["group"].fillna("")
    wrong = [i for i, (p, s) in enumerate(zip(df["p"], df["stars"])) if stars(p) != s]
    if wrong:
        raise ValueError(f"{path}: stars disagree with p on data rows {[i + 1 for i in wrong]}")
    return df


def write_frame(frame: pd.DataFrame, path, columns) -> Path:
    return _write(frame[columns], path)
