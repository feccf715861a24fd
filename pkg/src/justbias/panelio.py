"""CSV exchange format for person-month panels."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .policy import FIRST_SUPPORTED, LAST_SUPPORTED
from .synthpanel import PanelDataset

CSV_COLUMNS = (
    "person_id",
    "t",
    "birth_year",
    "birth_month",
    "x_months",
    "retired",
    "sah_5pt",
    "poor_health",
    "h_subjective",
    "obj_index",
    *(f"cond_{k}" for k in range(1, 8)),
    "married",
    "health_ins",
)
# CSV name -> internal column name
_RENAME = {"x_months": "x", "obj_index": "h_objective"}
_INT_COLUMNS = ("person_id", "t", "birth_year", "birth_month", "x_months", "sah_5pt")
_BINARY_COLUMNS = ("retired", "poor_health", *(f"cond_{k}" for k in range(1, 8)), "married", "health_ins")
_FLOAT_COLUMNS = ("h_subjective", "obj_index")


class DataError(ValueError):
    """An imported panel violates the exchange schema."""


def _row(i: int) -> int:
    # 1-based file line number of data row i (header is line 1)
    return int(i) + 2


def export_panel_csv(panel: PanelDataset, path) -> Path:
    """Write ``panel`` in the exchange schema; truth-only columns are withheld."""
    inv = {v: k for k, v in _RENAME.items()}
    frame = panel.frame.rename(columns=inv)
    missing = [c for c in CSV_COLUMNS if c not in frame]
    if missing:
        raise DataError(f"panel lacks columns required for export: {', '.join(missing)}")
    path = Path(path)
    frame.loc[:, list(CSV_COLUMNS)].to_csv(path, index=False, lineterminator="\n")
    return path


def import_panel_csv(path) -> PanelDataset:
    """Read and validate a panel; violations name the offending file line."""
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise DataError(f"{path}: cannot read CSV: {err}") from err
    missing = [c for c in CSV_COLUMNS if c not in raw.columns]
    if missing:
        raise DataError(f"{path}: missing column(s): {', '.join(missing)}")
    out = {}
    for c in _INT_COLUMNS + _BINARY_COLUMNS:
        num = pd.to_numeric(raw[c], errors="coerce")
        bad = num.isna() | (num != np.round(num))
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"{path}: line {_row(i)}: {c}={raw[c].iloc[i]!r} is not an integer")
        out[c] = num.to_numpy().astype(np.int64)
    for c in _FLOAT_COLUMNS:
        num = pd.to_numeric(raw[c], errors="coerce")
        if num.isna().any():
            i = int(np.flatnonzero(num.isna().to_numpy())[0])
            raise DataError(f"{path}: line {_row(i)}: {c}={raw[c].iloc[i]!r} is not a number")
    floats = pd.read_csv(path, usecols=list(_FLOAT_COLUMNS), dtype=float, float_precision="round_trip")
    for c in _FLOAT_COLUMNS:
        out[c] = floats[c].to_numpy()

    def check(mask, message):
        if mask.any():
            i = int(np.flatnonzero(mask)[0])
            raise DataError(f"{path}: line {_row(i)}: {message(i)}")

    for c in _BINARY_COLUMNS:
        check(~np.isin(out[c], (0, 1)), lambda i, c=c: f"{c}={out[c][i]} outside {{0, 1}}")
    check((out["sah_5pt"] < 1) | (out["sah_5pt"] > 5), lambda i: f"sah_5pt={out['sah_5pt'][i]} outside 1..5")
    check((out["birth_month"] < 1) | (out["birth_month"] > 12), lambda i: f"birth_month={out['birth_month'][i]} outside 1..12")
    birth = 12 * out["birth_year"] + out["birth_month"] - 1
    lo = 12 * FIRST_SUPPORTED[0] + FIRST_SUPPORTED[1] - 1
    hi = 12 * LAST_SUPPORTED[0] + LAST_SUPPORTED[1] - 1
    check((birth < lo) | (birth > hi), lambda i: f"birth {out['birth_year'][i]}-{out['birth_month'][i]:02d} outside supported cohorts")
    check(out["t"] < 0, lambda i: f"t={out['t'][i]} is negative")

    pid, t = out["person_id"], out["t"]
    key = pd.DataFrame({"p": pid, "t": t})
    check(key.duplicated().to_numpy(), lambda i: f"duplicate (person_id, t) = ({pid[i]}, {t[i]})")
    same = np.r_[False, pid[1:] == pid[:-1]]
    check(same & np.r_[False, t[1:] <= t[:-1]], lambda i: f"t={t[i]} not increasing within person {pid[i]}")
    order = np.argsort(pid, kind="stable")
    sp = pid[order]
    check_split = np.r_[False, sp[1:] == sp[:-1]] & np.r_[False, np.diff(order) != 1]
    if check_split.any():
        i = int(order[np.flatnonzero(check_split)[0]])
        raise DataError(f"{path}: line {_row(i)}: rows of person {pid[i]} are not contiguous")

    frame = pd.DataFrame({_RENAME.get(c, c): out[c] for c in CSV_COLUMNS})
    frame = frame.sort_values(["person_id", "t"], kind="stable").reset_index(drop=True)
    r = frame["retired"].to_numpy()
    first = frame.assign(tr=np.where(r == 1, frame["t"], np.iinfo(np.int64).max)).groupby("person_id")["tr"].transform("min")
    frame["months_retired"] = np.where(frame["t"] >= first, frame["t"] - first, 0).astype(np.int64)
    frame["obj_count"] = frame[[f"cond_{k}" for k in range(1, 8)]].sum(axis=1).astype(np.int64)
    return PanelDataset(frame, truth=None, meta={"source": str(path)})
