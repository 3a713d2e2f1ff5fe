"""Track CSV ingestion and result serialization.

Track files are comma-separated with a header row, UTF-8, '.' decimal
point.  Required columns: ``time`` (numbers in the chosen unit, or
ISO-8601 timestamps converted to hours since the first observation) and
coordinate columns ``x``, ``y``, ``z`` (or ``x1..xd`` beyond three).
Optional columns: ``state`` (0/1/2 or moving/resting/handling; empty
means unknown) and ``excluded`` (states ruled out at that time point,
separated by ``|`` or whitespace -- no commas inside a CSV field).

Default units are hours and kilometers.
"""
from __future__ import annotations

import json
import math

import numpy as np
import pandas as pd

from .errors import ParseError
from .inference import Track
from .params import State

__all__ = [
    "parse_track",
    "write_track_csv",
    "write_density_csv",
    "write_fit_json",
    "read_fit_json",
    "coordinate_names",
]

_STATE_SYMBOLS = {"moving": 0, "resting": 1, "handling": 2}
_TIME_FACTORS = {"hours": 1.0, "minutes": 1.0 / 60.0,
                 "seconds": 1.0 / 3600.0, "days": 24.0}


def coordinate_names(dim: int) -> list[str]:
    if dim <= 3:
        return ["x", "y", "z"][:dim]
    return [f"x{i + 1}" for i in range(dim)]


def _parse_times(col, time_unit: str) -> np.ndarray:
    factor = _TIME_FACTORS.get(time_unit)
    if factor is None:
        raise ValueError(f"unknown time unit {time_unit!r}")
    numeric = pd.to_numeric(col, errors="coerce")
    if not numeric.isna().any():
        return numeric.to_numpy(dtype=float) * factor
    try:
        stamps = pd.to_datetime(col, utc=True, format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise ParseError(f"time column is neither numeric nor ISO-8601: {exc}")
    return ((stamps - stamps.iloc[0]) / pd.Timedelta(hours=1)).to_numpy(dtype=float)


def _parse_state_token(tok, row):
    tok = str(tok).strip().lower()
    if tok in _STATE_SYMBOLS:
        return _STATE_SYMBOLS[tok]
    try:
        value = int(tok)
        return int(State(value))
    except (ValueError, KeyError):
        raise ParseError(f"unrecognized state token {tok!r}", row=row)


def parse_track(path, time_unit: str = "hours", dim: int | None = None,
                round_grid: float = 0.0) -> Track:
    """Read a track CSV into a :class:`~mrhmove.inference.Track`.

    ``round_grid`` > 0 rounds every coordinate to the nearest multiple
    before increments are formed, so repeated positions become exact-zero
    displacements and hit the atom branch of the transition kernel.
    """
    df = pd.read_csv(path)
    cols = {c.strip().lower(): c for c in df.columns}
    if "time" not in cols:
        raise ParseError("missing required column 'time'")
    if dim is None:
        if "x1" in cols:
            dim = 1
            while f"x{dim + 1}" in cols:
                dim += 1
        else:
            dim = sum(1 for n in ("x", "y", "z") if n in cols)
        if dim == 0:
            raise ParseError("no coordinate columns found (expected x, y, ...)")
    names = coordinate_names(dim)
    missing = [n for n in names if n not in cols]
    if missing:
        raise ParseError(f"missing coordinate columns {missing}")
    if len(df) < 2:
        raise ParseError("a track needs at least two rows")

    times = _parse_times(df[cols["time"]], time_unit)
    deltas = np.diff(times)
    bad = np.nonzero(deltas <= 0.0)[0]
    if bad.size:
        k = int(bad[0])
        msg = "duplicate timestamp" if deltas[k] == 0.0 else "non-monotone time"
        raise ParseError(msg, row=k + 2)  # header is row 1

    coords = df[[cols[n] for n in names]].to_numpy(dtype=float)
    if not np.all(np.isfinite(coords)):
        raise ParseError("non-finite coordinate value")
    if round_grid < 0.0:
        raise ValueError("round_grid must be nonnegative")
    if round_grid > 0.0:
        coords = np.round(coords / round_grid) * round_grid

    state_info = None
    if "state" in cols or "excluded" in cols:
        state_info = [None] * len(df)
        if "state" in cols:
            for k, v in enumerate(df[cols["state"]]):
                if pd.isna(v) or str(v).strip() == "":
                    continue
                state_info[k] = _parse_state_token(v, k + 2)
        if "excluded" in cols:
            for k, v in enumerate(df[cols["excluded"]]):
                if pd.isna(v) or str(v).strip() == "":
                    continue
                if state_info[k] is not None and not isinstance(state_info[k], set):
                    continue  # a known state overrides exclusions
                toks = str(v).replace("|", " ").split()
                state_info[k] = {_parse_state_token(t, k + 2) for t in toks}
    return Track(times, coords, state_info)


def write_track_csv(path, times, positions, states=None, occupations=None):
    """Write a simulated or observed track; floats keep full precision so a
    round-trip through :func:`parse_track` is bit-exact."""
    positions = np.asarray(positions)
    data = {"time": times}
    for j, name in enumerate(coordinate_names(positions.shape[1])):
        data[name] = positions[:, j]
    if states is not None:
        data["state"] = np.asarray(states, dtype=int)
    if occupations is not None:
        data["occupation"] = occupations
    pd.DataFrame(data).to_csv(path, index=False, float_format=None)


def write_density_csv(path, records):
    """Serialize density-curve and atom records.

    ``records`` yields dicts with keys kind ('density' or 'atom'), start,
    end, s, value; density grids are strictly increasing per series.
    """
    df = pd.DataFrame.from_records(records,
                                   columns=["kind", "start", "end", "s", "value"])
    df.to_csv(path, index=False)


def write_fit_json(path, report: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, allow_nan=True)
        fh.write("\n")


def read_fit_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    if "estimates" not in report:
        raise ValueError("fit report lacks an 'estimates' section")
    return report
