"""
CSV ingestion and output for PMU and smart-meter measurements.

Files carry ``timestamp,transformer_id,p_kw,q_kvar`` and optionally ``pv_kw``.
Values stay in kW/kvar here; per-unit conversion happens in ``moments``.
"""

from pathlib import Path
from typing import Dict, Iterable, Mapping, Union

import numpy as np
import pandas as pd
import structlog

from enrichment import HighResSeries, HourlySeries
from errors import DataError, SchemaError

logger = structlog.get_logger(__name__)

REQUIRED_COLUMNS = ("timestamp", "transformer_id", "p_kw", "q_kvar")
COLUMN_QUANTITY = {"p_kw": "p", "q_kvar": "q", "pv_kw": "pv"}
QUANTITY_COLUMN = {v: k for k, v in COLUMN_QUANTITY.items()}

SeriesMap = Dict[str, Dict[str, Union[HighResSeries, HourlySeries]]]


def _csv_files(path: Path) -> Iterable[Path]:
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise SchemaError(f"no CSV files in {path}")
        return files
    if not path.exists():
        raise SchemaError(f"measurement path {path} does not exist")
    return [path]


def _read_one(path: Path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"transformer_id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaError(f"{path}: {e}") from e

    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")
    unknown = [c for c in df.columns if c not in REQUIRED_COLUMNS and c not in COLUMN_QUANTITY]
    if unknown:
        raise SchemaError(f"{path}: unexpected columns {', '.join(unknown)}")

    timestamps = pd.to_datetime(df["timestamp"], errors="coerce", utc=True)
    if timestamps.isna().any():
        row = int(np.flatnonzero(timestamps.isna().to_numpy())[0])
        raise SchemaError(f"{path}:{row + 2}: cannot parse timestamp {df['timestamp'].iloc[row]!r}")
    df["timestamp"] = timestamps.dt.tz_convert(None)

    for column in (c for c in COLUMN_QUANTITY if c in df.columns):
        values = pd.to_numeric(df[column], errors="coerce")
        if values.isna().any():
            row = int(np.flatnonzero(values.isna().to_numpy())[0])
            raise SchemaError(f"{path}:{row + 2}: column {column} is not numeric")
        if not np.all(np.isfinite(values.to_numpy())):
            row = int(np.flatnonzero(~np.isfinite(values.to_numpy()))[0])
            raise DataError(f"{path}:{row + 2}: column {column} is not finite")
        df[column] = values.astype(float)
    return df


def read_measurements(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV file or every CSV in a directory into one frame."""
    frames = [_read_one(f) for f in _csv_files(Path(path))]
    df = pd.concat(frames, ignore_index=True)
    if "pv_kw" in df.columns:
        df["pv_kw"] = df["pv_kw"].fillna(0.0)
    logger.debug("measurements read", path=str(path), rows=len(df), transformers=df["transformer_id"].nunique())
    return df


def _quantity_columns(df: pd.DataFrame):
    return [c for c in COLUMN_QUANTITY if c in df.columns]


def pmu_series(df: pd.DataFrame) -> Dict[str, Dict[str, HighResSeries]]:
    """Group 1-second (or finer-than-hourly) rows into per-hour sample matrices."""
    out: Dict[str, Dict[str, HighResSeries]] = {}
    for tid, group in df.groupby("transformer_id", sort=True):
        group = group.sort_values("timestamp")
        if group["timestamp"].duplicated().any():
            raise DataError(f"{tid}: duplicate PMU timestamps")
        hour = group["timestamp"].dt.floor("h")
        counts = hour.value_counts(sort=False)
        if counts.nunique() != 1:
            raise DataError(
                f"{tid}: PMU hours carry different sample counts",
                {"min": int(counts.min()), "max": int(counts.max())},
            )
        per_hour = int(counts.iloc[0])
        starts = hour.drop_duplicates().to_numpy()
        out[str(tid)] = {
            COLUMN_QUANTITY[c]: HighResSeries(str(tid), starts, group[c].to_numpy().reshape(-1, per_hour))
            for c in _quantity_columns(group)
        }
    return out


def sm_series(df: pd.DataFrame) -> Dict[str, Dict[str, HourlySeries]]:
    out: Dict[str, Dict[str, HourlySeries]] = {}
    for tid, group in df.groupby("transformer_id", sort=True):
        group = group.sort_values("timestamp")
        hours = group["timestamp"].dt.floor("h").to_numpy()
        out[str(tid)] = {
            COLUMN_QUANTITY[c]: HourlySeries(str(tid), hours, group[c].to_numpy())
            for c in _quantity_columns(group)
        }
    return out


def common_timeline(sm: Mapping[str, Mapping[str, HourlySeries]]) -> np.ndarray:
    """Hour timestamps shared by every smart-meter series."""
    timeline = None
    for tid, data in sm.items():
        for series in data.values():
            if timeline is None:
                timeline = series.timestamps
            elif not np.array_equal(series.timestamps, timeline):
                raise DataError(f"{tid}: smart-meter hours differ from the other transformers")
    if timeline is None:
        raise DataError("no smart-meter data")
    return timeline


def check_teacher_alignment(pmu: Mapping[str, Mapping[str, HighResSeries]], timeline: np.ndarray) -> None:
    for tid, data in pmu.items():
        for series in data.values():
            if not np.array_equal(series.hour_start, timeline):
                raise DataError(f"{tid}: PMU hours do not match the smart-meter timeline")


def series_frame(series: Mapping[str, Mapping[str, Union[HighResSeries, HourlySeries]]]) -> pd.DataFrame:
    """Long CSV frame, one row per timestamp and transformer."""
    frames = []
    for tid in sorted(series):
        data = series[tid]
        columns = {}
        timestamps = None
        for quantity in ("p", "q", "pv"):
            s = data.get(quantity)
            if s is None:
                continue
            if isinstance(s, HighResSeries):
                step = np.timedelta64(int(round(s.resolution_s * 1000)), "ms")
                offsets = np.arange(s.samples_per_hour) * step
                ts = (s.hour_start[:, None].astype("datetime64[ms]") + offsets[None, :]).ravel()
                values = s.samples.ravel()
            else:
                ts, values = s.timestamps, s.values
            timestamps = ts if timestamps is None else timestamps
            columns[QUANTITY_COLUMN[quantity]] = values
        if timestamps is None:
            continue
        frame = pd.DataFrame({"timestamp": pd.to_datetime(timestamps), "transformer_id": tid, **columns})
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=list(REQUIRED_COLUMNS))
    df = pd.concat(frames, ignore_index=True)
    for column in ("p_kw", "q_kvar"):
        if column not in df.columns:
            df[column] = 0.0
    if "pv_kw" in df.columns:
        df["pv_kw"] = df["pv_kw"].fillna(0.0)
    ordered = list(REQUIRED_COLUMNS) + (["pv_kw"] if "pv_kw" in df.columns else [])
    return df[ordered]


def write_series(path: Union[str, Path],
                 series: Mapping[str, Mapping[str, Union[HighResSeries, HourlySeries]]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series_frame(series).to_csv(path, index=False, date_format="%Y-%m-%dT%H:%M:%S", float_format="%.9g")
    logger.debug("series written", path=str(path), transformers=len(series))
