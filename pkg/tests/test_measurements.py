"""
Measurement CSV reading and writing.
"""

import numpy as np
import pandas as pd
import pytest

from enrichment import HourlySeries
from errors import DataError, SchemaError
from measurements import (
    check_teacher_alignment,
    common_timeline,
    pmu_series,
    read_measurements,
    series_frame,
    sm_series,
    write_series,
)


def _write(path, rows, columns="timestamp,transformer_id,p_kw,q_kvar"):
    path.write_text(columns + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def test_pmu_files_round_trip(tmp_path, three_bus_dataset):
    truth = three_bus_dataset.truth
    write_series(tmp_path / "pmu" / "S4.csv", {"S4": truth["S4"]})
    df = read_measurements(tmp_path / "pmu")
    series = pmu_series(df)
    assert set(series) == {"S4"}
    assert set(series["S4"]) == {"p", "q", "pv"}
    np.testing.assert_allclose(series["S4"]["p"].samples, truth["S4"]["p"].samples, rtol=1e-8)
    np.testing.assert_array_equal(series["S4"]["pv"].hour_start, truth["S4"]["pv"].hour_start)


def test_sm_files_round_trip(tmp_path, three_bus_dataset):
    sm = three_bus_dataset.sm()
    write_series(tmp_path / "sm.csv", sm)
    series = sm_series(read_measurements(tmp_path / "sm.csv"))
    assert set(series) == set(sm)
    np.testing.assert_allclose(series["S2"]["q"].values, sm["S2"]["q"].values, rtol=1e-8)
    timeline = common_timeline(series)
    assert timeline.size == 24 * three_bus_dataset.settings.days
    check_teacher_alignment(three_bus_dataset.pmu(["S1"]), timeline)


def test_missing_column_is_a_schema_error(tmp_path):
    path = _write(tmp_path / "a.csv", ["2024-01-01T00:00:00,T1,1.0"], "timestamp,transformer_id,p_kw")
    with pytest.raises(SchemaError, match="q_kvar"):
        read_measurements(path)


def test_unexpected_column_is_a_schema_error(tmp_path):
    path = _write(tmp_path / "a.csv", ["2024-01-01T00:00:00,T1,1.0,0.5,3"],
                  "timestamp,transformer_id,p_kw,q_kvar,voltage")
    with pytest.raises(SchemaError, match="voltage"):
        read_measurements(path)


def test_errors_carry_the_file_line(tmp_path):
    path = _write(tmp_path / "a.csv", ["2024-01-01T00:00:00,T1,1.0,0.5", "not-a-date,T1,1.0,0.5"])
    with pytest.raises(SchemaError, match=r"a\.csv:3: cannot parse timestamp"):
        read_measurements(path)
    path = _write(tmp_path / "b.csv", ["2024-01-01T00:00:00,T1,1.0,0.5", "2024-01-01T01:00:00,T1,abc,0.5"])
    with pytest.raises(SchemaError, match=r"b\.csv:3: column p_kw"):
        read_measurements(path)
    path = _write(tmp_path / "c.csv", ["2024-01-01T00:00:00,T1,inf,0.5"])
    with pytest.raises(DataError, match=r"c\.csv:2"):
        read_measurements(path)


def test_empty_directory_is_rejected(tmp_path):
    with pytest.raises(SchemaError):
        read_measurements(tmp_path)
    with pytest.raises(SchemaError):
        read_measurements(tmp_path / "missing.csv")


def test_pmu_hours_must_share_sample_count(tmp_path):
    rows = [
        "2024-01-01T00:00:00,T1,1.0,0.5",
        "2024-01-01T00:30:00,T1,1.0,0.5",
        "2024-01-01T01:00:00,T1,1.0,0.5",
    ]
    with pytest.raises(DataError, match="sample counts"):
        pmu_series(read_measurements(_write(tmp_path / "a.csv", rows)))


def test_pmu_duplicate_timestamps(tmp_path):
    rows = ["2024-01-01T00:00:00,T1,1.0,0.5", "2024-01-01T00:00:00,T1,2.0,0.5"]
    with pytest.raises(DataError, match="duplicate"):
        pmu_series(read_measurements(_write(tmp_path / "a.csv", rows)))


def test_timelines_must_agree():
    ts = np.array(["2024-01-01T00", "2024-01-01T01"], dtype="datetime64[s]")
    sm = {
        "A": {"p": HourlySeries("A", ts, [1.0, 2.0])},
        "B": {"p": HourlySeries("B", ts + np.timedelta64(3600, "s"), [1.0, 2.0])},
    }
    with pytest.raises(DataError):
        common_timeline(sm)


def test_series_frame_fills_missing_quantities():
    ts = np.array(["2024-01-01T00", "2024-01-01T01"], dtype="datetime64[s]")
    frame = series_frame({"A": {"p": HourlySeries("A", ts, [1.0, 2.0])}})
    assert list(frame.columns) == ["timestamp", "transformer_id", "p_kw", "q_kvar"]
    assert frame["q_kvar"].tolist() == [0.0, 0.0]
    assert pd.api.types.is_datetime64_any_dtype(frame["timestamp"])
