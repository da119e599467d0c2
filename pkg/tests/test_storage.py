"""CSV/JSON export of aggregated series and their re-import."""

import json

import numpy as np
import pandas as pd
import pytest

from app.core.errors import ExportError, OjaError
from app.core.harness import SERIES_COLUMNS, SWEEP_COLUMNS, AggregateSeries, aggregate
from app.storage.export import export_series, export_sweep, load_series


@pytest.fixture
def one_row() -> AggregateSeries:
    return aggregate(np.array([0]), np.array([[0.9]]), np.array([0.9]), {"bound": "theorem"})


@pytest.fixture
def series(rng) -> AggregateSeries:
    t = np.arange(0, 1001, 50)
    sin2 = np.sort(rng.uniform(size=(20, len(t))), axis=1)[:, ::-1]
    bound = np.linspace(0.9, 0.1, len(t))
    return aggregate(t, sin2, bound, {"d": 10, "bound": "theorem"})


class TestCsv:
    def test_exact_layout(self, one_row, tmp_path):
        path = export_series(one_row, tmp_path / "one.csv")
        raw = path.read_bytes()
        assert raw == (
            b"t,mean_sin2,p20,p80,bound_sin2\n"
            b"0,0.90000000000000002,0.90000000000000002,0.90000000000000002,0.90000000000000002\n"
        )

    def test_round_trip_is_exact(self, series, tmp_path):
        path = export_series(series, tmp_path / "series.csv")
        loaded = load_series(path)
        pd.testing.assert_frame_equal(loaded.frame, series.frame, check_exact=True)
        assert loaded.config == {} and loaded.digest == ""

    def test_creates_parent_directories(self, one_row, tmp_path):
        path = export_series(one_row, tmp_path / "a" / "b" / "one.csv")
        assert path.exists()


class TestJson:
    def test_document_shape(self, series, tmp_path):
        path = export_series(series, tmp_path / "series.json")
        doc = json.loads(path.read_text(encoding="utf-8"))
        assert set(doc) == {"config", "digest", "rows"}
        assert doc["digest"] == series.digest
        assert set(doc["rows"][0]) == set(SERIES_COLUMNS)
        assert len(doc["rows"]) == len(series)

    def test_round_trip_is_exact(self, series, tmp_path):
        loaded = load_series(export_series(series, tmp_path / "series.json"))
        pd.testing.assert_frame_equal(loaded.frame, series.frame, check_exact=True)
        assert loaded.config == series.config
        assert loaded.digest == series.digest

    def test_explicit_format_overrides_suffix(self, one_row, tmp_path):
        path = export_series(one_row, tmp_path / "one.csv", fmt="json")
        assert json.loads(path.read_text())["rows"][0]["t"] == 0
        assert load_series(path, fmt="json").rows == one_row.rows


class TestErrors:
    def test_empty_series(self, tmp_path):
        empty = AggregateSeries(frame=pd.DataFrame(columns=SERIES_COLUMNS), config={}, digest="")
        with pytest.raises(OjaError, match="empty"):
            export_series(empty, tmp_path / "empty.csv")

    def test_unknown_format(self, one_row, tmp_path):
        with pytest.raises(OjaError, match="Invalid format"):
            export_series(one_row, tmp_path / "one.csv", fmt="xml")

    def test_unwritable_path(self, one_row, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        with pytest.raises(ExportError) as info:
            export_series(one_row, blocker / "one.csv")
        assert info.value.path == str(blocker / "one.csv")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ExportError):
            load_series(tmp_path / "missing.csv")


class TestSweep:
    @pytest.fixture
    def table(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(1e-5, 1.5e-4, 0.068, 0.031), (1e-4, 4.7e-4, 0.215, 0.092)], columns=SWEEP_COLUMNS
        )

    def test_csv_layout(self, table, tmp_path):
        path = export_sweep(table, {"d": 10}, tmp_path / "sweep.csv")
        lines = path.read_text(encoding="utf-8").split("\n")
        assert lines[0] == "velocity,eta_hat,x_star,steady_state"
        assert len(lines) == 4 and lines[-1] == ""
        loaded = pd.read_csv(path, float_precision="round_trip")
        pd.testing.assert_frame_equal(loaded, table, check_exact=True)

    def test_json_document(self, table, tmp_path):
        path = export_sweep(table, {"d": 10}, tmp_path / "sweep.json")
        doc = json.loads(path.read_text(encoding="utf-8"))
        assert doc["config"] == {"d": 10}
        assert [row["velocity"] for row in doc["rows"]] == [1e-5, 1e-4]

    def test_rejects_foreign_columns(self, tmp_path):
        with pytest.raises(OjaError, match="Sweep columns"):
            export_sweep(pd.DataFrame({"v": [0.1]}), {}, tmp_path / "x.csv")

    def test_rejects_empty_table(self, tmp_path):
        with pytest.raises(OjaError, match="empty"):
            export_sweep(pd.DataFrame(columns=SWEEP_COLUMNS), {}, tmp_path / "x.csv")
