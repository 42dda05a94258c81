import csv
import io
import json
import math

import numpy as np
import pytest

from ion_saturation.errors import InvalidInputError
from ion_saturation.report import Report


@pytest.fixture
def report():
    report = Report("scan reconstruct", {"scan": {"seed": 0}})
    report.add_section(
        "summary",
        {
            "fwhm_x_m": np.float64(5.3e-7),
            "fwhm_y_m": math.nan,
            "peak": {"ix": np.int64(10), "iy": 10},
            "powers_pW": np.array([1.0, 2.0]),
        },
    )
    return report


class TestReport:
    """Test cases for Report."""

    def test_sections_are_plain(self, report):
        """Test that numpy values and NaN become JSON-ready."""
        summary = report.sections["summary"]
        assert type(summary["fwhm_x_m"]) is float
        assert summary["fwhm_y_m"] is None
        assert type(summary["peak"]["ix"]) is int
        assert summary["powers_pW"] == [1.0, 2.0]

    def test_add_section_merges(self, report):
        """Test that repeated sections are extended."""
        report.add_section("summary", {"pixels_ok": 441})
        assert report.get("summary.pixels_ok") == 441
        assert report.get("summary.peak.ix") == 10
        assert report.get("summary.nothing", "x") == "x"

    def test_to_dict(self, report):
        """Test the document layout."""
        report.add_file("out/scan_map.csv")
        document = report.to_dict()
        assert list(document) == ["command", "summary", "files", "config"]
        assert document["command"] == "scan reconstruct"
        assert document["config"] == {"scan": {"seed": 0}}

    def test_json(self, report):
        """Test JSON rendering."""
        data = json.loads(report.render("json"))
        assert data["summary"]["fwhm_y_m"] is None

    def test_csv(self, report):
        """Test flat key,value rendering."""
        rows = list(csv.reader(io.StringIO(report.render("csv"))))
        values = dict(rows[1:])
        assert rows[0] == ["key", "value"]
        assert values["command"] == "scan reconstruct"
        assert values["summary.peak.ix"] == "10"
        assert values["summary.fwhm_y_m"] == ""
        assert json.loads(values["summary.powers_pW"]) == [1.0, 2.0]
        assert values["config.scan.seed"] == "0"

    def test_unknown_format(self, report):
        """Test that unknown formats are rejected."""
        with pytest.raises(InvalidInputError):
            report.render("xml")

    @pytest.mark.parametrize("fmt", ["json", "csv"])
    def test_write(self, report, tmp_path, fmt):
        """Test that reports are written next to, not over, data files."""
        path = report.write(tmp_path / "out", fmt)
        assert path.name == f"scan_reconstruct_report.{fmt}"
        assert path.read_text().startswith("{" if fmt == "json" else "key,value")
