import json
from unittest.mock import Mock, patch

import pytest

from ion_saturation import cli
from ion_saturation.cli import build_parser, command_arguments, main, run_cli
from ion_saturation.errors import FitConvergenceError, NumericalFailureError
from ion_saturation.satfit import FitResult


@pytest.fixture(autouse=True)
def quiet_logging():
    with patch("ion_saturation.cli.configure_logging") as mock_configure:
        yield mock_configure


class TestCLI:
    """Test cases for the CLI module."""

    def test_predict_success(self, capsys):
        """Test that predict prints a JSON report and exits 0."""
        assert main(["predict"]) == 0

        report = json.loads(capsys.readouterr().out)
        assert report["command"] == "predict"
        assert report["powers"]["p_min_pW"] == pytest.approx(49.66, rel=5e-3)

    def test_csv_format(self, capsys):
        """Test the flat CSV report."""
        assert main(["--format", "csv", "predict"]) == 0

        out = capsys.readouterr().out
        assert out.startswith("key,value\n")
        assert "powers.p_min_pW," in out

    def test_report_written_to_out(self, tmp_path, capsys):
        """Test that --out also writes the report file."""
        assert main(["--out", str(tmp_path), "predict"]) == 0
        assert (tmp_path / "predict_report.json").exists()

    def test_debug_flag(self, quiet_logging):
        """Test that --debug reaches the logging setup and module flag."""
        with patch("ion_saturation.cli.run_command", return_value=0):
            assert main(["--debug", "predict"]) == 0

        quiet_logging.assert_called_once_with(True)
        assert cli.DEBUG is True
        cli.DEBUG = False

    def test_seed_override(self):
        """Test that --seed overrides scan.seed before the command runs."""
        with patch("ion_saturation.cli.create_command") as mock_create:
            mock_create.return_value.run.return_value.render.return_value = "{}"
            assert main(["--seed", "7", "scan", "simulate"]) == 0

        name, config = mock_create.call_args.args
        assert name == "scan simulate"
        assert config.scan.seed == 7

    def test_config_error_exit_code(self, tmp_path, capsys):
        """Test that an invalid configuration exits with 2."""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"scan": {"nx": 0}}))

        assert main(["--config", str(path), "predict"]) == 2
        assert "❌ scan.nx" in capsys.readouterr().err

    def test_data_error_exit_code(self, tmp_path, capsys):
        """Test that malformed data exits with 3."""
        path = tmp_path / "bad.csv"
        path.write_text("power,counts\n1,2\n")

        assert main(["fit", str(path)]) == 3
        assert "line 1" in capsys.readouterr().err

    def test_missing_file_exit_code(self, tmp_path, capsys):
        """Test that a missing input file exits with 3."""
        assert main(["fit", str(tmp_path / "absent.csv")]) == 3
        assert "❌" in capsys.readouterr().err

    def test_numerical_failure_exit_code(self, capsys):
        """Test that numerical failures exit with 4 and print diagnostics."""
        command = Mock()
        command.run.side_effect = NumericalFailureError("no convergence", {"order": 4096})
        command.handle_error.return_value = {"diagnostics": {"order": 4096}}
        with patch("ion_saturation.cli.create_command", return_value=command):
            assert main(["predict"]) == 4

        err = capsys.readouterr().err
        assert "❌ no convergence" in err
        assert "4096" in err

    def test_fit_convergence_exit_code(self, capsys):
        """Test that a non-converged fit exits with 4."""
        result = FitResult(1e-9, 1e-10, 5e4, 1.0, None, 1.0, False, 200)
        with patch(
            "ion_saturation.commands.fit_saturation",
            side_effect=FitConvergenceError("limit reached", result),
        ):
            assert main(["fit"]) == 4

        assert "last_iterate" in capsys.readouterr().err

    def test_keyboard_interrupt(self, capsys):
        """Test that main handles KeyboardInterrupt gracefully."""
        with patch("ion_saturation.cli.run_command", side_effect=KeyboardInterrupt()):
            assert main(["predict"]) == 130

        assert "Interrupted" in capsys.readouterr().err

    def test_general_exception(self, capsys):
        """Test that main handles unexpected exceptions gracefully."""
        with patch("ion_saturation.cli.run_command", side_effect=RuntimeError("boom")):
            assert main(["predict"]) == 1

        assert "❌ Application error: boom" in capsys.readouterr().err

    @patch("ion_saturation.cli.main", return_value=3)
    def test_run_cli_exits_with_status(self, mock_main):
        """Test that run_cli exits with the status of main."""
        with pytest.raises(SystemExit) as excinfo:
            run_cli()

        assert excinfo.value.code == 3
        mock_main.assert_called_once_with()


class TestArgumentParsing:
    """Test cases for argument parsing."""

    def test_command_required(self):
        """Test that a command is required."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_scan_modes(self):
        """Test the scan subcommands and their arguments."""
        args = build_parser().parse_args(["--out", "o", "scan", "reconstruct", "s.csv"])
        assert command_arguments(args) == (
            "scan reconstruct",
            {"scan_path": "s.csv", "out_dir": "o"},
        )
        args = build_parser().parse_args(["scan", "simulate"])
        assert command_arguments(args) == ("scan simulate", {"out_dir": "."})

    def test_coupling_report_arguments(self):
        """Test the coupling-report options."""
        args = build_parser().parse_args(
            ["coupling-report", "--p-exp", "1081", "--fit-sigma", "5", "--at-mirror"]
        )
        name, kwargs = command_arguments(args)
        assert name == "coupling-report"
        assert kwargs == {
            "p_exp_pw": 1081.0,
            "fit_sigma_pw": 5.0,
            "at_mirror": True,
            "csv_path": None,
        }

    def test_coupling_report_sources_exclusive(self):
        """Test that --p-exp and --csv cannot be combined."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(
                ["coupling-report", "--p-exp", "1081", "--csv", "a.csv"]
            )

    def test_unknown_format(self):
        """Test that unsupported formats are rejected by the parser."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["--format", "xml", "predict"])
