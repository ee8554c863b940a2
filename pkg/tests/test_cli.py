"""
Tests for the falling-sphere command line.
"""

import json
from types import SimpleNamespace

import pytest

from falling_sphere import __version__
from falling_sphere.bifurcation import STATUS_BIFURCATION, STATUS_NO_CRITICAL, STATUS_NOT_SIMPLE
from falling_sphere.cli import EXIT_ERROR, EXIT_NOT_CERTIFIED, EXIT_OK, build_config, main, make_parser
from falling_sphere.config import EigenSpec, QuadratureSpec, Resolution, save_config
from falling_sphere.core import FallingSphereSuite


@pytest.fixture
def config_file(small_config, tmp_path):
    path = tmp_path / "run.json"
    save_config(small_config, path)
    return path


@pytest.fixture
def manufactured_file(small_config, tmp_path):
    path = tmp_path / "manufactured.json"
    config = small_config.replace(resolution=Resolution(1, 2), modes=(1,), eigen=EigenSpec(count=8, method="dense"))
    save_config(config, path)
    return path


class TestArguments:
    """Test cases for argument parsing and overrides."""

    def test_overrides(self, config_file, tmp_path):
        """Test that command-line flags override the configuration file."""
        args = make_parser().parse_args(
            ["spectrum", "--config", str(config_file), "--mode", "2", "--lambda-max", "0.5",
             "--out", str(tmp_path / "other"), "--manufactured", "--log-level", "DEBUG"]
        )
        config = build_config(args)
        assert config.modes == (2,)
        assert config.lambda_max == 0.5
        assert config.output_dir == str(tmp_path / "other")
        assert config.manufactured.enabled
        assert config.log_level == "DEBUG"

    def test_defaults_without_file(self):
        """Test that no configuration file means defaults."""
        config = build_config(make_parser().parse_args(["verify"]))
        assert config.resolution == Resolution()

    def test_version(self, capsys):
        """Test the version flag."""
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_unknown_command(self):
        """Test that unknown subcommands are refused by argparse."""
        with pytest.raises(SystemExit) as info:
            main(["plot"])
        assert info.value.code == 2

    def test_missing_config_file(self, tmp_path, capsys):
        """Test the error for a missing configuration file."""
        code = main(["verify", "--config", str(tmp_path / "absent.json")])
        assert code == EXIT_ERROR
        assert "not found" in capsys.readouterr().err


class TestCommands:
    """Test cases for command exit codes and output."""

    def test_verify(self, config_file, capsys):
        """Test that verification passes and prints the identity table."""
        assert main(["verify", "--config", str(config_file)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "rotlet torque -8 pi e3" in out
        assert "FAIL" not in out

    def test_verify_underresolved(self, small_config, tmp_path, capsys):
        """Test that coarse quadrature fails verification."""
        path = tmp_path / "coarse.json"
        save_config(small_config.replace(quadrature=QuadratureSpec(margin=-15)), path)
        assert main(["verify", "--config", str(path)]) == EXIT_ERROR
        assert "underresolved" in capsys.readouterr().err

    def test_manufactured_critical(self, manufactured_file, capsys):
        """Test the closed-form crossing at lam0 = sqrt(lambda_star) = 2."""
        code = main(
            ["critical", "--config", str(manufactured_file), "--manufactured", "--mode", "1",
             "--lambda-min", "0", "--lambda-max", "4"]
        )
        assert code == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["status"] == STATUS_BIFURCATION
        assert result["lambda0"] == pytest.approx(2.0, rel=1e-8)
        assert result["mu_prime"] == pytest.approx([1.0, 1.0], rel=1e-5)

    def test_critical_without_branch(self, config_file, capsys):
        """Test that a physical critical run needs a stored branch."""
        assert main(["critical", "--config", str(config_file)]) == EXIT_ERROR
        assert "run 'falling-sphere base' first" in capsys.readouterr().err

    def test_base_then_critical(self, config_file, capsys):
        """Test that small Galilei numbers report no critical point."""
        assert main(["base", "--config", str(config_file)]) == EXIT_OK
        capsys.readouterr()
        assert main(["critical", "--config", str(config_file), "--mode", "1"]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["status"] == STATUS_NO_CRITICAL
        assert result["lambda0"] is None

    def test_fingerprint_mismatch(self, config_file, small_config, tmp_path, capsys):
        """Test that a branch of another resolution is refused with a diff."""
        assert main(["base", "--config", str(config_file)]) == EXIT_OK
        capsys.readouterr()
        other = tmp_path / "finer.json"
        save_config(small_config.replace(resolution=Resolution(3, 4)), other)
        assert main(["critical", "--config", str(other)]) == EXIT_ERROR
        err = capsys.readouterr().err
        assert "another configuration" in err
        assert "resolution.L: 2 != 3" in err

    def test_not_certified_exit_code(self, config_file, monkeypatch, capsys):
        """Test exit code 3 for a crossing that is not certified simple."""
        report = SimpleNamespace(m=1, status=STATUS_NOT_SIMPLE, lambda0=0.5, mu_prime=None,
                                 sb_functional=None, notes=["double eigenvalue"])
        monkeypatch.setattr(FallingSphereSuite, "critical", lambda self, m: report)
        assert main(["critical", "--config", str(config_file)]) == EXIT_NOT_CERTIFIED
        assert json.loads(capsys.readouterr().out)["status"] == STATUS_NOT_SIMPLE

    def test_manufactured_spectrum(self, manufactured_file, capsys):
        """Test the spectrum summary line."""
        code = main(["spectrum", "--config", str(manufactured_file), "--manufactured", "--mode", "1",
                     "--lambda-max", "3"])
        assert code == EXIT_OK
        assert "mode 1:" in capsys.readouterr().out
