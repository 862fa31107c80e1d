import json

import pandas as pd
import pytest

from dampwave.main import build_parser, main


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out


def test_unknown_flag_is_a_usage_error():
    assert main(["simulate", "--no-such-flag"]) == 2
    assert main([]) == 2


def test_unset_flags_stay_out_of_the_namespace():
    args = build_parser().parse_args(["simulate", "--mu0", "0.5"])
    assert vars(args)["mu0"] == 0.5
    assert "eps" not in vars(args)
    args = build_parser().parse_args(["decay"])
    assert args.check == "decay"


def test_phi_command_writes_artifacts(tmp_path, capsys):
    code = main(["phi", "--mu0", "1", "--rmax", "25", "--output-dir", str(tmp_path)])
    assert code == 0
    assert "PASS phi_checks" in capsys.readouterr().out
    assert (tmp_path / "phi_checks" / "000-phi_table" / "phi_table.csv").exists()


def test_simulate_command(tmp_path):
    code = main(["simulate", "--mu0", "0", "--nonlinearity", "none", "--dx", "0.015625",
                 "--output-dir", str(tmp_path), "--name", "free"])
    assert code == 0
    manifest = json.loads((tmp_path / "free" / "manifest.json").read_text())
    assert manifest["kind"] == "simulate"
    assert manifest["config"]["dx"] == 0.015625


def test_config_file_and_flags(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"experiment": "simulate", "mu0": 0.0, "dx": 0.015625, "name": "from-file"}))
    assert main(["simulate", "--config", str(path), "--t-end", "1", "--output-dir", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "from-file" / "manifest.json").read_text())
    assert manifest["config"]["t_end"] == 1.0


@pytest.mark.parametrize("argv", [
    ["simulate", "--cfl", "1.5"],
    ["simulate", "--nx", "101"],
    ["lifespan", "--mu0", "0.5"],
    ["verify", "--workers", "0"],
])
def test_config_errors_exit_with_two(argv, tmp_path, capsys):
    assert main(argv + ["--output-dir", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_malformed_config_file_exits_with_two(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{")
    assert main(["phi", "--config", str(path), "--output-dir", str(tmp_path)]) == 2
    assert "line 1" in capsys.readouterr().err


@pytest.mark.slow
def test_verify_is_reproducible(tmp_path):
    codes = [main(["verify", "--output-dir", str(tmp_path / run)]) for run in ("first", "second")]
    assert codes[0] == codes[1]
    first = sorted(path.relative_to(tmp_path / "first") for path in (tmp_path / "first").rglob("*.csv"))
    second = sorted(path.relative_to(tmp_path / "second") for path in (tmp_path / "second").rglob("*.csv"))
    assert first and first == second
    for name in first:
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


@pytest.mark.slow
def test_lifespan_command_fits_the_ladder(tmp_path):
    code = main(["lifespan", "--mu0", "0.5", "--p", "2", "--eps-ladder", "8", "--output-dir", str(tmp_path)])
    assert code in (0, 1)
    fit_dir = tmp_path / "lifespan_sweep" / "fit"
    fit = json.loads((fit_dir / "lifespan_fit.json").read_text())
    assert fit["theory_slope"] == pytest.approx(-4.0 / 3.0)
    assert len(pd.read_csv(fit_dir / "records.csv")) == 8
