"""
ShellRig Command Line Tests
"""

import json

import pandas as pd
import pytest

from app.cli import EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_OK, main, parse_param
from shellrig.errors import ConfigError, GeodesicError, PatchError

SMALL_CHART = """
schema_version = 1

[scenario]
name = "small_chart"

[family]
name = "plane"

[chart]
radius = 0.4
r = 0.2

[experiment]
kind = "rigidity"
"""

SHORT_WRINKLE = """
schema_version = 1

[scenario]
name = "short_wrinkle"

[domain]
d = 1
m_per_side = 33

[family]
name = "curve-wrinkle"

[reference]
kind = "family"

[experiment]
kind = "convergence"
values = [1, 2]
"""


def test_parse_param():
    assert parse_param("k=1..3") == ("k", [1.0, 2.0, 3.0])
    assert parse_param("height=0.1, 0.2") == ("height", [0.1, 0.2])
    for bad in ("k", "k=3..1", "k=a,b", "=1"):
        with pytest.raises(ConfigError):
            parse_param(bad)


def test_check_prints_the_resolved_config(config_dir, capsys):
    assert main(["check", str(config_dir / "cylinder.toml"), "--set", "family.radius=2.0"]) == EXIT_OK
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["family"]["radius"] == 2.0
    assert resolved["target"]["metric"] == "flat"


def test_run_writes_reports(config_dir, tmp_path, capsys):
    assert main(["run", str(config_dir / "plane.toml"), "--out", str(tmp_path)]) == EXIT_OK
    printed = capsys.readouterr().out.split()
    assert printed == [str(tmp_path / "plane.csv"), str(tmp_path / "plane.json")]
    assert "E_s" in pd.read_csv(tmp_path / "plane.csv").columns


def test_bad_config_exits_with_one(write_config, tmp_path, capsys):
    path = write_config("[domain]\nbogus = 1\n")
    assert main(["run", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "domain.bogus" in capsys.readouterr().err
    assert main(["check", str(tmp_path / "absent.toml")]) == EXIT_CONFIG


def test_violated_hypothesis_exits_with_two(write_config, tmp_path, capsys):
    path = write_config(SMALL_CHART)
    assert main(["run", str(path), "--out", str(tmp_path)]) == EXIT_HYPOTHESIS
    assert "good-set fraction" in capsys.readouterr().err


def test_sweep_overrides_the_values(write_config, tmp_path):
    path = write_config(SHORT_WRINKLE)
    assert main(["sweep", str(path), "--param", "k=1..3", "--out", str(tmp_path)]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "short_wrinkle.csv")
    assert frame["k"].tolist() == [1.0, 2.0, 3.0]
    document = json.loads((tmp_path / "short_wrinkle.json").read_text())
    assert document["kind"] == "convergence"
    assert document["config"]["experiment"]["values"] == [1.0, 2.0, 3.0]


def test_output_dir_comes_from_the_environment(config_dir, tmp_path, monkeypatch, capsys):
    env_dir = tmp_path / "env"
    monkeypatch.setenv("SHELLRIG_OUTPUT_DIR", str(env_dir))
    assert main(["run", str(config_dir / "plane.toml")]) == EXIT_OK
    assert capsys.readouterr().out.split() == [str(env_dir / "plane.csv"), str(env_dir / "plane.json")]
    assert (env_dir / "plane.json").exists()


def test_environment_wins_over_the_config_and_out_wins_over_both(config_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("SHELLRIG_OUTPUT_DIR", str(tmp_path / "env"))
    plane = str(config_dir / "plane.toml")
    assert main(["run", plane, "--set", f"output.dir={json.dumps(str(tmp_path / 'cfg'))}"]) == EXIT_OK
    assert (tmp_path / "env" / "plane.csv").exists()
    assert not (tmp_path / "cfg").exists()
    assert main(["run", plane, "--out", str(tmp_path / "cli")]) == EXIT_OK
    assert (tmp_path / "cli" / "plane.csv").exists()


def test_configured_output_dir_without_environment(config_dir, tmp_path, monkeypatch):
    monkeypatch.delenv("SHELLRIG_OUTPUT_DIR", raising=False)
    target = tmp_path / "cfg"
    assert main(["run", str(config_dir / "plane.toml"), "--set", f"output.dir={json.dumps(str(target))}"]) == EXIT_OK
    assert (target / "plane.json").exists()


@pytest.mark.parametrize(
    "error", [GeodesicError("geodesic left the patch"), PatchError("outside the chart"), ArithmeticError("bad cubes")]
)
def test_evaluation_errors_exit_with_one(config_dir, tmp_path, monkeypatch, capsys, error):
    def failing_run(config, n_jobs=None):
        raise error

    monkeypatch.setattr("app.cli.run_experiment", failing_run)
    assert main(["run", str(config_dir / "plane.toml"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert type(error).__name__ in capsys.readouterr().err
    assert not any(tmp_path.iterdir())
