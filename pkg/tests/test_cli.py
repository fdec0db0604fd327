import json

import pytest

from dgms import cli
from dgms.errors import ConfigError


def run(args):
    return cli.main(args)


def test_config_pair_parsing():
    d = cli.parse_config_pairs(["fine_level=4", "domain=unit-square",
                                "coarse_levels=[1,2]"])
    assert d["fine_level"] == 4
    assert d["domain"] == "unit-square"
    assert d["coarse_levels"] == [1, 2]
    with pytest.raises(ConfigError):
        cli.parse_config_pairs(["oops"])
    with pytest.raises(ConfigError):
        cli.parse_config_pairs(["=3"])


def test_verify_exits_clean(capsys):
    assert run(["verify"]) == 0
    out = capsys.readouterr().out
    assert "face identities" in out


def test_reference_writes_manifest(tmp_path):
    code = run([
        "reference",
        "--config", "domain=unit-square",
        "--config", "fine_level=3",
        "--config", "coarse_levels=[1]",
        "--out", str(tmp_path),
    ])
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["kind"] == "reference"
    assert manifest["ndof"] == 4 * 64


def test_msfem_writes_csv(tmp_path):
    code = run([
        "msfem",
        "--config", "domain=unit-square",
        "--config", "fine_level=4",
        "--config", "coarse_levels=[2]",
        "--out", str(tmp_path),
    ])
    assert code == 0
    lines = (tmp_path / "study.csv").read_text().splitlines()
    assert lines[0].startswith("H,Ndof,L,")
    assert len(lines) == 2


def test_convergence_command(tmp_path, capsys):
    code = run([
        "convergence",
        "--config", "domain=unit-square",
        "--config", "fine_level=4",
        "--config", "coarse_levels=[1,2]",
        "--out", str(tmp_path),
    ])
    assert code == 0
    assert "slopes" in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path, capsys):
    code = run([
        "convergence",
        "--config", "domain=moebius",
        "--out", str(tmp_path),
    ])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_unknown_key_exit_code(tmp_path):
    assert run(["msfem", "--config", "nope=1", "--out", str(tmp_path)]) == 2


def test_decay_command(tmp_path, capsys):
    code = run([
        "decay",
        "--config", "domain=unit-square",
        "--config", "fine_level=5",
        "--config", "coarse_levels=[3]",
        "--out", str(tmp_path),
    ])
    assert code == 0
    assert "gamma" in capsys.readouterr().out


def test_qoi_command(tmp_path, capsys):
    code = run([
        "qoi",
        "--config", "domain=unit-square",
        "--config", "fine_level=4",
        "--config", "coarse_levels=[2]",
        "--out", str(tmp_path),
    ])
    assert code == 0
    assert "bound" in capsys.readouterr().out


def test_localization_command(tmp_path, capsys):
    code = run([
        "localization",
        "--config", "domain=unit-square",
        "--config", "fine_level=4",
        "--config", "coarse_levels=[2]",
        "--config", "loc_constants=[1.0,2.0]",
        "--out", str(tmp_path),
    ])
    assert code == 0
    assert "gap" in capsys.readouterr().out
