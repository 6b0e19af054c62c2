import json

import pytest

from cahn_delaunay import cli, plots

LIGHT = "[run]\ntau_list = 0.6\nepsilon_list = 0.1\n[bloch]\nenabled = false\n"


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "light.ini").write_text(LIGHT)
    assert cli.main(["verify-all", "--config", str(d / "light.ini"), "--out", str(d / "out")]) == 0
    return d


def test_plot_kinds_in_step():
    assert cli.PLOT_KINDS == plots.PLOT_KINDS


def test_geometry_subcommand(capsys):
    assert cli.main(["geometry", "--tau", "0.3", "0.7"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"0.3", "0.7"}
    assert all(c["passed"] for v in out.values() for c in v["checks"])


def test_hill_subcommand(capsys):
    assert cli.main(["hill", "--tau", "0.5"]) == 0
    assert json.loads(capsys.readouterr().out)["0.5"]["temperate_count"] == 6


def test_profile_subcommand(capsys):
    assert cli.main(["profile", "--eps", "0.1"]) == 0
    assert "ell" in json.loads(capsys.readouterr().out)["0.1"]["summary"]


def test_geometry_writes_curve_files(tmp_path, capsys):
    assert cli.main(["geometry", "--tau", "0.6", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "curve_tau0.6.csv").exists()


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[solver]\norder = 3\n")
    assert cli.main(["geometry", "--config", str(p)]) == 2
    assert f"{p}:2:" in capsys.readouterr().err


def test_bad_override_exit_code(capsys):
    assert cli.main(["geometry", "--tau", "1.5"]) == 2


def test_report_and_plots(run_dir, capsys):
    out = run_dir / "out"
    assert cli.main(["report", "--out", str(out)]) == 0
    assert capsys.readouterr().out == (out / "summary.txt").read_text()
    assert cli.main(["plot", "--kind", "all", "--out", str(out)]) == 0
    names = {p.name for p in (out / "plots").iterdir()}
    assert {"curves.svg", "profile.svg", "discriminants_tau0.6.svg",
            "interface_tau0.6_eps0.1.svg"} <= names


def test_plots_are_reproducible(run_dir, tmp_path):
    out = run_dir / "out"
    for d in ("a", "b"):
        assert cli.main(["plot", "--kind", "curves", "--out", str(out),
                         "--plot-dir", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "curves.svg").read_bytes() == (tmp_path / "b" / "curves.svg").read_bytes()


def test_unknown_plot_kind(run_dir, capsys):
    assert cli.main(["plot", "--kind", "nope", "--out", str(run_dir / "out")]) == 2
    assert "valid kinds" in capsys.readouterr().err


def test_plot_without_report(tmp_path):
    with pytest.raises(SystemExit, match="verify-all"):
        cli.main(["plot", "--kind", "curves", "--out", str(tmp_path)])


def test_solve_subcommand_uses_cache(run_dir, capsys):
    args = ["solve", "--config", str(run_dir / "light.ini"), "--out", str(run_dir / "out")]
    assert cli.main(args) == 0
    blocks = json.loads(capsys.readouterr().out)
    assert blocks[0]["solve"]["residual_norm"] <= 1e-9
