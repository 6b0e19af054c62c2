import pytest

from cahn_delaunay import config


def test_defaults_are_valid_and_roundtrip():
    d = config.defaults()
    assert d.tau_list == [0.6] and d["solver"]["order"] == 4
    back = config.parse(config.dump(d))
    assert back.sections == d.sections
    assert back.digest() == d.digest()


def test_empty_text_gives_defaults():
    assert config.parse("").sections == config.defaults().sections


def test_values_are_typed():
    cfg = config.parse("[run]\ntau_list = 0.4, 0.6\ncache = no\n[solver]\nmax_iter = 7\n")
    assert cfg.tau_list == [0.4, 0.6]
    assert cfg["run"]["cache"] is False
    assert cfg["solver"]["max_iter"] == 7


def test_empty_list_is_allowed():
    assert config.parse("[run]\nepsilon_list =\n").epsilon_list == []


def test_digest_depends_only_on_named_sections():
    a = config.parse("[solver]\nmax_iter = 7\n")
    b = config.defaults()
    assert a.digest("geometry") == b.digest("geometry")
    assert a.digest("solver") != b.digest("solver")


@pytest.mark.parametrize("text,line,fragment", [
    ("[run]\n\ntau_list = 1.5\n", 3, "outside (0, 1)"),
    ("[run]\ncache = maybe\n", 2, "boolean"),
    ("[solver]\norder = 3\n", 2, "one of"),
    ("[solver]\ncells_per_eps = 4\n", 2, "at least"),
    ("[nonsense]\nx = 1\n", 1, "unknown section"),
    ("[bloch]\nm_max = 4\nzeta = 1\n", 3, "unknown key 'zeta'"),
    ("[hill]\nn_max = two\n", 2, "cannot parse"),
])
def test_errors_name_line(text, line, fragment):
    with pytest.raises(config.ConfigError) as exc:
        config.parse(text, "run.ini")
    assert exc.value.line == line
    assert f"run.ini:{line}:" in str(exc.value)
    assert fragment in str(exc.value)


def test_malformed_ini():
    with pytest.raises(config.ConfigError):
        config.parse("tau_list = 0.5\n")


def test_load_from_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[geometry]\node_tolerance = 1e-11\n")
    cfg = config.load(p)
    assert cfg["geometry"]["ode_tolerance"] == 1e-11
    assert cfg.source == str(p)
