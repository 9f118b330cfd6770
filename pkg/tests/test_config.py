import textwrap

import pytest

from rvdecay.config import load_config, parse_config
from rvdecay.errors import ConfigError
from rvdecay.nonlinearity import Family
from rvdecay.perturbations import Oscillating, PowerDecay, PowerDecayNoise


def cfg(text):
    return parse_config(textwrap.dedent(text))


def test_defaults():
    c = cfg("[model]\nbeta = 3.0\n")
    assert c.model.family is Family.PURE_POWER and c.model.beta == 3.0
    assert c.run_kind == "ode" and c.xi == [1.0] and c.T == 1e4
    assert c.tolerances.tol_mean == 0.1 and c.tolerances.points_per_decade == 64
    assert c.seed is None


def test_forcing_and_noise_built():
    c = cfg(
        """
        [forcing]
        kind = "power_decay"
        c = 2.0
        p = 3.0
        [noise]
        kind = "power_decay"
        gamma = 2.5
        """
    )
    assert isinstance(c.forcing(), PowerDecay) and isinstance(c.noise(), PowerDecayNoise)
    osc = cfg('[forcing]\nkind = "oscillating"\ngamma = "1+t"\nn = 3\n').forcing()
    assert isinstance(osc, Oscillating)


def test_sha_is_of_source_text():
    a = cfg("[model]\nbeta = 3.0\n")
    b = cfg("[model]\nbeta = 3.0\n# comment\n")
    assert a.sha256 != b.sha256 and len(a.sha256) == 64


@pytest.mark.parametrize(
    "text,line,field",
    [
        ("[model]\nbeta = 3.0\nbogus = 1\n", 3, "model.bogus"),
        ("[model]\nbeta = 3.0\n[nonsense]\nx = 1\n", 3, "nonsense"),
        ("[model]\nbeta = 0.5\n", 1, "model"),
        ("[run]\nT = -1\n", 2, "run.T"),
        ("[run]\nkind = \"pde\"\n", 2, "run.kind"),
        ("[run]\npaths = 2.5\n", 2, "run.paths"),
        ("[run]\nxi = [1, \"a\"]\n", 2, "run.xi"),
        ("[model]\nbeta=3.0\n\n[forcing]\nkind = \"wiggly\"\n", 5, "forcing.kind"),
        ("[run]\nkind = \"sde\"\nseed = 1\n", None, "noise"),
        ("[run]\nkind = \"sde\"\nseed = -3\n", 3, "run.seed"),
        ("[noise]\nkind=\"power_decay\"\ngamma=1.0\n[run]\nkind = \"sde\"\nT = 10.005\n", 6, "run.T"),
        ("[noise]\nkind=\"power_decay\"\ngamma=1.0\n[run]\nkind = \"sde\"\nh = [0.5]\n", 6, "run.h"),
    ],
)
def test_errors_point_at_field(text, line, field):
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.field == field
    if line is not None:
        assert f"line {line}:" in str(ei.value)


def test_toml_syntax_error():
    with pytest.raises(ConfigError, match="TOML syntax"):
        parse_config("[model\nbeta = 3")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")


def test_relative_table_path(tmp_path):
    (tmp_path / "g.csv").write_text("t,g\n0,1\n1,0.5\n2,0.25\n")
    (tmp_path / "c.toml").write_text('[forcing]\nkind = "sampled"\nfile = "g.csv"\n')
    g = load_config(tmp_path / "c.toml").forcing()
    assert g(1.0) == pytest.approx(0.5)
    (tmp_path / "d.toml").write_text('[forcing]\nkind = "sampled"\nfile = "missing.csv"\n')
    with pytest.raises(ConfigError, match="file not found"):
        load_config(tmp_path / "d.toml")


@pytest.mark.parametrize("name", ["ode_unperturbed", "ode_power_decay", "ode_oscillating", "ode_internal",
                                  "sde_baseline", "criteria_divergent", "construct_spikes", "sweep"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    load_config(Path(__file__).parent.parent / "configs" / f"{name}.toml")
