import json

import pytest

from core.config import (
    CONFIG_ENV_VAR, RunConfig, build_kinetics, build_readout, build_spin_system, deep_merge, resolve_config,
)
from core.errors import ConfigError
from core.qnd import ReadoutMode
from core.spin_levels import IsotopeKind


def _write(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_defaults(config):
    assert config.source == "defaults"
    assert config.seed == 20110101
    assert config.n_shots == 1000
    assert config.get("spin.isotope") == "N15"
    assert config.get("spin.nope", "fallback") == "fallback"


def test_file_overrides_defaults_and_flags_override_file(tmp_path):
    path = _write(tmp_path / "run.json", {"spin": {"field_T": 0.3}, "simulation": {"seed": 1}})
    config = resolve_config(path, {"simulation.seed": 2, "readout.fidelity": None}, environ={})
    assert config.get("spin.field_T") == 0.3
    assert config.get("spin.isotope") == "N15"
    assert config.seed == 2
    assert config.get("readout.fidelity") == 0.98
    assert config.source == str(path)


def test_environment_variable_names_the_file(tmp_path):
    path = _write(tmp_path / "env.json", {"simulation": {"n_shots": 7}})
    config = resolve_config(environ={CONFIG_ENV_VAR: str(path)})
    assert config.n_shots == 7


def test_explicit_path_wins_over_environment(tmp_path):
    env = _write(tmp_path / "env.json", {"simulation": {"n_shots": 7}})
    cli = _write(tmp_path / "cli.json", {"simulation": {"n_shots": 9}})
    assert resolve_config(cli, environ={CONFIG_ENV_VAR: str(env)}).n_shots == 9


@pytest.mark.parametrize("overrides", [
    {"spin.isotope": "C13"},
    {"readout.fidelity": 0.4},
    {"kinetics.misalignment_eta": 0.0},
    {"simulation.n_shots": 0},
    {"simulation.workers": 0},
    {"spin.field_T": -1.0},
])
def test_invalid_values_are_config_errors(overrides):
    with pytest.raises(ConfigError):
        resolve_config(overrides=overrides, environ={})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        resolve_config(tmp_path / "absent.json", environ={})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        resolve_config(bad, environ={})


def test_manifest_round_trip(config):
    rebuilt = RunConfig.from_dict(config.to_dict())
    assert rebuilt.values == config.values
    assert rebuilt.source == "manifest"
    rebuilt.values["spin"]["field_T"] = 0.1
    assert config.get("spin.field_T") == 0.6


def test_deep_merge_keeps_siblings():
    merged = deep_merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}})
    assert merged == {"a": {"b": 1, "c": 3}}


def test_builders(config):
    system = build_spin_system(config)
    assert system.isotope.kind is IsotopeKind.N15
    assert system.polarized_dark.hyperfine_shift == pytest.approx(-4.242)
    assert build_kinetics(config).spin_polarization == 0.92
    assert build_readout(config).mode is ReadoutMode.BERNOULLI
    counting = build_readout(config.with_overrides({"readout.mode": "photon_counting"}))
    assert 0.5 < counting.implied_fidelity() <= 1.0
