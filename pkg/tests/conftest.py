import pytest

from core.charge_kinetics import ChargePopulations
from core.config import build_kinetics, build_readout, build_spin_system, resolve_config
from core.qnd import QNDExecutor, ReadoutModel


@pytest.fixture(autouse=True)
def _no_user_config(monkeypatch):
    monkeypatch.delenv("NVSIM_CONFIG", raising=False)


@pytest.fixture
def config():
    return resolve_config(environ={})


@pytest.fixture
def n15_system(config):
    return build_spin_system(config)


@pytest.fixture
def n14_system(config):
    return build_spin_system(config.with_overrides({"spin.isotope": "N14"}))


@pytest.fixture
def kinetics(config):
    return build_kinetics(config)


@pytest.fixture
def readout(config):
    return build_readout(config)


@pytest.fixture
def polarized_kinetics(config):
    """Default kinetics with every bright shot in m_S = 0"""
    return build_kinetics(config.with_overrides({"kinetics.spin_polarization": 1.0}))


@pytest.fixture
def frozen_bright(n15_system, polarized_kinetics):
    """Executor that starts every shot bright and resonant, with a perfect readout"""
    return QNDExecutor(n15_system, polarized_kinetics, ReadoutModel(1.0), ChargePopulations.bright())
