"""Run configuration: shipped defaults, user file, then command-line overrides."""
import copy
import json
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from core.charge_kinetics import ChargeKinetics, RateLaw
from core.errors import ConfigError, NVSimError
from core.qnd import ReadoutMode, ReadoutModel
from core.spin_levels import Isotope, IsotopeKind, Manifold, ManifoldKind, SpinSystem

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "nvsim_defaults.json"
CONFIG_ENV_VAR = "NVSIM_CONFIG"

_ISOTOPE_SPIN = {"N14": Fraction(1), "N15": Fraction(1, 2)}


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")


def deep_merge(base, update):
    """Recursively merge `update` into a copy of `base`"""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_overrides(data, overrides):
    """Set dotted keys such as 'spin.field_T' on a nested dict copy"""
    data = copy.deepcopy(data)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {dotted}: {key} is not a section")
        node[leaf] = value
    return data


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration; `values` is the nested mapping written to manifests"""
    values: dict = field(default_factory=dict)
    source: str = "defaults"

    def get(self, dotted, default=None):
        node = self.values
        for key in dotted.split("."):
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def require(self, dotted):
        value = self.get(dotted)
        if value is None:
            raise ConfigError(f"missing config key: {dotted}")
        return value

    @property
    def seed(self):
        return int(self.require("simulation.seed"))

    @property
    def n_shots(self):
        return int(self.require("simulation.n_shots"))

    @property
    def workers(self):
        return int(self.get("simulation.workers", 1))

    def with_overrides(self, overrides):
        return RunConfig(apply_overrides(self.values, overrides), self.source)

    def to_dict(self):
        return copy.deepcopy(self.values)

    @classmethod
    def from_dict(cls, values, source="manifest"):
        return cls(copy.deepcopy(values), source)


def resolve_config(path=None, overrides=None, environ=None):
    """Defaults < file (--config or $NVSIM_CONFIG) < flag overrides"""
    environ = os.environ if environ is None else environ
    values = _read_json(DEFAULT_CONFIG_PATH)
    source = "defaults"
    path = path or environ.get(CONFIG_ENV_VAR)
    if path:
        values = deep_merge(values, _read_json(path))
        source = str(path)
        logger.info("loaded config file %s", path)
    config = RunConfig(values, source)
    if overrides:
        config = config.with_overrides(overrides)
    validate(config)
    return config


def validate(config):
    """Build every model once so bad constants fail before any run starts"""
    try:
        build_spin_system(config)
        build_kinetics(config)
        build_readout(config)
    except ConfigError:
        raise
    except (NVSimError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}")
    if config.n_shots < 1:
        raise ConfigError("simulation.n_shots must be >= 1")
    if config.workers < 1:
        raise ConfigError("simulation.workers must be >= 1")


def build_isotope(config):
    name = config.require("spin.isotope")
    if name not in _ISOTOPE_SPIN:
        raise ConfigError(f"unknown isotope {name!r} (expected N14 or N15)")
    constants = config.require(f"spin.isotopes.{name}")
    return Isotope(
        IsotopeKind(name),
        _ISOTOPE_SPIN[name],
        float(constants["gamma_MHz_per_T"]),
        float(constants.get("quadrupole_MHz", 0.0)),
    )


def build_spin_system(config):
    isotope = build_isotope(config)
    name = isotope.kind.value
    mu = Fraction(str(config.require("spin.dark_projection")))
    product = float(config.require(f"spin.isotopes.{name}.dark_hyperfine_product_MHz"))
    bright = config.require("spin.manifolds.bright")
    dark = config.require("spin.manifolds.dark")
    manifolds = (
        Manifold(ManifoldKind.BRIGHT_MS0, Fraction(0), 0.0, float(bright["T1_s"]), float(bright["T2_s"])),
        Manifold(ManifoldKind.DARK, mu, product / float(mu), float(dark["T1_s"]), float(dark["T2_s"])),
    )
    return SpinSystem(
        isotope,
        float(config.require("spin.field_T")),
        manifolds,
        float(config.require("spin.polarization_threshold_T")),
    )


def _law(section):
    return RateLaw(float(section["k_MHz_per_mW"]), float(section["P_sat_mW"]))


def build_kinetics(config):
    kin = config.require("kinetics")
    return ChargeKinetics(
        red_bright_to_dark=_law(kin["red_bright_to_dark"]),
        green_bright_to_dark=_law(kin["green_bright_to_dark"]),
        green_dark_to_bright=_law(kin["green_dark_to_bright"]),
        red_dark_to_bright=_law(kin["red_dark_to_bright"]),
        misalignment_eta=float(kin["misalignment_eta"]),
        spin_polarization=float(kin["spin_polarization"]),
        red_reference_power=float(kin["red_reference_power_mW"]),
        green_reference_power=float(kin["green_reference_power_mW"]),
    )


def build_readout(config):
    section = config.require("readout")
    mode = ReadoutMode(section.get("mode", "bernoulli"))
    if mode is ReadoutMode.BERNOULLI:
        return ReadoutModel(float(section["fidelity"]))
    return ReadoutModel(
        float(section["fidelity"]),
        mode,
        n_repetitions=int(section["n_repetitions"]),
        mean_counts_0=float(section["mean_counts_0"]),
        mean_counts_1=float(section["mean_counts_1"]),
        threshold=int(section["threshold"]),
    )


def dark_linewidth_kHz(config):
    return float(config.get("spin.manifolds.dark.linewidth_fwhm_kHz", 33.0))
