"""
Configuration for the ion-saturation commands.

Defaults ship with the package (data/defaults.json). A user JSON file is merged
over them section by section; unknown keys are rejected and every value is
checked against the invariants of the module that consumes it.
"""
import copy
import json
import logging
import math
from dataclasses import MISSING, asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import ConfigError, InvalidInputError, NoSolutionError
from .mirror import MirrorGeometry
from .tls import AtomicTransition

logger = logging.getLogger(__name__)

OPTIMIZE = "optimize"
COMPUTE = "compute"
SCAN_AXES = ("xy", "z")


def _number(field: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(field, f"must be finite, got {value!r}")
    return float(value)


def _integer(field: str, value: Any, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(field, f"must be >= {minimum}, got {value}")
    return value


def _positive(field: str, value: Any) -> float:
    number = _number(field, value)
    if not number > 0:
        raise ConfigError(field, f"must be positive, got {number}")
    return number


def _fraction(field: str, value: Any) -> float:
    number = _number(field, value)
    if not 0 <= number <= 1:
        raise ConfigError(field, f"must be in [0, 1], got {number}")
    return number


def _flag(field: str, value: Any) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(field, f"expected true or false, got {value!r}")
    return value


@dataclass(frozen=True)
class TransitionConfig:
    wavelength_m: float
    linewidth_hz: float
    multiplicity: float
    detuning_delta: float

    def validate(self) -> None:
        _positive("transition.wavelength_m", self.wavelength_m)
        _positive("transition.linewidth_hz", self.linewidth_hz)
        if _number("transition.multiplicity", self.multiplicity) < 1:
            raise ConfigError("transition.multiplicity", "must be >= 1")
        _number("transition.detuning_delta", self.detuning_delta)

    def build(self) -> AtomicTransition:
        return AtomicTransition.from_linewidth(
            self.wavelength_m, self.linewidth_hz, self.multiplicity
        )


@dataclass(frozen=True)
class MirrorConfig:
    focal_length_m: float
    reflectivity: float
    theta_max_rad: float
    omega: float | None = None
    theta_min_rad: float | None = None

    def validate(self) -> None:
        _positive("mirror.focal_length_m", self.focal_length_m)
        _fraction("mirror.reflectivity", self.reflectivity)
        _positive("mirror.theta_max_rad", self.theta_max_rad)
        if (self.omega is None) == (self.theta_min_rad is None):
            raise ConfigError("mirror", "give exactly one of omega or theta_min_rad")
        if self.omega is not None:
            _fraction("mirror.omega", self.omega)
        else:
            _number("mirror.theta_min_rad", self.theta_min_rad)
        self.build()

    def build(self) -> MirrorGeometry:
        try:
            if self.omega is not None:
                return MirrorGeometry.from_omega(
                    self.focal_length_m,
                    self.omega,
                    self.theta_max_rad,
                    self.reflectivity,
                )
            return MirrorGeometry(
                self.focal_length_m,
                self.theta_min_rad,
                self.theta_max_rad,
                self.reflectivity,
            )
        except (InvalidInputError, NoSolutionError) as e:
            raise ConfigError("mirror", str(e)) from e


@dataclass(frozen=True)
class BeamConfig:
    waist_m: float | str

    def validate(self) -> None:
        if self.waist_m != OPTIMIZE:
            _positive("beam.waist_m", self.waist_m)


@dataclass(frozen=True)
class BudgetConfig:
    eta: float | str
    strehl: float
    loss: float

    def validate(self) -> None:
        if self.eta != COMPUTE:
            _fraction("budget.eta", self.eta)
        if not 0 < _fraction("budget.strehl", self.strehl):
            raise ConfigError("budget.strehl", "must be positive")
        _fraction("budget.loss", self.loss)


@dataclass(frozen=True)
class FitConfig:
    float_offset: bool
    power_sigma_at_ion_pW: float

    def validate(self) -> None:
        _flag("fit.float_offset", self.float_offset)
        if _number("fit.power_sigma_at_ion_pW", self.power_sigma_at_ion_pW) < 0:
            raise ConfigError("fit.power_sigma_at_ion_pW", "must be non-negative")


@dataclass(frozen=True)
class ScanConfig:
    pitch_m: float
    nx: int
    ny: int
    axis: str
    probe_count: int
    probe_min_factor: float
    probe_max_factor: float
    p_quarter_peak_pW: float
    asymptote_cps: float
    duration_s: float
    background_cps: float
    blur_sigma_m: float
    noiseless: bool
    seed: int
    workers: int
    ion_mass_u: float
    trap_frequency_hz: float

    def validate(self) -> None:
        _positive("scan.pitch_m", self.pitch_m)
        _integer("scan.nx", self.nx, 1)
        _integer("scan.ny", self.ny, 1)
        if self.axis not in SCAN_AXES:
            raise ConfigError("scan.axis", f"must be one of {SCAN_AXES}, got {self.axis!r}")
        _integer("scan.probe_count", self.probe_count, 4)
        low = _positive("scan.probe_min_factor", self.probe_min_factor)
        if not _positive("scan.probe_max_factor", self.probe_max_factor) > low:
            raise ConfigError("scan.probe_max_factor", "must exceed probe_min_factor")
        _positive("scan.p_quarter_peak_pW", self.p_quarter_peak_pW)
        _positive("scan.asymptote_cps", self.asymptote_cps)
        _positive("scan.duration_s", self.duration_s)
        if _number("scan.background_cps", self.background_cps) < 0:
            raise ConfigError("scan.background_cps", "must be non-negative")
        if _number("scan.blur_sigma_m", self.blur_sigma_m) < 0:
            raise ConfigError("scan.blur_sigma_m", "must be non-negative")
        _flag("scan.noiseless", self.noiseless)
        _integer("scan.seed", self.seed, 0)
        _integer("scan.workers", self.workers, 1)
        _positive("scan.ion_mass_u", self.ion_mass_u)
        _positive("scan.trap_frequency_hz", self.trap_frequency_hz)


SECTIONS: dict[str, type] = {
    "transition": TransitionConfig,
    "mirror": MirrorConfig,
    "beam": BeamConfig,
    "budget": BudgetConfig,
    "fit": FitConfig,
    "scan": ScanConfig,
}

# setting either of these in an override drops the other from the defaults
MIRROR_ALTERNATIVES = ("omega", "theta_min_rad")


@dataclass(frozen=True)
class Config:
    """Resolved configuration, one frozen dataclass per section."""

    transition: TransitionConfig
    mirror: MirrorConfig
    beam: BeamConfig
    budget: BudgetConfig
    fit: FitConfig
    scan: ScanConfig

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(unknown[0], "unknown section")
        sections = {}
        for name, section_cls in SECTIONS.items():
            values = data.get(name)
            if not isinstance(values, dict):
                raise ConfigError(name, "missing or not an object")
            known = {f.name: f for f in fields(section_cls)}
            for key in values:
                if key not in known:
                    raise ConfigError(f"{name}.{key}", "unknown key")
            for key, f in known.items():
                if key not in values and f.default is MISSING:
                    raise ConfigError(f"{name}.{key}", "missing")
            section = section_cls(**values)
            section.validate()
            sections[name] = section
        return cls(**sections)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def get(self, dotted: str, default: Any = None) -> Any:
        """Look up 'section.key'; missing keys yield the default."""
        section, _, key = dotted.partition(".")
        values = self.to_dict().get(section)
        if values is None:
            return default
        if not key:
            return values
        return values.get(key, default)

    def with_overrides(self, overrides: dict[str, Any]) -> "Config":
        """A new validated Config with dotted keys replaced."""
        data = self.to_dict()
        nested: dict[str, dict[str, Any]] = {}
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if not key:
                raise ConfigError(dotted, "override needs a section.key name")
            nested.setdefault(section, {})[key] = value
        return Config.from_dict(merge_config(data, nested))


def merge_config(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Merge override sections over base, key by key."""
    merged = copy.deepcopy(base)
    for section, values in override.items():
        if not isinstance(values, dict) or not isinstance(merged.get(section), dict):
            merged[section] = copy.deepcopy(values)
            continue
        target = merged[section]
        if section == "mirror":
            chosen = [k for k in MIRROR_ALTERNATIVES if k in values]
            if len(chosen) == 1:
                for k in MIRROR_ALTERNATIVES:
                    target.pop(k, None)
        target.update(copy.deepcopy(values))
    return merged


def default_config_dict() -> dict[str, Any]:
    text = resources.files("ion_saturation").joinpath("data/defaults.json").read_text()
    return json.loads(text)


def load_config(path: str | Path | None = None) -> Config:
    """
    Load the defaults, merged with a user JSON file when given.

    Args:
        path: Optional user configuration file

    Returns:
        The validated Config

    Raises:
        ConfigError: On unreadable JSON, unknown keys or invalid values
    """
    data = default_config_dict()
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except OSError as e:
            raise ConfigError("<file>", f"cannot read {path}: {e.strerror}") from e
        except json.JSONDecodeError as e:
            raise ConfigError("<file>", f"invalid JSON at line {e.lineno}: {e.msg}") from e
        if not isinstance(user, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        logger.debug(f"Merging user configuration from {path}")
        data = merge_config(data, user)
    return Config.from_dict(data)
